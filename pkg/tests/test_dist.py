"""Divergence and distribution-validation tests.

Scalar oracle values are frozen from hand derivations (natural logs):
  tv((0.9,0.1),(0.5,0.5))        = 0.4
  kl((0.75,0.25),(0.5,0.5))      = 0.75 ln 1.5 + 0.25 ln 0.5 = 0.13081203594113697
  js((1,0),(0.5,0.5))            = 0.5[ln(4/3) + 0.5 ln(2/3) + 0.5 ln 2]
                                 = 0.21576155433883565
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqbias.dist import (
    DIVERGENCE_ROWS,
    DIVERGENCES,
    METRIC_NAMES,
    Vocab,
    as_distribution,
    gd_rows,
    greedy_mismatch,
    jensen_shannon,
    js_rows,
    kl_divergence,
    total_variation,
    tv_rows,
)
from seqbias.errors import DimensionMismatchError

LN2 = 0.6931471805599453


def dist_vectors(size):
    """Strategy: probability vectors of the given size with no tiny entries."""
    return (
        st.lists(st.floats(0.01, 1.0), min_size=size, max_size=size)
        .map(lambda w: np.asarray(w) / np.sum(w))
    )


# ---------------------------------------------------------------------------
# Frozen scalar values
# ---------------------------------------------------------------------------


def test_total_variation_hand_value():
    assert total_variation([0.9, 0.1], [0.5, 0.5]) == pytest.approx(0.4, abs=1e-15)


def test_kl_hand_value():
    got = kl_divergence([0.75, 0.25], [0.5, 0.5])
    assert got == pytest.approx(0.13081203594113697, abs=1e-15)


def test_js_hand_value():
    got = jensen_shannon([1.0, 0.0], [0.5, 0.5])
    assert got == pytest.approx(0.21576155433883565, abs=1e-15)


def test_kl_infinite_on_support_violation():
    # q puts zero mass where p has some
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf


def test_js_disjoint_support_hits_ln2():
    assert jensen_shannon([1.0, 0.0], [0.0, 1.0]) == pytest.approx(LN2, abs=1e-15)


def test_greedy_mismatch_indicator():
    assert greedy_mismatch([0.9, 0.1], [0.1, 0.9]) == 1.0
    assert greedy_mismatch([0.9, 0.1], [0.6, 0.4]) == 0.0


def test_greedy_mismatch_tie_resolves_to_lowest_index():
    # argmax of a tie is index 0 on both sides: no mismatch
    assert greedy_mismatch([0.5, 0.5], [0.6, 0.4]) == 0.0
    # tie on one side only, other side prefers index 1
    assert greedy_mismatch([0.5, 0.5], [0.4, 0.6]) == 1.0


def test_metric_registry_names():
    assert METRIC_NAMES == ("tv", "js", "gd")
    assert set(DIVERGENCES) == set(DIVERGENCE_ROWS) == {"tv", "js", "gd"}


# ---------------------------------------------------------------------------
# Batched rows agree with the scalar functions
# ---------------------------------------------------------------------------


def test_row_helpers_match_scalar_loops():
    rng = np.random.default_rng(7)
    P = rng.dirichlet(np.ones(5), size=40)
    Q = rng.dirichlet(np.ones(5), size=40)
    for rows_fn, scalar_fn in ((tv_rows, total_variation), (js_rows, jensen_shannon), (gd_rows, greedy_mismatch)):
        batched = rows_fn(P, Q)
        looped = np.array([scalar_fn(p, q) for p, q in zip(P, Q)])
        np.testing.assert_allclose(batched, looped, rtol=0, atol=1e-14)


def test_js_rows_handles_zero_entries():
    P = np.array([[1.0, 0.0], [0.0, 1.0]])
    Q = np.array([[0.5, 0.5], [0.0, 1.0]])
    vals = js_rows(P, Q)
    assert vals[0] == pytest.approx(0.21576155433883565, abs=1e-15)
    assert vals[1] == 0.0


# ---------------------------------------------------------------------------
# Metric properties
# ---------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(dist_vectors(4), dist_vectors(4))
def test_symmetry_and_bounds(p, q):
    tv = total_variation(p, q)
    js = jensen_shannon(p, q)
    assert tv == pytest.approx(total_variation(q, p), abs=1e-15)
    assert js == pytest.approx(jensen_shannon(q, p), abs=1e-12)
    assert 0.0 <= tv <= 1.0
    assert -1e-12 <= js <= LN2 + 1e-12
    assert greedy_mismatch(p, q) == greedy_mismatch(q, p)


@settings(max_examples=60, deadline=None)
@given(dist_vectors(4))
def test_self_distance_is_zero(p):
    assert total_variation(p, p) == 0.0
    assert jensen_shannon(p, p) == pytest.approx(0.0, abs=1e-15)
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)
    assert greedy_mismatch(p, p) == 0.0


@settings(max_examples=60, deadline=None)
@given(dist_vectors(4), dist_vectors(4))
def test_kl_nonnegative(p, q):
    assert kl_divergence(p, q) >= -1e-12


@settings(max_examples=60, deadline=None)
@given(dist_vectors(4), dist_vectors(4), dist_vectors(4))
def test_tv_triangle_inequality(p, q, r):
    assert total_variation(p, r) <= total_variation(p, q) + total_variation(q, r) + 1e-12


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def test_as_distribution_accepts_valid():
    p = as_distribution([0.25, 0.25, 0.5])
    assert p.dtype == np.float64
    np.testing.assert_array_equal(p, [0.25, 0.25, 0.5])


def test_as_distribution_rejects_bad_inputs():
    with pytest.raises(ValueError):
        as_distribution([0.6, 0.6])  # sums to 1.2
    with pytest.raises(ValueError):
        as_distribution([-0.1, 1.1])
    with pytest.raises(DimensionMismatchError):
        as_distribution([[0.5, 0.5]])
    with pytest.raises(DimensionMismatchError):
        as_distribution([0.5, 0.5], size=3)


def test_shape_mismatch_raises():
    with pytest.raises(DimensionMismatchError):
        total_variation([0.5, 0.5], [0.2, 0.3, 0.5])
    with pytest.raises(DimensionMismatchError):
        jensen_shannon([1.0], [0.5, 0.5])


def test_vocab_invariants():
    v = Vocab(("a", "b", "c"))
    assert v.size == 3
    assert v.index("b") == 1
    with pytest.raises(ValueError):
        Vocab(("only",))
    with pytest.raises(ValueError):
        Vocab(("x", "x"))


def test_vocab_synthetic_and_from_lines():
    v = Vocab.synthetic(4)
    assert v.tokens == ("w0", "w1", "w2", "w3")
    w = Vocab.from_lines("alpha\n\n beta \ngamma\n")
    assert w.tokens == ("alpha", "beta", "gamma")
