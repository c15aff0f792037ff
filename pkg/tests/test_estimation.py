"""Marginal estimators and history corruption.

The exact enumeration route is the oracle for both Monte-Carlo routes; the
corruption tests check the closed-form mixing against brute force and the
sampled corruption against its binomial law.
"""

import numpy as np
import pytest

from seqbias.dist import Vocab, total_variation
from seqbias.errors import DimensionMismatchError, EnumerationCapError
from seqbias.estimation import (
    HistorySource,
    corrupt_histories,
    estimate_marginal_averaged,
    estimate_marginal_counted,
    exact_marginal,
    exact_prefix_distribution,
)
from seqbias.models import TabularMarkovModel, enumerate_prefixes
from seqbias.rng import stream

V3 = Vocab.synthetic(3)


def random_tabular(seed=0, V=3, L=4):
    return TabularMarkovModel.random(Vocab.synthetic(V), L, None, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# Counted and averaged estimators against exact enumeration
# ---------------------------------------------------------------------------


def test_counted_histogram_hand_case():
    X = np.array([[0, 1], [0, 2], [1, 1], [0, 1]])
    est = estimate_marginal_counted(X, 1, 3)
    np.testing.assert_allclose(est.dist, [0.0, 0.75, 0.25], atol=0)
    assert est.estimator == "counted"
    assert est.n_samples == 4


def test_counted_rejects_bad_input():
    with pytest.raises(ValueError):
        estimate_marginal_counted(np.zeros((0, 2), dtype=np.int64), 0, 3)
    with pytest.raises(ValueError):
        estimate_marginal_counted(np.zeros((5, 2), dtype=np.int64), 2, 3)


def test_exact_marginal_matches_enumeration_of_next_position():
    model = random_tabular(seed=1)
    for l in range(3):
        est = exact_marginal(model, model, l)
        # independent route: enumerate length l+1 and sum out the prefix
        tokens, probs = enumerate_prefixes(model, l + 1)
        direct = np.zeros(3)
        np.add.at(direct, tokens[:, -1], probs)
        np.testing.assert_allclose(est.dist, direct, atol=1e-12)
        assert est.dist.sum() == pytest.approx(1.0, abs=1e-12)


def test_counted_converges_to_exact():
    model = random_tabular(seed=2)
    exact = exact_marginal(model, model, 2).dist
    X = model.sample_sequences(100_000, np.random.default_rng(3))
    counted = estimate_marginal_counted(X, 2, 3).dist
    assert total_variation(counted, exact) < 0.01


def test_averaged_matches_exact_mixture():
    # averaging conditionals over ALL prefixes weighted empirically converges;
    # with the full enumerated prefix set the equality is algebraic
    model = random_tabular(seed=4)
    tokens, probs = enumerate_prefixes(model, 2)
    # draw 50k histories, averaged conditional close to exact marginal
    H = model.sample_prefixes(50_000, 2, np.random.default_rng(5))
    est = estimate_marginal_averaged(model, H)
    exact = exact_marginal(model, model, 2).dist
    assert total_variation(est.dist, exact) < 0.01
    assert est.estimator == "averaged"


def test_averaged_beats_counting_at_equal_sample_size():
    # Rao-Blackwellization: averaging exact conditionals only has history
    # noise, counting adds next-token noise on top
    model = random_tabular(seed=6)
    exact = exact_marginal(model, model, 2).dist
    err_avg, err_cnt = [], []
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        X = model.sample_sequences(2000, rng)
        err_cnt.append(total_variation(estimate_marginal_counted(X, 2, 3).dist, exact))
        err_avg.append(total_variation(estimate_marginal_averaged(model, X[:, :2]).dist, exact))
    assert np.mean(err_avg) < np.mean(err_cnt)


def test_averaged_rejects_overlong_histories():
    model = random_tabular(seed=7)
    with pytest.raises(DimensionMismatchError):
        estimate_marginal_averaged(model, np.zeros((5, 4), dtype=np.int64))


# ---------------------------------------------------------------------------
# Corruption
# ---------------------------------------------------------------------------


def test_corrupt_rate_zero_is_identity():
    H = np.random.default_rng(8).integers(0, 5, size=(100, 6))
    out = corrupt_histories(H, 0.0, np.random.default_rng(9), 5)
    np.testing.assert_array_equal(out, H)
    assert out is not H  # caller owns a copy


def test_corrupt_rate_one_is_iid_uniform():
    H = np.zeros((100_000, 2), dtype=np.int64)
    out = corrupt_histories(H, 1.0, np.random.default_rng(10), 4)
    freq = np.bincount(out.ravel(), minlength=4) / out.size
    sigma = np.sqrt(0.25 * 0.75 / out.size)
    assert np.all(np.abs(freq - 0.25) < 4 * sigma)


def test_corrupt_changed_fraction_matches_binomial():
    # a position changes iff masked AND the replacement differs: c * (1 - 1/V)
    V, c, n = 5, 0.3, 100_000
    H = np.random.default_rng(11).integers(0, V, size=(n, 2))
    out = corrupt_histories(H, c, np.random.default_rng(12), V)
    changed = np.mean(out != H)
    expect = c * (1 - 1 / V)
    sigma = np.sqrt(expect * (1 - expect) / (2 * n))
    assert abs(changed - expect) < 4 * sigma


def test_corrupt_rejects_bad_rate():
    with pytest.raises(ValueError):
        corrupt_histories(np.zeros((2, 2), dtype=np.int64), 1.5, np.random.default_rng(0), 3)


def test_exact_corrupted_distribution_matches_brute_force():
    model = random_tabular(seed=13, V=3, L=3)
    c = 0.4
    tokens, probs = exact_prefix_distribution(model, 2, c)
    # brute force: P_corrupt(y) = sum_x P(x) * prod_j [c/V + (1-c)*1{y_j=x_j}]
    base = {tuple(t): p for t, p in zip(*enumerate_prefixes(model, 2))}
    got = {tuple(t): p for t, p in zip(tokens, probs)}
    for y0 in range(3):
        for y1 in range(3):
            expect = 0.0
            for (x0, x1), p in base.items():
                f0 = c / 3 + (1 - c) * (y0 == x0)
                f1 = c / 3 + (1 - c) * (y1 == x1)
                expect += p * f0 * f1
            assert got.get((y0, y1), 0.0) == pytest.approx(expect, abs=1e-12)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_exact_corruption_at_rate_one_is_uniform():
    model = random_tabular(seed=14, V=3, L=3)
    _, probs = exact_prefix_distribution(model, 2, 1.0)
    np.testing.assert_allclose(probs, np.full(9, 1 / 9), atol=1e-12)


def test_exact_marginal_with_corruption_matches_mc():
    model = random_tabular(seed=15, V=3, L=4)
    hist = random_tabular(seed=16, V=3, L=4)
    exact = exact_marginal(model, hist, 2, corrupt_rate=0.5).dist
    src = HistorySource("data-model", hist, corrupt_rate=0.5)
    H = src.draw(100_000, 2, np.random.default_rng(17), 3)
    mc = estimate_marginal_averaged(model, H).dist
    assert total_variation(mc, exact) < 0.01


def test_exact_corruption_respects_cap():
    model = TabularMarkovModel.random(Vocab.synthetic(4), 12, 1, np.random.default_rng(18))
    with pytest.raises(EnumerationCapError):
        exact_prefix_distribution(model, 11, 0.5, cap=10_000)


# ---------------------------------------------------------------------------
# History sources
# ---------------------------------------------------------------------------


def test_history_source_validation():
    model = random_tabular(seed=19)
    with pytest.raises(ValueError):
        HistorySource("nonsense", model)
    with pytest.raises(ValueError):
        HistorySource("model", None)
    with pytest.raises(ValueError):
        HistorySource("data-corpus", corpus=None)
    with pytest.raises(ValueError):
        HistorySource("model", model, corrupt_rate=2.0)


def test_model_source_draw_matches_sample_prefixes():
    model = random_tabular(seed=20)
    src = HistorySource("model", model)
    a = src.draw(200, 2, stream(5, "x"), 3)
    b = model.sample_prefixes(200, 2, stream(5, "x"))
    np.testing.assert_array_equal(a, b)


def test_corpus_source_draws_rows_with_replacement():
    corpus = np.arange(12).reshape(4, 3) % 3
    src = HistorySource("data-corpus", corpus=corpus)
    H = src.draw(50, 2, np.random.default_rng(21), 3)
    assert H.shape == (50, 2)
    rows = {tuple(r) for r in H.tolist()}
    assert rows <= {tuple(r[:2]) for r in corpus.tolist()}


def test_corpus_source_rejects_overlong_histories():
    src = HistorySource("data-corpus", corpus=np.zeros((3, 2), dtype=np.int64))
    with pytest.raises(ValueError):
        src.draw(5, 3, np.random.default_rng(22), 3)
