"""Estimators for the marginal distribution of the token at position l+1.

Three routes: sample-and-count over sequences, averaging of exact model
conditionals over sampled histories (the Rao-Blackwellized form), and exact
enumeration. History corruption replaces each position independently with a
uniform vocabulary draw at a configured rate.

Determinism contract: for a fixed seed and sample count every estimate is
bit-identical regardless of available parallelism, because accumulation walks
fixed-size row chunks in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, EnumerationCapError
from .models import ENUMERATION_CAP, ROW_CHUNK, SequenceModel, enumerate_prefixes

HISTORY_KINDS = ("model", "data-model", "data-corpus")


@dataclass
class MarginalEstimate:
    l: int
    dist: np.ndarray
    n_samples: int | None
    estimator: str  # counted | averaged | exact


@dataclass
class HistorySource:
    """Where histories W_{1:l} come from: a queryable model or corpus rows.

    ``corrupt_rate`` perturbs drawn histories (never corpus storage): each
    position is independently replaced, with that probability, by a uniform
    draw over the full vocabulary, original token included.
    """

    kind: str
    model: SequenceModel | None = None
    corpus: np.ndarray | None = None
    corrupt_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in HISTORY_KINDS:
            raise ValueError(f"unknown history source kind {self.kind!r}")
        if not (0.0 <= self.corrupt_rate <= 1.0):
            raise ValueError("corrupt_rate must lie in [0, 1]")
        if self.kind == "data-corpus":
            if self.corpus is None:
                raise ValueError("data-corpus source needs corpus sequences")
            self.corpus = np.asarray(self.corpus, dtype=np.int64)
            if self.corpus.ndim != 2 or self.corpus.shape[0] == 0:
                raise ValueError("corpus must be a non-empty (n, length) token matrix")
        elif self.model is None:
            raise ValueError(f"{self.kind} source needs a backing model")

    @property
    def vocab_size(self) -> int:
        return self.model.vocab.size if self.model is not None else int(self.corpus.max()) + 1

    def draw(self, n: int, l: int, rng: np.random.Generator, vocab_size: int) -> np.ndarray:
        """n histories of length l; corruption applied after drawing."""
        if self.kind == "data-corpus":
            if l > self.corpus.shape[1]:
                raise ValueError(
                    f"corpus rows have length {self.corpus.shape[1]}, cannot give histories of length {l}"
                )
            rows = rng.integers(0, self.corpus.shape[0], size=n)
            H = self.corpus[rows, :l]
        else:
            H = self.model.sample_prefixes(n, l, rng)
        if self.corrupt_rate > 0.0:
            H = corrupt_histories(H, self.corrupt_rate, rng, vocab_size)
        return H


def corrupt_histories(
    histories: np.ndarray, c: float, rng: np.random.Generator, vocab_size: int
) -> np.ndarray:
    """Independently replace each position with probability c by a uniform
    token (the original token is a legal replacement). Draw order is fixed:
    all mask uniforms first, then all replacement tokens."""
    if not (0.0 <= c <= 1.0):
        raise ValueError("corruption rate must lie in [0, 1]")
    H = np.asarray(histories, dtype=np.int64)
    if c == 0.0 or H.size == 0:
        return H.copy()
    mask = rng.random(H.shape) < c
    noise = rng.integers(0, vocab_size, size=H.shape)
    return np.where(mask, noise, H)


def corrupt_history(history, c: float, rng: np.random.Generator, vocab_size: int) -> np.ndarray:
    h = np.asarray(history, dtype=np.int64).reshape(1, -1)
    return corrupt_histories(h, c, rng, vocab_size)[0]


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def estimate_marginal_counted(samples, l: int, vocab_size: int) -> MarginalEstimate:
    """Normalized histogram of the token at position l+1 (0-based column l)."""
    X = np.asarray(samples, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty (n, length) sample matrix")
    if l >= X.shape[1]:
        raise ValueError(f"samples of length {X.shape[1]} have no position {l + 1}")
    counts = np.bincount(X[:, l], minlength=vocab_size).astype(np.float64)
    return MarginalEstimate(l, counts / X.shape[0], X.shape[0], "counted")


def averaged_conditional(model: SequenceModel, histories: np.ndarray) -> np.ndarray:
    """Chunk-accumulated mean of model conditionals over the given histories.

    The chunk walk (size ROW_CHUNK, in order) defines the canonical summation
    order; any re-computation of the same mean must reproduce it bitwise.
    """
    H = np.asarray(histories, dtype=np.int64)
    n = H.shape[0]
    acc = np.zeros(model.vocab.size, dtype=np.float64)
    for start in range(0, n, ROW_CHUNK):
        chunk = H[start : start + ROW_CHUNK]
        acc += model.batch_conditional(chunk).sum(axis=0)
    return acc / n


def estimate_marginal_averaged(model: SequenceModel, histories) -> MarginalEstimate:
    H = np.asarray(histories, dtype=np.int64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ValueError("need a non-empty (n, l) history matrix")
    if H.shape[1] >= model.max_len:
        raise DimensionMismatchError(
            f"history length {H.shape[1]} must be < max_len {model.max_len}"
        )
    return MarginalEstimate(H.shape[1], averaged_conditional(model, H), H.shape[0], "averaged")


def _decode_codes(codes: np.ndarray, l: int, V: int) -> np.ndarray:
    """Base-V big-endian decode of context codes into (n, l) token matrices."""
    out = np.empty((codes.shape[0], l), dtype=np.int64)
    for j in range(l):
        out[:, j] = (codes // V ** (l - 1 - j)) % V
    return out


def exact_prefix_distribution(
    model: SequenceModel, l: int, corrupt_rate: float = 0.0, cap: int = ENUMERATION_CAP
) -> tuple[np.ndarray, np.ndarray]:
    """Exact distribution of length-l histories drawn from the model and then
    corrupted at the given rate. Returns (tokens, probs), zero rows dropped.

    Corruption mixes each axis of the dense joint toward uniform:
    T <- (1-c)*T + (c/V)*sum_j T, independently per position.
    """
    tokens, probs = enumerate_prefixes(model, l, cap)
    if corrupt_rate == 0.0 or l == 0:
        return tokens, probs
    V = model.vocab.size
    if V**l > cap:
        raise EnumerationCapError(
            f"corrupted support at length {l} has {V**l} states (> cap {cap})"
        )
    dense = np.zeros(V**l, dtype=np.float64)
    codes = np.zeros(tokens.shape[0], dtype=np.int64)
    for j in range(l):
        codes = codes * V + tokens[:, j]
    dense[codes] = probs
    T = dense.reshape((V,) * l)
    c = corrupt_rate
    for axis in range(l):
        T = (1.0 - c) * T + (c / V) * T.sum(axis=axis, keepdims=True)
    flat = T.reshape(-1)
    keep = np.nonzero(flat > 0.0)[0]
    return _decode_codes(keep, l, V), flat[keep]


def exact_marginal(
    model_cond: SequenceModel,
    model_hist: SequenceModel,
    l: int,
    corrupt_rate: float = 0.0,
    cap: int = ENUMERATION_CAP,
) -> MarginalEstimate:
    """Exact mixture sum_h P_hist(h) * conditional(model_cond, h)."""
    if model_cond.vocab.size != model_hist.vocab.size:
        raise DimensionMismatchError("conditioning and history models must share a vocabulary")
    tokens, probs = exact_prefix_distribution(model_hist, l, corrupt_rate, cap)
    acc = np.zeros(model_cond.vocab.size, dtype=np.float64)
    for start in range(0, tokens.shape[0], ROW_CHUNK):
        sl = slice(start, min(start + ROW_CHUNK, tokens.shape[0]))
        dists = model_cond.batch_conditional(tokens[sl])
        acc += probs[sl] @ dists
    return MarginalEstimate(l, acc, None, "exact")
