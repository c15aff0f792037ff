"""Finite categorical distributions and the divergences used by the metrics.

Distributions are plain 1-D float64 numpy arrays over a vocabulary. All
divergences use natural logarithms, so Jensen-Shannon is bounded by ``ln 2``.
The batched helpers (``*_rows``) operate row-wise on ``(n, V)`` arrays and
back the Monte-Carlo pipelines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr

from .errors import DimensionMismatchError

PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Vocab:
    """Ordered token inventory; token id = position in ``tokens``."""

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) < 2:
            raise ValueError(f"vocabulary needs at least 2 tokens, got {len(self.tokens)}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> int:
        return self.tokens.index(token)

    @classmethod
    def synthetic(cls, size: int) -> "Vocab":
        """Placeholder vocabulary w0..w{size-1} for synthetic experiments."""
        return cls(tuple(f"w{i}" for i in range(size)))

    @classmethod
    def from_lines(cls, text: str) -> "Vocab":
        toks = [line.strip() for line in text.splitlines() if line.strip()]
        return cls(tuple(toks))


def as_distribution(probs, size: int | None = None) -> np.ndarray:
    """Validate and return a probability vector as float64.

    Entries must be non-negative and sum to 1 within ``PROB_SUM_TOL``.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D probability vector, got shape {p.shape}")
    if size is not None and p.shape[0] != size:
        raise DimensionMismatchError(f"expected {size} entries, got {p.shape[0]}")
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    total = float(p.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"probabilities sum to {total!r}, expected 1 within {PROB_SUM_TOL}")
    return p


def _check_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionMismatchError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    return p, q


def total_variation(p, q) -> float:
    """Total variation distance, (1/2) sum |p_i - q_i|. In [0, 1]."""
    p, q = _check_pair(p, q)
    return float(0.5 * np.abs(p - q).sum())


def kl_divergence(p, q) -> float:
    """KL divergence in nats; +inf when q lacks support where p has mass."""
    p, q = _check_pair(p, q)
    return float(rel_entr(p, q).sum())


def jensen_shannon(p, q) -> float:
    """Jensen-Shannon divergence in nats; finite, symmetric, at most ln 2."""
    p, q = _check_pair(p, q)
    m = 0.5 * (p + q)
    return float(0.5 * rel_entr(p, m).sum() + 0.5 * rel_entr(q, m).sum())


def greedy_mismatch(p, q) -> float:
    """Greedy decoding disagreement: 1.0 if the argmax tokens differ, else 0.0.

    Ties resolve to the lowest token index, making the indicator a pure
    function of its inputs.
    """
    p, q = _check_pair(p, q)
    return float(int(np.argmax(p) != np.argmax(q)))


def tv_rows(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-wise total variation between two (n, V) arrays."""
    return 0.5 * np.abs(P - Q).sum(axis=-1)


def js_rows(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-wise Jensen-Shannon divergence between two (n, V) arrays."""
    M = 0.5 * (P + Q)
    return 0.5 * rel_entr(P, M).sum(axis=-1) + 0.5 * rel_entr(Q, M).sum(axis=-1)


def gd_rows(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-wise greedy-decoding disagreement indicator (0.0 / 1.0)."""
    return (np.argmax(P, axis=-1) != np.argmax(Q, axis=-1)).astype(np.float64)


# Metric registry used by the deviation pipelines; names appear in CSV output.
DIVERGENCES = {"tv": total_variation, "js": jensen_shannon, "gd": greedy_mismatch}
DIVERGENCE_ROWS = {"tv": tv_rows, "js": js_rows, "gd": gd_rows}
METRIC_NAMES = tuple(DIVERGENCES)
