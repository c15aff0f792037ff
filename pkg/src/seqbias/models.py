"""Autoregressive sequence models over fixed-length sequences.

All models share a small state-machine interface (``init_state`` /
``state_dist`` / ``advance_state``); conditionals, ancestral sampling,
prefix enumeration and log-likelihoods are all derived from it, so the
sampler consumes exactly the distributions that ``conditional`` reports.

Sequences are ``(n, L)`` int64 arrays of token ids; a history is any prefix
shorter than the configured length.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Iterator

import numpy as np

from .dist import Vocab, as_distribution
from .errors import EnumerationCapError

ENUMERATION_CAP = 10**6

# Fixed row-chunk size for batched walks. Chunking bounds memory; because
# every per-row computation is independent, results are bit-identical for
# any chunk size, but reductions over rows are always accumulated in chunk
# order, so the constant is part of the determinism contract.
ROW_CHUNK = 32768


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_token_matrix(tokens, vocab_size: int) -> np.ndarray:
    X = np.asarray(tokens, dtype=np.int64)
    if X.ndim != 2:
        raise ValueError(f"expected a (n, length) token matrix, got shape {X.shape}")
    if X.size and (X.min() < 0 or X.max() >= vocab_size):
        raise ValueError("token id out of range for vocabulary")
    return X


def sample_rows(dists: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one token per row; u is (n,) uniform in [0, 1)."""
    cdf = np.cumsum(dists, axis=1)
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, dists.shape[1] - 1)


class SequenceModel(ABC):
    """Fixed-length autoregressive model with exact next-token conditionals."""

    def __init__(self, vocab: Vocab, max_len: int):
        if max_len < 1:
            raise ValueError("max_len must be at least 1")
        self.vocab = vocab
        self.max_len = int(max_len)

    # -- state machine -------------------------------------------------
    # A state describes n parallel walks at a common position l.

    @abstractmethod
    def _init_payload(self, n: int): ...

    @abstractmethod
    def _payload_dist(self, l: int, payload, n: int) -> np.ndarray:
        """Next-token distributions (n, V) at position l given the payload."""

    @abstractmethod
    def _advance_payload(self, l: int, payload, tokens: np.ndarray):
        """Consume one token per walk at position l, returning the new payload."""

    @abstractmethod
    def _take_payload(self, payload, idx: np.ndarray):
        """Re-index walks (gather rows); used by enumeration."""

    def init_state(self, n: int):
        return (0, self._init_payload(n), n)

    def state_dist(self, state) -> np.ndarray:
        l, payload, n = state
        return self._payload_dist(l, payload, n)

    def advance_state(self, state, tokens: np.ndarray):
        l, payload, n = state
        if l >= self.max_len - 1:
            raise ValueError(f"cannot extend a history to length {l + 1} with max_len {self.max_len}")
        return (l + 1, self._advance_payload(l, payload, np.asarray(tokens, dtype=np.int64)), n)

    def take_state(self, state, idx: np.ndarray):
        l, payload, n = state
        idx = np.asarray(idx, dtype=np.int64)
        return (l, self._take_payload(payload, idx), int(idx.shape[0]))

    # -- derived queries -------------------------------------------------

    def conditional(self, history) -> np.ndarray:
        """Exact next-token distribution given one history (possibly empty)."""
        h = np.asarray(history, dtype=np.int64).reshape(1, -1)
        if h.shape[1] >= self.max_len:
            raise ValueError(f"history length {h.shape[1]} must be < max_len {self.max_len}")
        return self.batch_conditional(h)[0]

    def batch_conditional(self, histories) -> np.ndarray:
        """Next-token distributions (n, V) for n equal-length histories."""
        H = _as_token_matrix(histories, self.vocab.size)
        n, T = H.shape
        if T >= self.max_len:
            raise ValueError(f"history length {T} must be < max_len {self.max_len}")
        out = np.empty((n, self.vocab.size), dtype=np.float64)
        for start in range(0, n, ROW_CHUNK):
            sl = slice(start, min(start + ROW_CHUNK, n))
            state = self.init_state(sl.stop - sl.start)
            for j in range(T):
                state = self.advance_state(state, H[sl, j])
            out[sl] = self.state_dist(state)
        return out

    def conditional_trace(self, tokens) -> Iterator[np.ndarray]:
        """Yield the (n, V) conditional given tokens[:, :l] for l = 0, 1, ...

        For a (n, T) matrix this yields min(T, max_len - 1) + 1 arrays; the
        final column is consumed only when T < max_len.
        """
        X = _as_token_matrix(tokens, self.vocab.size)
        n, T = X.shape
        last = min(T, self.max_len - 1)
        state = self.init_state(n)
        for l in range(last + 1):
            yield self.state_dist(state)
            if l < last:
                state = self.advance_state(state, X[:, l])

    def sample_sequences(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Ancestral sampling of n full-length sequences.

        Column l consumes exactly n uniforms from ``rng``, applied to the
        same distributions ``conditional`` reports for those prefixes.
        """
        out = np.empty((n, self.max_len), dtype=np.int64)
        state = self.init_state(n)
        for l in range(self.max_len):
            dists = self.state_dist(state)
            out[:, l] = sample_rows(dists, rng.random(n))
            if l < self.max_len - 1:
                state = self.advance_state(state, out[:, l])
        return out

    def sample_sequence(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_sequences(1, rng)[0]

    def sample_prefixes(self, n: int, l: int, rng: np.random.Generator) -> np.ndarray:
        """Ancestral sampling stopped after l tokens.

        Column-major draw order matches ``sample_sequences``, so with the same
        generator the result equals its first l columns.
        """
        if l < 0 or l > self.max_len:
            raise ValueError(f"prefix length {l} out of range [0, {self.max_len}]")
        out = np.empty((n, l), dtype=np.int64)
        state = self.init_state(n)
        for j in range(l):
            out[:, j] = sample_rows(self.state_dist(state), rng.random(n))
            if j < l - 1:
                state = self.advance_state(state, out[:, j])
        return out

    def complete_sequences(self, prefixes, rng: np.random.Generator) -> np.ndarray:
        """Sample continuations of the given (n, l) prefixes out to full length."""
        P = _as_token_matrix(prefixes, self.vocab.size)
        n, T = P.shape
        if T > self.max_len:
            raise ValueError(f"prefix length {T} exceeds max_len {self.max_len}")
        out = np.empty((n, self.max_len), dtype=np.int64)
        out[:, :T] = P
        state = self.init_state(n)
        for l in range(self.max_len):
            if l >= T:
                out[:, l] = sample_rows(self.state_dist(state), rng.random(n))
            if l < self.max_len - 1:
                state = self.advance_state(state, out[:, l])
        return out

    def sequence_log_probs(self, tokens) -> np.ndarray:
        """Log-probability of each row; -inf where a zero-probability token occurs."""
        X = _as_token_matrix(tokens, self.vocab.size)
        n, T = X.shape
        if T > self.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self.max_len}")
        total = np.zeros(n, dtype=np.float64)
        for start in range(0, n, ROW_CHUNK):
            sl = slice(start, min(start + ROW_CHUNK, n))
            state = self.init_state(sl.stop - sl.start)
            for l in range(T):
                dists = self.state_dist(state)
                p = dists[np.arange(sl.stop - sl.start), X[sl, l]]
                with np.errstate(divide="ignore"):
                    total[sl] += np.log(p)
                if l < T - 1:
                    state = self.advance_state(state, X[sl, l])
        return total


# ---------------------------------------------------------------------------
# Tabular model: explicit per-(position, context) rows; exact oracle workhorse.
# ---------------------------------------------------------------------------


def _context_lengths(max_len: int, order: int | None) -> list[int]:
    if order is None:
        return list(range(max_len))
    return [min(l, order) for l in range(max_len)]


class TabularMarkovModel(SequenceModel):
    """Lookup-table model conditioned on the last ``order`` tokens.

    ``order=None`` conditions on the full prefix (exact-oracle mode). Row
    layout at position l: ``tables[l]`` has V**min(l, order) rows; the row
    index encodes the context big-endian in base V (earliest token most
    significant).
    """

    def __init__(self, vocab: Vocab, max_len: int, tables: list[np.ndarray], order: int | None = None):
        super().__init__(vocab, max_len)
        if order is not None and order < 0:
            raise ValueError("order must be non-negative or None")
        self.order = order
        V = vocab.size
        if len(tables) != max_len:
            raise ValueError(f"need {max_len} tables, got {len(tables)}")
        self.tables = []
        for l, ctx_len in enumerate(_context_lengths(max_len, order)):
            n_ctx = V**ctx_len
            if n_ctx > ENUMERATION_CAP:
                raise EnumerationCapError(
                    f"position {l} needs {n_ctx} context rows (> cap {ENUMERATION_CAP})"
                )
            t = np.asarray(tables[l], dtype=np.float64)
            if t.shape != (n_ctx, V):
                raise ValueError(f"table {l} has shape {t.shape}, expected {(n_ctx, V)}")
            for row in t:
                as_distribution(row, V)
            self.tables.append(t)

    @classmethod
    def random(
        cls,
        vocab: Vocab,
        max_len: int,
        order: int | None,
        rng: np.random.Generator,
        concentration: float = 1.0,
    ) -> "TabularMarkovModel":
        V = vocab.size
        tables = [
            rng.dirichlet(np.full(V, concentration), size=V**ctx_len)
            for ctx_len in _context_lengths(max_len, order)
        ]
        return cls(vocab, max_len, tables, order)

    @classmethod
    def fit_counts(
        cls,
        vocab: Vocab,
        max_len: int,
        order: int | None,
        samples,
        pseudocount: float = 0.0,
    ) -> "TabularMarkovModel":
        """Closed-form MLE: normalized context counts; unseen contexts get uniform rows."""
        X = _as_token_matrix(samples, vocab.size)
        if X.shape[1] != max_len:
            raise ValueError("samples must have exactly max_len columns")
        V = vocab.size
        ctx_lengths = _context_lengths(max_len, order)
        counts = [np.full((V**cl, V), pseudocount, dtype=np.float64) for cl in ctx_lengths]
        ctx = np.zeros(X.shape[0], dtype=np.int64)
        for l in range(max_len):
            np.add.at(counts[l], (ctx, X[:, l]), 1.0)
            if l < max_len - 1:
                ctx = _advance_context(ctx, X[:, l], l, order, V)
        tables = []
        for c in counts:
            totals = c.sum(axis=1, keepdims=True)
            t = np.where(totals > 0, c / np.where(totals > 0, totals, 1.0), 1.0 / V)
            tables.append(t)
        return cls(vocab, max_len, tables, order)

    def row(self, l: int, context) -> np.ndarray:
        """Stored distribution for (position, context), context = the visible tokens."""
        ctx = np.asarray(context, dtype=np.int64).reshape(-1)
        need = _context_lengths(self.max_len, self.order)[l]
        if ctx.shape[0] != need:
            raise ValueError(f"position {l} expects a context of {need} tokens")
        code = 0
        for t in ctx:
            code = code * self.vocab.size + int(t)
        return self.tables[l][code].copy()

    # state payload: (n,) int64 context codes
    def _init_payload(self, n: int):
        return np.zeros(n, dtype=np.int64)

    def _payload_dist(self, l: int, payload, n: int) -> np.ndarray:
        return self.tables[l][payload]

    def _advance_payload(self, l: int, payload, tokens: np.ndarray):
        return _advance_context(payload, tokens, l, self.order, self.vocab.size)

    def _take_payload(self, payload, idx: np.ndarray):
        return payload[idx]


def _advance_context(ctx: np.ndarray, tokens: np.ndarray, l: int, order: int | None, V: int) -> np.ndarray:
    """Append one token to each base-V context code at position l."""
    if order == 0:
        return ctx
    if order is None or l < order:
        return ctx * V + tokens
    return (ctx % V ** (order - 1)) * V + tokens


# ---------------------------------------------------------------------------
# Position-aware unigram: conditionals depend only on history length.
# ---------------------------------------------------------------------------


class PositionalUnigramModel(SequenceModel):
    """One distribution per position, independent of history content."""

    def __init__(self, vocab: Vocab, max_len: int, rows):
        super().__init__(vocab, max_len)
        R = np.asarray(rows, dtype=np.float64)
        if R.shape != (max_len, vocab.size):
            raise ValueError(f"rows must have shape {(max_len, vocab.size)}, got {R.shape}")
        for row in R:
            as_distribution(row, vocab.size)
        self.rows = R

    @classmethod
    def uniform(cls, vocab: Vocab, max_len: int) -> "PositionalUnigramModel":
        return cls(vocab, max_len, np.full((max_len, vocab.size), 1.0 / vocab.size))

    @classmethod
    def random(
        cls, vocab: Vocab, max_len: int, rng: np.random.Generator, concentration: float = 1.0
    ) -> "PositionalUnigramModel":
        return cls(vocab, max_len, rng.dirichlet(np.full(vocab.size, concentration), size=max_len))

    @classmethod
    def fit_counts(cls, vocab: Vocab, max_len: int, samples) -> "PositionalUnigramModel":
        X = _as_token_matrix(samples, vocab.size)
        rows = np.stack(
            [np.bincount(X[:, l], minlength=vocab.size) / X.shape[0] for l in range(max_len)]
        )
        return cls(vocab, max_len, rows)

    def _init_payload(self, n: int):
        return None

    def _payload_dist(self, l: int, payload, n: int) -> np.ndarray:
        return np.broadcast_to(self.rows[l], (n, self.vocab.size))

    def _advance_payload(self, l: int, payload, tokens: np.ndarray):
        return None

    def _take_payload(self, payload, idx: np.ndarray):
        return None


# ---------------------------------------------------------------------------
# Recurrent LM: single-layer simple-RNN or LSTM with a learned initial state.
# ---------------------------------------------------------------------------

_RECURRENT_TENSORS = ("emb", "w_x", "w_h", "b", "h0", "c0", "w_out", "b_out")


class RecurrentLM(SequenceModel):
    """Single-layer recurrent LM; the empty history is served by a learned
    initial state, so no BOS token exists.

    Parameters (all float64): ``emb`` (V, E), ``w_x`` (E, G*H), ``w_h``
    (H, G*H), ``b`` (G*H,), ``h0`` (H,), ``c0`` (H, LSTM only), ``w_out``
    (H, V), ``b_out`` (V,), with G = 4 gates for LSTM (order i, f, g, o)
    and G = 1 for the simple RNN.
    """

    def __init__(
        self,
        vocab: Vocab,
        max_len: int,
        cell: str,
        hidden_dim: int,
        emb_dim: int,
        params: dict[str, np.ndarray],
    ):
        super().__init__(vocab, max_len)
        if cell not in ("rnn", "lstm"):
            raise ValueError(f"unknown cell kind {cell!r}")
        self.cell = cell
        self.hidden_dim = int(hidden_dim)
        self.emb_dim = int(emb_dim)
        gates = 4 if cell == "lstm" else 1
        expected = {
            "emb": (vocab.size, emb_dim),
            "w_x": (emb_dim, gates * hidden_dim),
            "w_h": (hidden_dim, gates * hidden_dim),
            "b": (gates * hidden_dim,),
            "h0": (hidden_dim,),
            "w_out": (hidden_dim, vocab.size),
            "b_out": (vocab.size,),
        }
        if cell == "lstm":
            expected["c0"] = (hidden_dim,)
        self.params: dict[str, np.ndarray] = {}
        for name, shape in expected.items():
            if name not in params:
                raise ValueError(f"missing parameter tensor {name!r}")
            t = np.ascontiguousarray(params[name], dtype=np.float64)
            if t.shape != shape:
                raise ValueError(f"tensor {name!r} has shape {t.shape}, expected {shape}")
            self.params[name] = t
        extra = set(params) - set(expected)
        if extra:
            raise ValueError(f"unexpected parameter tensors: {sorted(extra)}")

    @classmethod
    def random(
        cls,
        vocab: Vocab,
        max_len: int,
        hidden_dim: int,
        rng: np.random.Generator,
        cell: str = "lstm",
        emb_dim: int | None = None,
        init: str = "uniform",
        init_scale: float = 0.08,
    ) -> "RecurrentLM":
        """Seeded initialization; tensors are drawn in a fixed name order.

        ``init="uniform"`` draws U(-scale, scale) (the training default);
        ``init="normal"`` draws N(0, scale), which produces the sharply
        structured conditionals wanted from a synthetic data-generating
        oracle.
        """
        E = hidden_dim if emb_dim is None else emb_dim
        gates = 4 if cell == "lstm" else 1
        shapes = {
            "emb": (vocab.size, E),
            "w_x": (E, gates * hidden_dim),
            "w_h": (hidden_dim, gates * hidden_dim),
            "b": (gates * hidden_dim,),
            "h0": (hidden_dim,),
            "w_out": (hidden_dim, vocab.size),
            "b_out": (vocab.size,),
        }
        if cell == "lstm":
            shapes["c0"] = (hidden_dim,)
        params = {}
        for name in _RECURRENT_TENSORS:
            if name not in shapes:
                continue
            if init == "uniform":
                params[name] = rng.uniform(-init_scale, init_scale, size=shapes[name])
            elif init == "normal":
                params[name] = rng.normal(0.0, init_scale, size=shapes[name])
            else:
                raise ValueError(f"unknown init {init!r}")
        return cls(vocab, max_len, cell, hidden_dim, E, params)

    def cell_step(self, x_emb: np.ndarray, h: np.ndarray, c: np.ndarray | None):
        """One recurrent step on a batch; returns (h', c', cache).

        The cache carries the intermediates backpropagation needs; inference
        callers simply drop it.
        """
        p = self.params
        z = x_emb @ p["w_x"] + h @ p["w_h"] + p["b"]
        if self.cell == "rnn":
            h_new = np.tanh(z)
            return h_new, None, (h, h_new)
        H = self.hidden_dim
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, c_new, (h, c, i, f, g, o, tc)

    def logits(self, h: np.ndarray) -> np.ndarray:
        return h @ self.params["w_out"] + self.params["b_out"]

    def _init_payload(self, n: int):
        h = np.broadcast_to(self.params["h0"], (n, self.hidden_dim))
        if self.cell == "lstm":
            return (h, np.broadcast_to(self.params["c0"], (n, self.hidden_dim)))
        return (h, None)

    def _payload_dist(self, l: int, payload, n: int) -> np.ndarray:
        return softmax_rows(self.logits(payload[0]))

    def _advance_payload(self, l: int, payload, tokens: np.ndarray):
        h, c = payload
        h_new, c_new, _ = self.cell_step(self.params["emb"][tokens], h, c)
        return (h_new, c_new)

    def _take_payload(self, payload, idx: np.ndarray):
        h, c = payload
        return (h[idx], None if c is None else c[idx])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Exact prefix enumeration.
# ---------------------------------------------------------------------------


def enumerate_prefixes(
    model: SequenceModel, l: int, cap: int = ENUMERATION_CAP
) -> tuple[np.ndarray, np.ndarray]:
    """All positive-probability prefixes of length l with exact probabilities.

    Returns ``(tokens, probs)`` where tokens is (n_states, l) in lexicographic
    order and probs sums to 1. Raises EnumerationCapError when the frontier
    would exceed ``cap`` states; use the Monte-Carlo estimators in that case.
    """
    if l < 0 or l > model.max_len:
        raise ValueError(f"prefix length {l} out of range [0, {model.max_len}]")
    V = model.vocab.size
    tokens = np.zeros((1, 0), dtype=np.int64)
    probs = np.ones(1, dtype=np.float64)
    state = model.init_state(1)
    for j in range(l):
        n = tokens.shape[0]
        if n * V > cap:
            raise EnumerationCapError(
                f"enumeration at length {j + 1} needs up to {n * V} states (> cap {cap}); "
                "use the Monte-Carlo estimators instead"
            )
        dists = model.state_dist(state)
        child_probs = (probs[:, None] * dists).ravel()
        keep = np.nonzero(child_probs > 0.0)[0]
        parent_idx = keep // V
        child_tok = (keep % V).astype(np.int64)
        tokens = np.concatenate([tokens[parent_idx], child_tok[:, None]], axis=1)
        probs = child_probs[keep]
        if j < l - 1:
            state = model.take_state(state, parent_idx)
            state = model.advance_state(state, child_tok)
    return tokens, probs


def enumerate_distribution(
    model: SequenceModel, l: int, cap: int = ENUMERATION_CAP
) -> dict[tuple[int, ...], float]:
    """Exact prefix distribution as a mapping, zero-probability prefixes omitted."""
    tokens, probs = enumerate_prefixes(model, l, cap)
    return {tuple(int(t) for t in row): float(p) for row, p in zip(tokens, probs)}
