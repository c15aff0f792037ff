"""Maximum-likelihood and scheduled-sampling training for sequence models.

Recurrent students get mini-batch Adam on exact BPTT gradients; tabular and
positional-unigram students get the closed-form MLE (count normalization).
Each epoch draws fresh sequences from the data-generating oracle instead of
reusing a fixed dataset, which keeps the student from over-fitting a finite
sample.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatchError
from .models import (
    PositionalUnigramModel,
    RecurrentLM,
    SequenceModel,
    TabularMarkovModel,
    sample_rows,
    softmax_rows,
)
from .rng import stream


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 64
    sequences_per_epoch: int = 50_000
    seed: int = 0
    method: str = "mle"
    ss_final_rate: float = 0.1
    # Global-norm gradient clipping; off by default. Small LSTMs can spike,
    # so the escape hatch exists, but the reference recipe does not clip.
    grad_clip: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        # epochs = 0 is allowed as an explicit no-op (student returned unchanged).
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1 or self.sequences_per_epoch < 1:
            raise ConfigError("batch_size and sequences_per_epoch must be at least 1")
        if self.method not in ("mle", "scheduled_sampling"):
            raise ConfigError(f"unknown training method {self.method!r}")
        if not (0.0 <= self.ss_final_rate <= 1.0):
            raise ConfigError("ss_final_rate must lie in [0, 1]")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")


@dataclass
class TrainReport:
    method: str
    epochs: int
    epoch_nll: list[float] = field(default_factory=list)
    ss_rates: list[float] = field(default_factory=list)
    ss_replaced: list[int] = field(default_factory=list)
    ss_eligible: list[int] = field(default_factory=list)
    final_perplexity: float = float("nan")
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        ppl = self.final_perplexity
        return {
            "method": self.method,
            "epochs": self.epochs,
            "epoch_nll": list(self.epoch_nll),
            "ss_rates": list(self.ss_rates),
            "ss_replaced": list(self.ss_replaced),
            "ss_eligible": list(self.ss_eligible),
            # non-finite values serialize as strings so the file stays valid JSON
            "final_perplexity": ppl if math.isfinite(ppl) else repr(float(ppl)),
            "wall_time_s": self.wall_time_s,
        }


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if set(grads) != set(params):
        raise DimensionMismatchError("gradient tensors do not match parameter tensors")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionMismatchError(
                f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)


# ---------------------------------------------------------------------------
# Loss and gradients (full backpropagation through time)
# ---------------------------------------------------------------------------


def _run_batch(
    model: RecurrentLM,
    targets: np.ndarray,
    replace_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    want_grads: bool = True,
):
    """Forward (optionally with scheduled-sampling input replacement) and BPTT.

    Returns ``(loss, grads, replaced, eligible)``. Loss is the mean per-token
    NLL in nats, equal to the mean over sequences of the length-normalized
    sequence NLL because all rows share one length. Replaced inputs are
    constants in the backward pass: gradient flows only through the
    log-likelihood terms of the realized computation.
    """
    p = model.params
    B, L = targets.shape
    H = model.hidden_dim
    V = model.vocab.size
    h = np.broadcast_to(p["h0"], (B, H))
    c = np.broadcast_to(p["c0"], (B, H)) if model.cell == "lstm" else None
    hs = [h]
    caches = []
    dists = []
    inputs = targets.copy()
    replaced = 0
    for l in range(L):
        dist = softmax_rows(model.logits(h))
        dists.append(dist)
        if l < L - 1:
            tok = targets[:, l]
            if replace_rate > 0.0:
                # Draw order is fixed (mask uniforms, then sampling uniforms)
                # regardless of how many replacements fire.
                mask = rng.random(B) < replace_rate
                own = sample_rows(dist, rng.random(B))
                tok = np.where(mask, own, tok)
                replaced += int(mask.sum())
            inputs[:, l] = tok
            h, c, cache = model.cell_step(p["emb"][tok], h, c)
            hs.append(h)
            caches.append(cache)
    eligible = B * (L - 1)

    rows = np.arange(B)
    logp = 0.0
    for l in range(L):
        logp += np.log(dists[l][rows, targets[:, l]]).sum()
    loss = -logp / (B * L)

    if not want_grads:
        return loss, None, replaced, eligible

    grads = {k: np.zeros_like(t) for k, t in p.items()}
    w = 1.0 / (B * L)
    dh = np.zeros((B, H))
    dc = np.zeros((B, H)) if model.cell == "lstm" else None
    for l in range(L - 1, -1, -1):
        dlogits = dists[l].copy()
        dlogits[rows, targets[:, l]] -= 1.0
        dlogits *= w
        grads["w_out"] += hs[l].T @ dlogits
        grads["b_out"] += dlogits.sum(axis=0)
        dh = dh + dlogits @ p["w_out"].T
        if l == 0:
            grads["h0"] += dh.sum(axis=0)
            if model.cell == "lstm":
                grads["c0"] += dc.sum(axis=0)
            break
        x_tok = inputs[:, l - 1]
        if model.cell == "lstm":
            h_prev, c_prev, i, f, g, o, tc = caches[l - 1]
            dct = dc + dh * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dct * g * i * (1.0 - i),
                    dct * c_prev * f * (1.0 - f),
                    dct * i * (1.0 - g * g),
                    dh * tc * o * (1.0 - o),
                ],
                axis=1,
            )
            dc = dct * f
        else:
            h_prev, h_new = caches[l - 1]
            dz = dh * (1.0 - h_new * h_new)
        x_emb = p["emb"][x_tok]
        grads["w_x"] += x_emb.T @ dz
        grads["w_h"] += h_prev.T @ dz
        grads["b"] += dz.sum(axis=0)
        np.add.at(grads["emb"], x_tok, dz @ p["w_x"].T)
        dh = dz @ p["w_h"].T
    return loss, grads, replaced, eligible


def mle_loss(model: RecurrentLM, batch) -> tuple[float, dict[str, np.ndarray]]:
    """Teacher-forcing NLL and exact gradients for every parameter tensor."""
    targets = np.asarray(batch, dtype=np.int64)
    if targets.ndim != 2 or targets.shape[0] == 0:
        raise ValueError("batch must be a non-empty (n, length) token matrix")
    loss, grads, _, _ = _run_batch(model, targets)
    return loss, grads


def scheduled_replace_rate(epoch: int, epochs: int, final_rate: float) -> float:
    """Linear ramp: 0 at epoch 1 up to final_rate at the last epoch.

    A single-epoch run never leaves full teacher forcing.
    """
    if epochs <= 1:
        return 0.0
    return final_rate * (epoch - 1) / (epochs - 1)


def _clip_grads(grads: dict[str, np.ndarray], clip: float) -> None:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm > clip:
        scale = clip / norm
        for g in grads.values():
            g *= scale


def _fit_closed_form(student: SequenceModel, samples: np.ndarray) -> None:
    if isinstance(student, TabularMarkovModel):
        fitted = TabularMarkovModel.fit_counts(
            student.vocab, student.max_len, student.order, samples
        )
        student.tables = fitted.tables
    elif isinstance(student, PositionalUnigramModel):
        fitted = PositionalUnigramModel.fit_counts(student.vocab, student.max_len, samples)
        student.rows = fitted.rows
    else:
        raise TypeError(f"no closed-form fit for {type(student).__name__}")


def _train(
    student: SequenceModel,
    oracle: SequenceModel,
    config: TrainConfig,
    ss_final_rate: float,
) -> TrainReport:
    if student.vocab.size != oracle.vocab.size or student.max_len != oracle.max_len:
        raise DimensionMismatchError("student and oracle must share vocabulary size and length")
    method = "scheduled_sampling" if ss_final_rate > 0 else "mle"
    t0 = time.perf_counter()
    report = TrainReport(method=method, epochs=config.epochs)

    if not isinstance(student, RecurrentLM):
        # Count-normalization MLE has a closed form; one draw suffices and the
        # schedule is irrelevant because nothing is fed back autoregressively.
        if config.epochs > 0:
            samples = oracle.sample_sequences(
                config.sequences_per_epoch, stream(config.seed, "train/epoch/1/samples")
            )
            _fit_closed_form(student, samples)
            nll = -float(np.mean(student.sequence_log_probs(samples))) / student.max_len
            report.epoch_nll.append(nll)
            report.ss_rates.append(0.0)
            report.ss_replaced.append(0)
            report.ss_eligible.append(0)
        report.final_perplexity = _final_perplexity(student, oracle, config)
        report.wall_time_s = time.perf_counter() - t0
        return report

    state = AdamState.for_params(student.params)
    for epoch in range(1, config.epochs + 1):
        samples = oracle.sample_sequences(
            config.sequences_per_epoch, stream(config.seed, f"train/epoch/{epoch}/samples")
        )
        rate = scheduled_replace_rate(epoch, config.epochs, ss_final_rate)
        ss_rng = stream(config.seed, f"train/epoch/{epoch}/ss") if rate > 0 else None
        tok_sum = 0.0
        n_rows = 0
        replaced = 0
        eligible = 0
        for start in range(0, samples.shape[0], config.batch_size):
            batch = samples[start : start + config.batch_size]
            loss, grads, rep, elig = _run_batch(student, batch, rate, ss_rng)
            if config.grad_clip is not None:
                _clip_grads(grads, config.grad_clip)
            adam_step(student.params, grads, state, config)
            tok_sum += loss * batch.shape[0]
            n_rows += batch.shape[0]
            replaced += rep
            eligible += elig
        report.epoch_nll.append(tok_sum / n_rows)
        report.ss_rates.append(rate)
        report.ss_replaced.append(replaced)
        report.ss_eligible.append(eligible)
    report.final_perplexity = _final_perplexity(student, oracle, config)
    report.wall_time_s = time.perf_counter() - t0
    return report


def _final_perplexity(student: SequenceModel, oracle: SequenceModel, config: TrainConfig) -> float:
    n_eval = min(config.sequences_per_epoch, 10_000)
    eval_set = oracle.sample_sequences(n_eval, stream(config.seed, "train/eval"))
    return perplexity(student, eval_set)


def train_mle(student: SequenceModel, oracle: SequenceModel, config: TrainConfig) -> TrainReport:
    """Teacher-forcing MLE; each epoch trains on a fresh oracle draw."""
    return _train(student, oracle, config, ss_final_rate=0.0)


def train_scheduled_sampling(
    student: SequenceModel, oracle: SequenceModel, config: TrainConfig
) -> TrainReport:
    """MLE with scheduled sampling: with probability r(epoch), a conditioning
    token is replaced by a draw from the student's own prediction at that
    position. r ramps linearly from 0 (epoch 1) to ss_final_rate (last epoch).
    """
    return _train(student, oracle, config, ss_final_rate=config.ss_final_rate)


def train(student: SequenceModel, oracle: SequenceModel, config: TrainConfig) -> TrainReport:
    """Dispatch on config.method."""
    if config.method == "mle":
        return train_mle(student, oracle, config)
    return train_scheduled_sampling(student, oracle, config)


def perplexity(model: SequenceModel, data) -> float:
    """exp(mean per-token NLL in nats); +inf when an observed token has
    probability zero under the model."""
    X = np.asarray(data, dtype=np.int64)
    if X.ndim != 2 or X.size == 0:
        raise ValueError("data must be a non-empty (n, length) token matrix")
    logp = model.sequence_log_probs(X)
    return float(np.exp(-logp.sum() / X.size))
