"""Exposure-bias quantification for autoregressive sequence models.

Marginal route: the marginal generation deviation at history length l is the
divergence between the model's position-(l+1) marginal under some history
distribution and the data distribution's own position-(l+1) marginal. The
marginal bias rate is the ratio of that deviation under model histories to
the deviation under data histories.

Conditional route: the conditional generation deviation at length l is the
expected divergence between model and data-oracle next-token conditionals
over histories drawn from a chosen distribution; the conditional bias rate
is again the model-history / data-history ratio. This route needs a
queryable oracle, so it only runs against synthetic data distributions.

Reproducibility: every Monte-Carlo quantity is computed from labeled RNG
streams and fixed-order chunked reductions, so any single sweep row can be
recomputed bit-identically by an independent invocation that draws the same
labeled streams (see ``sweep`` for the labels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dist import DIVERGENCE_ROWS, DIVERGENCES, METRIC_NAMES
from .errors import ConfigError, DegenerateRatioError, DimensionMismatchError
from .estimation import (
    HistorySource,
    MarginalEstimate,
    averaged_conditional,
    corrupt_histories,
    estimate_marginal_counted,
    exact_marginal,
    exact_prefix_distribution,
)
from .models import ENUMERATION_CAP, ROW_CHUNK, SequenceModel
from .rng import stream

EXACT_RATIO_EPS = 1e-12
SE_BLOCKS = 10


# ---------------------------------------------------------------------------
# Ratios
# ---------------------------------------------------------------------------


@dataclass
class Ratio:
    """A deviation ratio with the stability bookkeeping attached.

    flag is one of "" (clean), "infinite" (zero denominator, nonzero
    numerator), "degenerate" (0/0), "unstable" (Monte-Carlo denominator is
    within two standard errors of zero), "sanity" (length-0 row where the
    ratio is 1 by construction).
    """

    numerator: float
    denominator: float
    value: float
    flag: str = ""
    numerator_se: float | None = None
    denominator_se: float | None = None

    @property
    def defined(self) -> bool:
        return self.flag == "" and math.isfinite(self.value)


def ratio_exact(numerator: float, denominator: float, eps: float = EXACT_RATIO_EPS) -> Ratio:
    """Exact-mode ratio: 0/0 within eps is a hard error, x/0 signals infinity."""
    if numerator < eps and denominator < eps:
        raise DegenerateRatioError(
            f"both deviations vanish ({numerator!r} / {denominator!r}); the ratio is undefined"
        )
    if denominator < eps:
        return Ratio(numerator, denominator, math.inf, "infinite")
    return Ratio(numerator, denominator, numerator / denominator)


def ratio_mc(numerator: float, denominator: float, num_se: float, den_se: float) -> Ratio:
    """Monte-Carlo ratio: a denominator indistinguishable from zero flags the
    record instead of raising, preserving the rest of a curve."""
    if denominator <= 0.0:
        if numerator <= 0.0:
            return Ratio(numerator, denominator, math.nan, "degenerate", num_se, den_se)
        return Ratio(numerator, denominator, math.inf, "infinite", num_se, den_se)
    flag = "unstable" if denominator < 2.0 * den_se else ""
    return Ratio(numerator, denominator, numerator / denominator, flag, num_se, den_se)


# ---------------------------------------------------------------------------
# Scalar deviations
# ---------------------------------------------------------------------------


def _metric_fn(metric: str):
    if metric not in DIVERGENCES:
        raise ConfigError(f"unknown metric {metric!r}; choose from {METRIC_NAMES}")
    return DIVERGENCES[metric]


def _marginal_under_history(
    model: SequenceModel,
    history: HistorySource,
    l: int,
    n_samples: int | None,
    rng: np.random.Generator | None,
    cap: int,
) -> np.ndarray:
    if n_samples is None:
        if history.kind == "data-corpus":
            raise ValueError("corpus histories cannot be enumerated; pass n_samples for Monte-Carlo")
        return exact_marginal(model, history.model, l, history.corrupt_rate, cap).dist
    if rng is None:
        raise ValueError("Monte-Carlo estimation needs an rng")
    H = history.draw(n_samples, l, rng, model.vocab.size)
    return averaged_conditional(model, H)


def mgd(
    model: SequenceModel,
    reference: MarginalEstimate,
    history: HistorySource,
    l: int,
    metric: str,
    *,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    cap: int = ENUMERATION_CAP,
) -> float:
    """Marginal generation deviation: d(P_{M|H}^{l+1}, P_{D|D}^{l+1})."""
    d = _metric_fn(metric)
    est = _marginal_under_history(model, history, l, n_samples, rng, cap)
    return d(est, reference.dist)


def cgd(
    model: SequenceModel,
    oracle: SequenceModel,
    history: HistorySource,
    l: int,
    metric: str,
    n_histories: int | None = None,
    rng: np.random.Generator | None = None,
    cap: int = ENUMERATION_CAP,
) -> float:
    """Conditional generation deviation: E over histories of
    d(model conditional, oracle conditional)."""
    if history.kind == "data-corpus":
        raise ValueError(
            "conditional deviation needs a queryable data distribution; corpus histories are not supported"
        )
    if model.vocab.size != oracle.vocab.size:
        raise DimensionMismatchError("model and oracle must share a vocabulary")
    _metric_fn(metric)
    if n_histories is None:
        return _cgd_exact(model, oracle, history.model, l, metric, history.corrupt_rate, cap)
    if rng is None:
        raise ValueError("Monte-Carlo estimation needs an rng")
    H = history.draw(n_histories, l, rng, model.vocab.size)
    return float(np.mean(_cgd_values(model, oracle, H, metric)))


def _cgd_values(model: SequenceModel, oracle: SequenceModel, H: np.ndarray, metric: str) -> np.ndarray:
    """Per-history divergences between model and oracle conditionals."""
    rows = DIVERGENCE_ROWS[metric]
    n = H.shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, ROW_CHUNK):
        sl = slice(start, min(start + ROW_CHUNK, n))
        out[sl] = rows(model.batch_conditional(H[sl]), oracle.batch_conditional(H[sl]))
    return out


def _traced_cgd_values(
    model: SequenceModel,
    oracle: SequenceModel,
    H: np.ndarray,
    ls: list[int],
    metrics: tuple[str, ...],
) -> dict[tuple[int, str], np.ndarray]:
    """Per-history divergences at every requested length in one pass.

    Walks each ROW_CHUNK of histories forward once, reading the conditional
    at every length along the way. Per row and length this performs exactly
    the state advances ``_cgd_values`` performs on the sliced prefix, so the
    value vectors are bit-identical to per-length recomputation.
    """
    wanted = set(ls)
    max_l = max(ls)
    n = H.shape[0]
    out = {(l, m): np.empty(n, dtype=np.float64) for l in ls for m in metrics}
    for start in range(0, n, ROW_CHUNK):
        sl = slice(start, min(start + ROW_CHUNK, n))
        chunk = H[sl, :max_l]
        for l, (dm, do) in enumerate(
            zip(model.conditional_trace(chunk), oracle.conditional_trace(chunk))
        ):
            if l in wanted:
                for m in metrics:
                    out[(l, m)][sl] = DIVERGENCE_ROWS[m](dm, do)
            if l >= max_l:
                break
    return out


def _cgd_exact(
    model: SequenceModel,
    oracle: SequenceModel,
    hist_model: SequenceModel,
    l: int,
    metric: str,
    corrupt_rate: float,
    cap: int,
) -> float:
    rows = DIVERGENCE_ROWS[metric]
    tokens, probs = exact_prefix_distribution(hist_model, l, corrupt_rate, cap)
    acc = 0.0
    for start in range(0, tokens.shape[0], ROW_CHUNK):
        sl = slice(start, min(start + ROW_CHUNK, tokens.shape[0]))
        vals = rows(model.batch_conditional(tokens[sl]), oracle.batch_conditional(tokens[sl]))
        acc += float(probs[sl] @ vals)
    return acc


def direct_marginal_gap(
    model: SequenceModel,
    oracle: SequenceModel,
    l: int,
    metric: str,
    *,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    cap: int = ENUMERATION_CAP,
) -> float:
    """d between the model's own two marginals (model vs data histories).

    Diagnostic only: a gap proves the marginals differ but not which one sits
    closer to the data distribution.
    """
    d = _metric_fn(metric)
    own = _marginal_under_history(model, HistorySource("model", model), l, n_samples, rng, cap)
    under_data = _marginal_under_history(
        model, HistorySource("data-model", oracle), l, n_samples, rng, cap
    )
    return d(own, under_data)


# ---------------------------------------------------------------------------
# Bias rates
# ---------------------------------------------------------------------------


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    n = values.shape[0]
    mean = float(np.mean(values))
    if n < 2:
        return mean, math.inf
    return mean, float(np.std(values, ddof=1) / math.sqrt(n))


def _chunked_mean_rows(M: np.ndarray) -> np.ndarray:
    """Row mean in the canonical chunk order shared with averaged_conditional."""
    acc = np.zeros(M.shape[1], dtype=np.float64)
    for start in range(0, M.shape[0], ROW_CHUNK):
        acc += M[start : start + ROW_CHUNK].sum(axis=0)
    return acc / M.shape[0]


def _block_mgd_se(M: np.ndarray, ref: np.ndarray, metric: str) -> float:
    """Batch-means standard error for a marginal deviation.

    The deviation is a nonlinear function of a mean, so the usual per-sample
    variance does not apply; instead the rows split into SE_BLOCKS contiguous
    blocks whose per-block deviations estimate the sampling spread.
    """
    d = DIVERGENCES[metric]
    n = M.shape[0]
    B = min(SE_BLOCKS, n)
    if B < 2:
        return math.inf
    vals = np.empty(B, dtype=np.float64)
    for b in range(B):
        lo = b * n // B
        hi = (b + 1) * n // B
        vals[b] = d(_chunked_mean_rows(M[lo:hi]), ref)
    return float(np.std(vals, ddof=1) / math.sqrt(B))


def eb_m(
    model: SequenceModel,
    oracle_or_corpus,
    l: int,
    metric: str,
    *,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    cap: int = ENUMERATION_CAP,
) -> Ratio:
    """Marginal bias rate: deviation under model histories over deviation
    under data histories, both against the data marginal at position l+1."""
    d = _metric_fn(metric)
    if isinstance(oracle_or_corpus, SequenceModel):
        oracle = oracle_or_corpus
        if n_samples is None:
            ref = exact_marginal(oracle, oracle, l, cap=cap).dist
            num = d(exact_marginal(model, model, l, cap=cap).dist, ref)
            den = d(exact_marginal(model, oracle, l, cap=cap).dist, ref)
            return ratio_exact(num, den)
        if rng is None:
            raise ValueError("Monte-Carlo estimation needs an rng")
        S_model = model.sample_sequences(n_samples, rng)
        S_data = oracle.sample_sequences(n_samples, rng)
        ref = estimate_marginal_counted(S_data, l, model.vocab.size).dist
    else:
        corpus = np.asarray(oracle_or_corpus, dtype=np.int64)
        if n_samples is None or rng is None:
            raise ValueError("corpus-based estimation is Monte-Carlo only; pass n_samples and rng")
        if l >= corpus.shape[1]:
            raise ValueError(f"corpus rows of length {corpus.shape[1]} have no position {l + 1}")
        S_model = model.sample_sequences(n_samples, rng)
        S_data = corpus
        ref = estimate_marginal_counted(corpus, l, model.vocab.size).dist
    M_own = model.batch_conditional(S_model[:, :l])
    M_data = model.batch_conditional(S_data[:, :l])
    num = d(_chunked_mean_rows(M_own), ref)
    den = d(_chunked_mean_rows(M_data), ref)
    return ratio_mc(num, den, _block_mgd_se(M_own, ref, metric), _block_mgd_se(M_data, ref, metric))


def eb_c(
    model: SequenceModel,
    oracle: SequenceModel,
    l: int,
    metric: str,
    n_histories: int | None = None,
    *,
    corrupt_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    cap: int = ENUMERATION_CAP,
) -> Ratio:
    """Conditional bias rate: model-history deviation over data-history
    deviation. Corruption perturbs the model-history side only."""
    own = HistorySource("model", model, corrupt_rate=corrupt_rate)
    data = HistorySource("data-model", oracle)
    if n_histories is None:
        num = cgd(model, oracle, own, l, metric, cap=cap)
        den = cgd(model, oracle, data, l, metric, cap=cap)
        return ratio_exact(num, den)
    if rng is None:
        raise ValueError("Monte-Carlo estimation needs an rng")
    H_own = own.draw(n_histories, l, rng, model.vocab.size)
    H_data = data.draw(n_histories, l, rng, model.vocab.size)
    num, num_se = _mean_and_se(_cgd_values(model, oracle, H_own, metric))
    den, den_se = _mean_and_se(_cgd_values(model, oracle, H_data, metric))
    return ratio_mc(num, den, num_se, den_se)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class CurveRow:
    l: int
    value_model_hist: float
    value_data_hist: float
    ratio: float
    flags: str = ""


@dataclass
class DeviationCurve:
    kind: str  # eb_m | eb_c
    metric: str
    corrupt_rate: float
    n_samples: int | None  # None marks exact enumeration
    rows: list[CurveRow] = field(default_factory=list)

    @property
    def average_ratio(self) -> float:
        vals = [r.ratio for r in self.rows if r.flags == "" and math.isfinite(r.ratio)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def n_excluded(self) -> int:
        return sum(1 for r in self.rows if r.flags != "" or not math.isfinite(r.ratio))


@dataclass
class SweepSpec:
    """What to sweep. Defaults: all history lengths (0 is kept as a sanity
    row and excluded from averages), metric tv, a single uncorrupted
    100k-sample Monte-Carlo estimate, mode picked by enumeration feasibility.
    """

    kind: str  # eb_m | eb_c
    metrics: tuple[str, ...] = ("tv",)
    l_values: tuple[int, ...] | None = None
    corrupt_rates: tuple[float, ...] = (0.0,)
    n_samples: tuple[int, ...] = (100_000,)
    mode: str = "auto"  # auto | exact | mc
    reference: str = "auto"  # auto | exact | counted (marginal route only)
    seed: int = 0
    cap: int = ENUMERATION_CAP

    def __post_init__(self):
        if self.kind not in ("eb_m", "eb_c"):
            raise ConfigError(f"unknown sweep kind {self.kind!r}")
        for m in self.metrics:
            if m not in METRIC_NAMES:
                raise ConfigError(f"unknown metric {m!r}")
        if not self.metrics:
            raise ConfigError("need at least one metric")
        if self.mode not in ("auto", "exact", "mc"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.reference not in ("auto", "exact", "counted"):
            raise ConfigError(f"unknown reference {self.reference!r}")
        for c in self.corrupt_rates:
            if not (0.0 <= c <= 1.0):
                raise ConfigError("corrupt rates must lie in [0, 1]")
        if self.kind == "eb_m" and tuple(self.corrupt_rates) != (0.0,):
            raise ConfigError("history corruption applies to the conditional route only")
        for n in self.n_samples:
            if n < 1:
                raise ConfigError("sample counts must be positive")


def _resolve_ls(spec: SweepSpec, max_len: int) -> list[int]:
    if spec.l_values is None:
        return list(range(max_len))
    ls = sorted(set(int(l) for l in spec.l_values))
    if not ls:
        raise ConfigError("the l-range must name at least one history length")
    if ls[0] < 0 or ls[-1] >= max_len:
        raise ConfigError(f"history lengths must lie in [0, {max_len - 1}]")
    return ls


def _exact_feasible(vocab_size: int, max_l: int, cap: int) -> bool:
    return vocab_size**max_l <= cap


def _ratio_to_row(l: int, r: Ratio) -> CurveRow:
    return CurveRow(l, r.numerator, r.denominator, r.value, r.flag)


def sweep(model: SequenceModel, oracle_or_corpus, spec: SweepSpec) -> list[DeviationCurve]:
    """One curve per (metric, corrupt-rate, sample-count) combination.

    Monte-Carlo draws use labeled streams so that any row is independently
    recomputable from (seed, kind, l, corrupt_rate, n):

    - model sequences:   stream(seed, f"sweep/sample/model/n={n}")
    - oracle sequences:  stream(seed, f"sweep/sample/data/n={n}")
    - history corruption: stream(seed, f"sweep/corrupt/n={n}/c={c!r}")

    Length-l histories are the first l columns of the sampled sequences
    (bit-identical to sampling only l columns from the same stream), the same
    sampled set serving every metric and corruption rate at that sample
    count. Corruption is drawn once over the first max(l-range) columns, so
    the corrupted history at length l is the first l columns of that one
    corrupted matrix.
    """
    if spec.kind == "eb_m":
        return _sweep_marginal(model, oracle_or_corpus, spec)
    if not isinstance(oracle_or_corpus, SequenceModel):
        raise ValueError("the conditional route needs a queryable oracle model")
    return _sweep_conditional(model, oracle_or_corpus, spec)


def _sweep_marginal(model: SequenceModel, oracle_or_corpus, spec: SweepSpec) -> list[DeviationCurve]:
    ls = _resolve_ls(spec, model.max_len)
    synthetic = isinstance(oracle_or_corpus, SequenceModel)
    mode = spec.mode
    if mode == "auto":
        mode = (
            "exact"
            if synthetic and _exact_feasible(model.vocab.size, max(ls, default=0), spec.cap)
            else "mc"
        )
    if mode == "exact":
        if not synthetic:
            raise ConfigError("exact marginal sweeps need a queryable oracle model")
        oracle = oracle_or_corpus
        curves = [DeviationCurve("eb_m", m, 0.0, None) for m in spec.metrics]
        for l in ls:
            ref = exact_marginal(oracle, oracle, l, cap=spec.cap).dist
            own = exact_marginal(model, model, l, cap=spec.cap).dist
            under_data = exact_marginal(model, oracle, l, cap=spec.cap).dist
            for curve in curves:
                d = DIVERGENCES[curve.metric]
                num, den = d(own, ref), d(under_data, ref)
                curve.rows.append(_row_from_pair(l, num, den, None, None, exact=True))
        return curves

    reference = spec.reference
    if reference == "auto":
        reference = (
            "exact"
            if synthetic and _exact_feasible(model.vocab.size, max(ls, default=0), spec.cap)
            else "counted"
        )
    if reference == "exact" and not synthetic:
        raise ConfigError("an exact reference needs a queryable oracle model")
    curves = []
    for n in spec.n_samples:
        S_model = model.sample_sequences(n, stream(spec.seed, f"sweep/sample/model/n={n}"))
        if synthetic:
            S_data = oracle_or_corpus.sample_sequences(n, stream(spec.seed, f"sweep/sample/data/n={n}"))
        else:
            S_data = np.asarray(oracle_or_corpus, dtype=np.int64)
        per_metric = {m: DeviationCurve("eb_m", m, 0.0, n) for m in spec.metrics}
        for l in ls:
            if reference == "exact":
                ref = exact_marginal(oracle_or_corpus, oracle_or_corpus, l, cap=spec.cap).dist
            else:
                ref = estimate_marginal_counted(S_data, l, model.vocab.size).dist
            M_own = model.batch_conditional(S_model[:, :l])
            M_data = model.batch_conditional(S_data[:, :l])
            mean_own = _chunked_mean_rows(M_own)
            mean_data = _chunked_mean_rows(M_data)
            for m, curve in per_metric.items():
                d = DIVERGENCES[m]
                num, den = d(mean_own, ref), d(mean_data, ref)
                num_se = _block_mgd_se(M_own, ref, m)
                den_se = _block_mgd_se(M_data, ref, m)
                curve.rows.append(_row_from_pair(l, num, den, num_se, den_se, exact=False))
        curves.extend(per_metric.values())
    return curves


def _sweep_conditional(
    model: SequenceModel, oracle: SequenceModel, spec: SweepSpec
) -> list[DeviationCurve]:
    ls = _resolve_ls(spec, model.max_len)
    mode = spec.mode
    if mode == "auto":
        mode = "exact" if _exact_feasible(model.vocab.size, max(ls, default=0), spec.cap) else "mc"
    if mode == "exact":
        curves = []
        for c in spec.corrupt_rates:
            per_metric = {m: DeviationCurve("eb_c", m, c, None) for m in spec.metrics}
            for l in ls:
                for m, curve in per_metric.items():
                    num = _cgd_exact(model, oracle, model, l, m, c, spec.cap)
                    den = _cgd_exact(model, oracle, oracle, l, m, 0.0, spec.cap)
                    curve.rows.append(_row_from_pair(l, num, den, None, None, exact=True))
            curves.extend(per_metric.values())
        return curves

    curves = []
    max_l = max(ls, default=0)
    for n in spec.n_samples:
        S_model = model.sample_sequences(n, stream(spec.seed, f"sweep/sample/model/n={n}"))
        S_data = oracle.sample_sequences(n, stream(spec.seed, f"sweep/sample/data/n={n}"))
        data_vals = _traced_cgd_values(model, oracle, S_data[:, :max_l], ls, spec.metrics)
        data_side = {key: _mean_and_se(v) for key, v in data_vals.items()}
        del data_vals
        for c in spec.corrupt_rates:
            H_own = S_model[:, :max_l]
            if c > 0.0:
                H_own = corrupt_histories(
                    H_own,
                    c,
                    stream(spec.seed, f"sweep/corrupt/n={n}/c={c!r}"),
                    model.vocab.size,
                )
            own_vals = _traced_cgd_values(model, oracle, H_own, ls, spec.metrics)
            per_metric = {m: DeviationCurve("eb_c", m, c, n) for m in spec.metrics}
            for l in ls:
                for m, curve in per_metric.items():
                    num, num_se = _mean_and_se(own_vals[(l, m)])
                    den, den_se = data_side[(l, m)]
                    curve.rows.append(_row_from_pair(l, num, den, num_se, den_se, exact=False))
            curves.extend(per_metric.values())
    return curves


def _row_from_pair(
    l: int,
    num: float,
    den: float,
    num_se: float | None,
    den_se: float | None,
    exact: bool,
) -> CurveRow:
    """Assemble one curve row; length 0 is the sanity row with ratio 1 by
    construction (both history distributions degenerate to the empty
    history), and exact-mode degeneracy becomes a flag instead of an error so
    one bad length cannot abort a whole sweep."""
    if l == 0:
        return CurveRow(0, num, den, 1.0, "sanity")
    if exact:
        try:
            r = ratio_exact(num, den)
        except DegenerateRatioError:
            return CurveRow(l, num, den, math.nan, "degenerate")
    else:
        r = ratio_mc(num, den, num_se, den_se)
    return _ratio_to_row(l, r)


# ---------------------------------------------------------------------------
# Curve output
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "l",
    "metric",
    "corrupt_rate",
    "n_samples",
    "mgd_or_cgd_model_hist",
    "mgd_or_cgd_data_hist",
    "ratio",
    "flags",
)


def _fmt_float(x: float) -> str:
    # repr of a Python float round-trips exactly, so CSV consumers can
    # compare recomputed rows bitwise.
    return repr(float(x))


def curves_to_csv(curves: list[DeviationCurve]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for curve in curves:
        for r in curve.rows:
            lines.append(
                ",".join(
                    (
                        str(r.l),
                        curve.metric,
                        _fmt_float(curve.corrupt_rate),
                        "" if curve.n_samples is None else str(curve.n_samples),
                        _fmt_float(r.value_model_hist),
                        _fmt_float(r.value_data_hist),
                        _fmt_float(r.ratio),
                        r.flags,
                    )
                )
            )
    return "\n".join(lines) + "\n"


def write_curves_csv(curves: list[DeviationCurve], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(curves_to_csv(curves))


def _json_num(x: float):
    return x if math.isfinite(x) else repr(float(x))


def curves_summary(curves: list[DeviationCurve]) -> dict:
    """Per-curve and per-metric average ratios; excluded-row counts make the
    averaging base explicit."""
    out_curves = []
    per_metric: dict[str, list[float]] = {}
    for curve in curves:
        avg = curve.average_ratio
        out_curves.append(
            {
                "kind": curve.kind,
                "metric": curve.metric,
                "corrupt_rate": curve.corrupt_rate,
                "n_samples": curve.n_samples,
                "average_ratio": _json_num(avg),
                "n_rows": len(curve.rows),
                "n_excluded": curve.n_excluded,
                "rows": [
                    {
                        "l": r.l,
                        "value_model_hist": _json_num(r.value_model_hist),
                        "value_data_hist": _json_num(r.value_data_hist),
                        "ratio": _json_num(r.ratio),
                        "flags": r.flags,
                    }
                    for r in curve.rows
                ],
            }
        )
        if math.isfinite(avg):
            per_metric.setdefault(curve.metric, []).append(avg)
    return {
        "curves": out_curves,
        "per_metric_average_ratio": {
            m: float(np.mean(v)) for m, v in sorted(per_metric.items())
        },
    }
