"""Quantify exposure bias in autoregressive sequence models.

Two measurement routes: the marginal route compares position-wise token
marginals under model-generated versus data histories, and the conditional
route compares next-token conditionals against a queryable oracle over both
history regimes. The ratio of the two deviations is the bias rate; a value
near one says the model keeps conditioning well on its own samples.
"""

__version__ = "0.1.0"

from .bias import (
    CurveRow,
    DeviationCurve,
    Ratio,
    SweepSpec,
    cgd,
    curves_summary,
    curves_to_csv,
    direct_marginal_gap,
    eb_c,
    eb_m,
    mgd,
    sweep,
    write_curves_csv,
)
from .dist import (
    DIVERGENCES,
    METRIC_NAMES,
    Vocab,
    as_distribution,
    greedy_mismatch,
    jensen_shannon,
    kl_divergence,
    total_variation,
)
from .errors import (
    ConfigError,
    DegenerateRatioError,
    DimensionMismatchError,
    EnumerationCapError,
    SeqBiasError,
    SerializationError,
)
from .estimation import (
    HistorySource,
    MarginalEstimate,
    corrupt_histories,
    corrupt_history,
    estimate_marginal_averaged,
    estimate_marginal_counted,
    exact_marginal,
    exact_prefix_distribution,
)
from .fixtures import FIXTURES, load_fixture
from .harness import (
    Corpus,
    ExperimentConfig,
    complete,
    ingest_corpus,
    load_config,
    ppl_eval,
    replay,
    run_experiment,
)
from .models import (
    ENUMERATION_CAP,
    PositionalUnigramModel,
    RecurrentLM,
    SequenceModel,
    TabularMarkovModel,
    enumerate_distribution,
    enumerate_prefixes,
)
from .rng import stream
from .serialize import load_model, save_model
from .training import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    mle_loss,
    perplexity,
    scheduled_replace_rate,
    train,
    train_mle,
    train_scheduled_sampling,
)

__all__ = [
    "__version__",
    "AdamState",
    "ConfigError",
    "Corpus",
    "CurveRow",
    "DegenerateRatioError",
    "DeviationCurve",
    "DimensionMismatchError",
    "DIVERGENCES",
    "ENUMERATION_CAP",
    "EnumerationCapError",
    "ExperimentConfig",
    "FIXTURES",
    "HistorySource",
    "MarginalEstimate",
    "METRIC_NAMES",
    "PositionalUnigramModel",
    "Ratio",
    "RecurrentLM",
    "SeqBiasError",
    "SequenceModel",
    "SerializationError",
    "SweepSpec",
    "TabularMarkovModel",
    "TrainConfig",
    "TrainReport",
    "Vocab",
    "adam_step",
    "as_distribution",
    "cgd",
    "complete",
    "corrupt_histories",
    "corrupt_history",
    "curves_summary",
    "curves_to_csv",
    "direct_marginal_gap",
    "eb_c",
    "eb_m",
    "enumerate_distribution",
    "enumerate_prefixes",
    "estimate_marginal_averaged",
    "estimate_marginal_counted",
    "exact_marginal",
    "exact_prefix_distribution",
    "greedy_mismatch",
    "ingest_corpus",
    "jensen_shannon",
    "kl_divergence",
    "load_config",
    "load_fixture",
    "load_model",
    "mgd",
    "mle_loss",
    "perplexity",
    "ppl_eval",
    "replay",
    "run_experiment",
    "save_model",
    "scheduled_replace_rate",
    "stream",
    "sweep",
    "total_variation",
    "train",
    "train_mle",
    "train_scheduled_sampling",
    "write_curves_csv",
]
