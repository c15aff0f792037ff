"""Config-driven experiment harness.

A single JSON document describes an experiment: vocabulary, lengths, how to
build the data-generating oracle and the student model, how to train, and
what to measure. Runs emit model checkpoints, deviation-curve CSVs, a JSON
summary, and a manifest from which the whole run can be replayed and checked
byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .bias import SweepSpec, curves_summary, sweep, write_curves_csv
from .dist import Vocab
from .errors import ConfigError, SeqBiasError
from .estimation import ENUMERATION_CAP
from .fixtures import FIXTURES, load_fixture
from .models import RecurrentLM, SequenceModel, TabularMarkovModel
from .rng import stream
from .serialize import load_model, save_model
from .training import TrainConfig, perplexity, train

CONFIG_VERSION = 1
DEFAULT_UNK = "<unk>"


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


@dataclass
class Corpus:
    sequences: np.ndarray  # (n, max_len) int64
    vocab: Vocab

    @property
    def max_len(self) -> int:
        return self.sequences.shape[1]


class CorpusSampler:
    """Draw-with-replacement view of a corpus, quacking like a sequence
    model's sampler so training can consume real data."""

    def __init__(self, corpus: Corpus):
        self.vocab = corpus.vocab
        self.max_len = corpus.max_len
        self._seqs = corpus.sequences

    def sample_sequences(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self._seqs.shape[0], size=n)
        return self._seqs[idx]


def ingest_corpus(path, vocab, max_len: int, unk_token: str = DEFAULT_UNK) -> Corpus:
    """Read whitespace-tokenized lines: shorter than max_len dropped, longer
    truncated, out-of-vocabulary tokens mapped to the unk token."""
    if not isinstance(vocab, Vocab):
        vocab = load_vocab_file(vocab)
    index = {t: i for i, t in enumerate(vocab.tokens)}
    unk_id = index.get(unk_token)
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            toks = line.split()
            if len(toks) < max_len:
                continue
            row = []
            for t in toks[:max_len]:
                i = index.get(t)
                if i is None:
                    if unk_id is None:
                        raise ValueError(
                            f"out-of-vocabulary token {t!r} and no {unk_token!r} in the vocabulary"
                        )
                    i = unk_id
                row.append(i)
            rows.append(row)
    if not rows:
        raise ValueError(f"no usable sequences of length >= {max_len} in {path}")
    return Corpus(np.asarray(rows, dtype=np.int64), vocab)


def load_vocab_file(path) -> Vocab:
    with open(path, encoding="utf-8") as f:
        tokens = [line.strip() for line in f if line.strip()]
    return Vocab(tuple(tokens))


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

_MEASURE_DEFAULTS = {
    "routes": ["eb-c"],
    "metrics": ["tv", "js", "gd"],
    "l_values": None,
    "corrupt_rates": [0.0],
    "n_samples": [100_000],
    "mode": "auto",
    "reference": "auto",
    "cap": ENUMERATION_CAP,
}


@dataclass
class ExperimentConfig:
    raw: dict
    base_seed: int
    out_dir: str | None
    vocab_spec: dict | None
    max_len: int | None
    oracle_spec: dict
    student_spec: dict
    corpus_spec: dict | None
    measure: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def load_config(source) -> ExperimentConfig:
    """Parse and validate an experiment config (path, file object, or dict)."""
    if isinstance(source, dict):
        doc = source
    else:
        try:
            if hasattr(source, "read"):
                doc = json.load(source)
            else:
                with open(source, encoding="utf-8") as f:
                    doc = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    _require(isinstance(doc, dict), "config root must be a JSON object")
    version = doc.get("config_version")
    _require(
        version == CONFIG_VERSION,
        f"config_version must be {CONFIG_VERSION}, got {version!r}",
    )
    known = {
        "config_version",
        "base_seed",
        "out_dir",
        "vocab",
        "max_len",
        "oracle",
        "student",
        "corpus",
        "measure",
    }
    unknown = set(doc) - known
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")

    base_seed = doc.get("base_seed", 0)
    _require(isinstance(base_seed, int), "base_seed must be an integer")
    oracle_spec = doc.get("oracle")
    _require(isinstance(oracle_spec, dict) and "kind" in oracle_spec, "oracle spec with a kind is required")
    student_spec = doc.get("student", {"kind": "oracle"})
    _require(isinstance(student_spec, dict) and "kind" in student_spec, "student spec needs a kind")

    measure = dict(_MEASURE_DEFAULTS)
    user_measure = doc.get("measure", {})
    _require(isinstance(user_measure, dict), "measure must be an object")
    unknown_m = set(user_measure) - set(_MEASURE_DEFAULTS)
    _require(not unknown_m, f"unknown measure keys: {sorted(unknown_m)}")
    measure.update(user_measure)
    for route in measure["routes"]:
        _require(route in ("eb-m", "eb-c"), f"unknown measurement route {route!r}")

    max_len = doc.get("max_len")
    _require(
        max_len is None or (isinstance(max_len, int) and max_len >= 1),
        "max_len must be a positive integer",
    )
    vocab_spec = doc.get("vocab")
    corpus_spec = doc.get("corpus")
    if corpus_spec is not None:
        _require(isinstance(corpus_spec, dict) and "path" in corpus_spec, "corpus spec needs a path")
    return ExperimentConfig(
        raw=doc,
        base_seed=base_seed,
        out_dir=doc.get("out_dir"),
        vocab_spec=vocab_spec,
        max_len=max_len,
        oracle_spec=oracle_spec,
        student_spec=student_spec,
        corpus_spec=corpus_spec,
        measure=measure,
    )


# ---------------------------------------------------------------------------
# Model building
# ---------------------------------------------------------------------------


def _resolve_vocab(config: ExperimentConfig) -> Vocab | None:
    spec = config.vocab_spec
    if spec is None:
        return None
    if isinstance(spec, dict) and "size" in spec:
        return Vocab.synthetic(int(spec["size"]))
    if isinstance(spec, dict) and "file" in spec:
        return load_vocab_file(spec["file"])
    if isinstance(spec, dict) and "tokens" in spec:
        return Vocab(tuple(spec["tokens"]))
    raise ConfigError("vocab spec must give size, file, or tokens")


def _build_oracle(config: ExperimentConfig, vocab: Vocab | None):
    """Returns (oracle_model_or_None, fixture_student_or_None, corpus_or_None, vocab, max_len)."""
    spec = config.oracle_spec
    kind = spec["kind"]
    seed = spec.get("seed", config.base_seed)
    if kind == "fixture":
        name = spec.get("name")
        _require(name in FIXTURES, f"unknown fixture {name!r}; available: {sorted(FIXTURES)}")
        oracle, crafted = load_fixture(name)
        _require(
            vocab is None or vocab.size == oracle.vocab.size,
            "config vocab conflicts with the fixture's vocabulary",
        )
        _require(
            config.max_len is None or config.max_len == oracle.max_len,
            "config max_len conflicts with the fixture's length",
        )
        return oracle, crafted, None, oracle.vocab, oracle.max_len
    if kind == "corpus" or kind == "file" or kind in ("random-recurrent", "random-tabular"):
        _require(config.max_len is not None or kind in ("file",), "max_len is required")
    if kind == "random-recurrent":
        _require(vocab is not None, "a vocab spec is required for a random recurrent oracle")
        oracle = RecurrentLM.random(
            vocab,
            config.max_len,
            int(spec.get("hidden_dim", 32)),
            stream(seed, "oracle/init"),
            cell=spec.get("cell", "lstm"),
            emb_dim=spec.get("emb_dim"),
            # A freshly trained net needs small weights, but an oracle must
            # have sharp, structured conditionals, so it defaults to unit
            # normal draws.
            init=spec.get("init", "normal"),
            init_scale=float(spec.get("init_scale", 1.0)),
        )
        return oracle, None, None, vocab, config.max_len
    if kind == "random-tabular":
        _require(vocab is not None, "a vocab spec is required for a random tabular oracle")
        order = spec.get("order")
        oracle = TabularMarkovModel.random(
            vocab,
            config.max_len,
            order,
            stream(seed, "oracle/init"),
            concentration=float(spec.get("concentration", 1.0)),
        )
        return oracle, None, None, vocab, config.max_len
    if kind == "file":
        _require("path" in spec, "file oracle needs a path")
        oracle = load_model(spec["path"])
        _require(
            vocab is None or vocab.tokens == oracle.vocab.tokens,
            "config vocab conflicts with the oracle checkpoint",
        )
        _require(
            config.max_len is None or config.max_len == oracle.max_len,
            "config max_len conflicts with the oracle checkpoint",
        )
        return oracle, None, None, oracle.vocab, oracle.max_len
    if kind == "corpus":
        _require(config.corpus_spec is not None, "oracle kind corpus needs a corpus spec")
        _require(vocab is not None, "a vocab spec (file) is required for corpus data")
        corpus = ingest_corpus(
            config.corpus_spec["path"],
            vocab,
            config.max_len,
            config.corpus_spec.get("unk_token", DEFAULT_UNK),
        )
        return None, None, corpus, vocab, config.max_len
    raise ConfigError(f"unknown oracle kind {kind!r}")


def _build_student(
    config: ExperimentConfig,
    oracle: SequenceModel | None,
    fixture_student: SequenceModel | None,
    corpus: Corpus | None,
    vocab: Vocab,
    max_len: int,
):
    """Returns (student, train_config_or_None). Training happens in run_experiment."""
    spec = config.student_spec
    kind = spec["kind"]
    if kind == "fixture":
        _require(fixture_student is not None, "student kind fixture needs an oracle fixture")
        return fixture_student, None
    if kind == "oracle":
        _require(oracle is not None, "student kind oracle needs a queryable oracle")
        return oracle, None
    if kind == "file":
        _require("path" in spec, "file student needs a path")
        student = load_model(spec["path"])
        _require(
            student.vocab.size == vocab.size and student.max_len == max_len,
            "student checkpoint conflicts with the configured vocab/length",
        )
        return student, None
    if kind == "train":
        train_doc = dict(spec.get("train", {}))
        train_doc.setdefault("seed", config.base_seed)
        try:
            tc = TrainConfig(**train_doc)
        except TypeError as e:
            raise ConfigError(f"bad train config: {e}") from e
        model_kind = spec.get("model", "recurrent")
        if model_kind == "recurrent":
            student = RecurrentLM.random(
                vocab,
                max_len,
                int(spec.get("hidden_dim", 32)),
                stream(config.base_seed, "student/init"),
                cell=spec.get("cell", "lstm"),
                emb_dim=spec.get("emb_dim"),
                init=spec.get("init", "uniform"),
                init_scale=float(spec.get("init_scale", 0.08)),
            )
        elif model_kind == "tabular":
            student = TabularMarkovModel.random(
                vocab, max_len, spec.get("order"), stream(config.base_seed, "student/init")
            )
        else:
            raise ConfigError(f"unknown trainable student model {model_kind!r}")
        return student, tc
    raise ConfigError(f"unknown student kind {kind!r}")


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: str, doc: dict) -> None:
    # allow_nan=False: non-finite values must be stringified upstream, never
    # leak into the file as bare Infinity/NaN (which is not valid JSON).
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def _route_spec(config: ExperimentConfig, route: str) -> SweepSpec:
    m = config.measure
    kind = route.replace("-", "_")
    return SweepSpec(
        kind=kind,
        metrics=tuple(m["metrics"]),
        l_values=None if m["l_values"] is None else tuple(m["l_values"]),
        # Corruption perturbs model histories on the conditional route only.
        corrupt_rates=tuple(m["corrupt_rates"]) if kind == "eb_c" else (0.0,),
        n_samples=tuple(m["n_samples"]),
        mode=m["mode"],
        reference=m["reference"],
        seed=config.base_seed,
        cap=int(m["cap"]),
    )


class RunResult:
    def __init__(self, out_dir: str, manifest: dict):
        self.out_dir = out_dir
        self.manifest = manifest
        self.summary_path = os.path.join(out_dir, "summary.json")

    @property
    def ok(self) -> bool:
        return self.manifest["status"] == "ok"


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | None = None,
    threads: int | None = None,
    stages: tuple[str, ...] = ("train", "measure"),
) -> RunResult:
    """Build, train, measure, and write all artifacts plus a replayable manifest.

    Any failure still produces a manifest (status "failed") and a FAILED
    marker so partial outputs are never mistaken for a complete run.
    """
    out = out_dir or config.out_dir
    _require(out is not None, "an output directory is required (config out_dir or --out)")
    os.makedirs(out, exist_ok=True)
    effective_threads = _apply_threads(threads)
    manifest: dict = {
        "manifest_version": 1,
        "config": config.raw,
        "config_hash": config.config_hash,
        "base_seed": config.base_seed,
        "threads": effective_threads,
        "stages": list(stages),
        "versions": {
            "package": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "status": "failed",
        "error": None,
        "timings_s": {},
        "outputs": {},
    }
    outputs: dict[str, dict] = manifest["outputs"]
    failed_marker = os.path.join(out, "FAILED")

    def _record(name: str, deterministic: bool = True) -> None:
        outputs[name] = {
            "sha256": _sha256_file(os.path.join(out, name)),
            "deterministic": deterministic,
        }

    t_start = time.perf_counter()
    try:
        vocab = _resolve_vocab(config)
        oracle, fixture_student, corpus, vocab, max_len = _build_oracle(config, vocab)
        student, train_config = _build_student(
            config, oracle, fixture_student, corpus, vocab, max_len
        )
        if oracle is not None:
            save_model(oracle, os.path.join(out, "oracle.json"))
            _record("oracle.json")

        if "train" in stages and train_config is not None:
            data_source = oracle if oracle is not None else CorpusSampler(corpus)
            t0 = time.perf_counter()
            report = train(student, data_source, train_config)
            manifest["timings_s"]["train"] = time.perf_counter() - t0
            doc = report.to_dict()
            # Wall time lives in the manifest; the report file stays
            # deterministic so replays can compare it byte-for-byte.
            manifest["timings_s"]["train_report_wall"] = doc.pop("wall_time_s")
            _write_json(os.path.join(out, "train_report.json"), doc)
            _record("train_report.json")
        save_model(student, os.path.join(out, "student.json"))
        _record("student.json")

        summary: dict = {"config_hash": config.config_hash, "routes": {}}
        if "measure" in stages:
            t0 = time.perf_counter()
            for route in config.measure["routes"]:
                spec = _route_spec(config, route)
                if spec.kind == "eb_c":
                    _require(oracle is not None, "the conditional route needs a queryable oracle")
                    curves = sweep(student, oracle, spec)
                else:
                    target = oracle if oracle is not None else corpus.sequences
                    curves = sweep(student, target, spec)
                name = f"curves_{spec.kind}.csv"
                write_curves_csv(curves, os.path.join(out, name))
                _record(name)
                summary["routes"][spec.kind] = curves_summary(curves)
            manifest["timings_s"]["measure"] = time.perf_counter() - t0
        _write_json(os.path.join(out, "summary.json"), summary)
        _record("summary.json")
        manifest["status"] = "ok"
        if os.path.exists(failed_marker):
            os.remove(failed_marker)
    except Exception as e:
        manifest["error"] = f"{type(e).__name__}: {e}"
        with open(failed_marker, "w", encoding="utf-8") as f:
            f.write(manifest["error"] + "\n")
        raise
    finally:
        manifest["timings_s"]["total"] = time.perf_counter() - t_start
        _write_json(os.path.join(out, "manifest.json"), manifest)
    return RunResult(out, manifest)


def _apply_threads(threads: int | None) -> int | None:
    """Pin BLAS pools when asked; the count is recorded for replay because
    reduction order inside matrix kernels can depend on it."""
    if threads is None:
        return None
    import threadpoolctl

    threadpoolctl.threadpool_limits(limits=int(threads))
    return int(threads)


def replay(manifest_path: str, out_dir: str, threads: int | None = None) -> list[tuple[str, bool]]:
    """Re-run a manifest's config and compare every deterministic output.

    Returns (name, matches) pairs; byte-identity is checked through sha256.
    """
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read manifest: {e}") from e
    for key in ("config", "outputs", "stages"):
        if key not in manifest:
            raise ConfigError(f"manifest is missing {key!r}")
    config = load_config(manifest["config"])
    if threads is None:
        threads = manifest.get("threads")
    result = run_experiment(config, out_dir, threads, stages=tuple(manifest["stages"]))
    checks = []
    for name, entry in sorted(manifest["outputs"].items()):
        if not entry.get("deterministic", False):
            continue
        new = result.manifest["outputs"].get(name)
        checks.append((name, new is not None and new["sha256"] == entry["sha256"]))
    return checks


# ---------------------------------------------------------------------------
# Completion and perplexity helpers
# ---------------------------------------------------------------------------


def complete(
    model: SequenceModel,
    source: str,
    n: int,
    seed: int,
    prefix_len: int = 10,
    corpus: Corpus | None = None,
) -> list[tuple[list[str], list[str]]]:
    """Sample n continuations of length-``prefix_len`` prefixes drawn from
    model samples, corpus rows, or uniform random tokens."""
    if prefix_len >= model.max_len:
        raise ValueError(f"prefix length {prefix_len} must be < max_len {model.max_len}")
    rng = stream(seed, f"complete/{source}")
    if source == "model":
        prefixes = model.sample_prefixes(n, prefix_len, rng)
    elif source == "random":
        prefixes = rng.integers(0, model.vocab.size, size=(n, prefix_len))
    elif source == "corpus":
        if corpus is None:
            raise ValueError("corpus source requires a configured corpus")
        idx = rng.integers(0, corpus.sequences.shape[0], size=n)
        prefixes = corpus.sequences[idx, :prefix_len]
    else:
        raise ValueError(f"unknown completion source {source!r}")
    full = model.complete_sequences(prefixes, stream(seed, "complete/continue"))
    toks = model.vocab.tokens
    out = []
    for row_p, row_f in zip(prefixes, full):
        out.append(
            (
                [toks[t] for t in row_p],
                [toks[t] for t in row_f[prefix_len:]],
            )
        )
    return out


def ppl_eval(
    model: SequenceModel,
    oracle: SequenceModel | None = None,
    corpus: Corpus | None = None,
    n: int = 10_000,
    seed: int = 0,
) -> float:
    """Perplexity on corpus rows when available, else on fresh oracle samples."""
    if corpus is not None:
        return perplexity(model, corpus.sequences)
    if oracle is None:
        raise ValueError("perplexity needs a corpus or an oracle to sample from")
    return perplexity(model, oracle.sample_sequences(n, stream(seed, "ppl/eval")))
