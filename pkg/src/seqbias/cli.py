"""Command-line front end.

Global flags pick the config, seed, output directory, and BLAS thread pin;
subcommands run the pipeline stages. Exit codes: 0 success, 1 usage or
config problems, 2 runtime failure.
"""

from __future__ import annotations

import json
import os

import click

from .errors import ConfigError, SeqBiasError, SerializationError
from .harness import (
    ExperimentConfig,
    complete as complete_rows,
    ingest_corpus,
    load_config,
    ppl_eval,
    replay as replay_run,
    run_experiment,
)
from .serialize import load_model


@click.group()
@click.option("--config", "config_path", type=str, default=None, help="Experiment config JSON.")
@click.option("--seed", type=int, default=None, help="Override the config base_seed.")
@click.option("--out", "out_dir", type=str, default=None, help="Output directory.")
@click.option("--threads", type=int, default=None, help="Pin BLAS pools to N threads.")
@click.pass_context
def cli(ctx, config_path, seed, out_dir, threads):
    ctx.obj = {
        "config_path": config_path,
        "seed": seed,
        "out": out_dir,
        "threads": threads,
    }


def _load(ctx, routes: list[str] | None = None) -> ExperimentConfig:
    obj = ctx.obj
    if obj["config_path"] is None:
        raise ConfigError("this command needs --config")
    with open(obj["config_path"], encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    if obj["seed"] is not None:
        raw["base_seed"] = obj["seed"]
    if routes is not None:
        raw.setdefault("measure", {})["routes"] = routes
    return load_config(raw)


def _run(ctx, config: ExperimentConfig, stages) -> None:
    result = run_experiment(config, ctx.obj["out"], ctx.obj["threads"], stages=stages)
    click.echo(f"run complete: {result.out_dir}")
    if "measure" in stages and os.path.exists(result.summary_path):
        with open(result.summary_path, encoding="utf-8") as f:
            summary = json.load(f)
        for kind, body in summary.get("routes", {}).items():
            for metric, avg in body.get("per_metric_average_ratio", {}).items():
                click.echo(f"{kind} average ratio [{metric}]: {avg}")


@cli.command()
@click.pass_context
def train(ctx):
    """Build the oracle and student, train, and write checkpoints."""
    _run(ctx, _load(ctx), stages=("train",))


@cli.command(name="eb-m")
@click.pass_context
def eb_m_cmd(ctx):
    """Full pipeline, measuring the marginal-route bias rate."""
    _run(ctx, _load(ctx, routes=["eb-m"]), stages=("train", "measure"))


@cli.command(name="eb-c")
@click.pass_context
def eb_c_cmd(ctx):
    """Full pipeline, measuring the conditional-route bias rate."""
    _run(ctx, _load(ctx, routes=["eb-c"]), stages=("train", "measure"))


@cli.command(name="sweep")
@click.pass_context
def sweep_cmd(ctx):
    """Full pipeline over every route the config asks for."""
    _run(ctx, _load(ctx), stages=("train", "measure"))


@cli.command(name="complete")
@click.argument("model_path", type=str)
@click.option("--source", type=click.Choice(["model", "corpus", "random"]), default="model")
@click.option("-n", "n", type=int, default=5, help="Number of prefixes.")
@click.option("--prefix-len", type=int, default=10)
@click.pass_context
def complete_cmd(ctx, model_path, source, n, prefix_len):
    """Print PREFIX | CONTINUATION pairs sampled from a checkpoint."""
    model = load_model(model_path)
    corpus = None
    if source == "corpus":
        if ctx.obj["config_path"] is None:
            raise ConfigError("corpus completions need --config with a corpus spec")
        config = _load(ctx)
        if config.corpus_spec is None:
            raise ConfigError("the config has no corpus spec")
        corpus = ingest_corpus(
            config.corpus_spec["path"],
            model.vocab,
            model.max_len,
            config.corpus_spec.get("unk_token", "<unk>"),
        )
    seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else 0
    for prefix, continuation in complete_rows(model, source, n, seed, prefix_len, corpus):
        click.echo(" ".join(prefix) + " | " + " ".join(continuation))


@cli.command(name="ppl")
@click.argument("model_path", type=str)
@click.option("-n", "n", type=int, default=10_000, help="Oracle samples to evaluate on.")
@click.pass_context
def ppl_cmd(ctx, model_path, n):
    """Perplexity of a checkpoint on the config's corpus or oracle samples."""
    from .harness import _build_oracle, _resolve_vocab

    model = load_model(model_path)
    config = _load(ctx)
    vocab = _resolve_vocab(config)
    oracle, _, corpus, _, _ = _build_oracle(config, vocab)
    seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else config.base_seed
    value = ppl_eval(model, oracle, corpus, n, seed)
    click.echo(f"perplexity: {value!r}")


@cli.command(name="replay")
@click.argument("manifest_path", type=str)
@click.pass_context
def replay_cmd(ctx, manifest_path):
    """Re-run a manifest and verify deterministic outputs byte-for-byte."""
    out = ctx.obj["out"]
    if out is None:
        base = os.path.dirname(os.path.abspath(manifest_path)) or "."
        out = base.rstrip("/") + "-replay"
    checks = replay_run(manifest_path, out, ctx.obj["threads"])
    bad = [name for name, ok in checks if not ok]
    for name, ok in checks:
        click.echo(f"{'match   ' if ok else 'MISMATCH'} {name}")
    if bad:
        raise SeqBiasError(f"replay outputs differ: {', '.join(bad)}")
    click.echo(f"replay verified: {len(checks)} outputs byte-identical ({out})")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        e.show()
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except (ConfigError, SerializationError, OSError, ValueError, KeyError) as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except SeqBiasError as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except Exception as e:  # runtime failures keep a distinct exit code
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
