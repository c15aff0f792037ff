"""Experiment harness: ingestion, config validation, orchestration, CLI.

Full-pipeline checks run on the tiny analytic fixtures (exact mode), so the
whole file stays fast while still writing real manifests and CSVs to disk.
"""

import json
import math
import os

import numpy as np
import pytest

from seqbias.cli import main as cli_main
from seqbias.dist import Vocab
from seqbias.errors import ConfigError
from seqbias.fixtures import conditional_bias_pair
from seqbias.harness import (
    complete,
    config_hash,
    ingest_corpus,
    load_config,
    load_vocab_file,
    ppl_eval,
    replay,
    run_experiment,
)
from seqbias.models import TabularMarkovModel
from seqbias.serialize import load_model, save_model

VOCAB3 = Vocab(("a", "b", "<unk>"))


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def fixture_config(out_dir=None, **measure):
    m = {"routes": ["eb-c"], "metrics": ["tv"], "mode": "exact"}
    m.update(measure)
    doc = {
        "config_version": 1,
        "base_seed": 5,
        "oracle": {"kind": "fixture", "name": "example2"},
        "student": {"kind": "fixture"},
        "measure": m,
    }
    if out_dir is not None:
        doc["out_dir"] = str(out_dir)
    return doc


# ---------------------------------------------------------------------------
# Corpus ingestion
# ---------------------------------------------------------------------------


def test_ingest_keeps_exact_length_lines(tmp_path):
    path = write_lines(tmp_path / "c.txt", ["a b a", "b b a"])
    corpus = ingest_corpus(path, VOCAB3, 3)
    np.testing.assert_array_equal(corpus.sequences, [[0, 1, 0], [1, 1, 0]])


def test_ingest_drops_short_and_truncates_long(tmp_path):
    path = write_lines(tmp_path / "c.txt", ["a b", "a b a b a b a b", "b a a"])
    corpus = ingest_corpus(path, VOCAB3, 3)
    # the 2-token line is gone; the 8-token line keeps its first 3
    np.testing.assert_array_equal(corpus.sequences, [[0, 1, 0], [1, 0, 0]])


def test_ingest_maps_oov_to_unk(tmp_path):
    path = write_lines(tmp_path / "c.txt", ["a zzz b"])
    corpus = ingest_corpus(path, VOCAB3, 3)
    np.testing.assert_array_equal(corpus.sequences, [[0, 2, 1]])


def test_ingest_oov_without_unk_errors(tmp_path):
    path = write_lines(tmp_path / "c.txt", ["a zzz"])
    with pytest.raises(ValueError):
        ingest_corpus(path, Vocab(("a", "b")), 2)


def test_ingest_empty_result_errors(tmp_path):
    path = write_lines(tmp_path / "c.txt", ["a b"])
    with pytest.raises(ValueError):
        ingest_corpus(path, VOCAB3, 5)


def test_load_vocab_file(tmp_path):
    path = write_lines(tmp_path / "v.txt", ["alpha", "", "beta"])
    assert load_vocab_file(path).tokens == ("alpha", "beta")


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------


def test_load_config_minimal():
    config = load_config(fixture_config())
    assert config.base_seed == 5
    assert config.measure["routes"] == ["eb-c"]
    assert config.measure["n_samples"] == [100_000]  # default filled in


def test_load_config_rejects_unknown_keys():
    doc = fixture_config()
    doc["typo_key"] = 1
    with pytest.raises(ConfigError):
        load_config(doc)
    doc = fixture_config()
    doc["measure"]["typo"] = 1
    with pytest.raises(ConfigError):
        load_config(doc)


def test_load_config_rejects_bad_version_and_routes():
    doc = fixture_config()
    doc["config_version"] = 2
    with pytest.raises(ConfigError):
        load_config(doc)
    doc = fixture_config(routes=["eb-z"])
    with pytest.raises(ConfigError):
        load_config(doc)
    with pytest.raises(ConfigError):
        load_config({"config_version": 1})  # no oracle


def test_load_config_rejects_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_config_hash_is_key_order_invariant():
    a = {"x": 1, "y": {"z": [1, 2]}}
    b = {"y": {"z": [1, 2]}, "x": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"x": 2, "y": {"z": [1, 2]}})


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------


def test_run_experiment_fixture_end_to_end(tmp_path):
    config = load_config(fixture_config(out_dir=tmp_path / "run"))
    result = run_experiment(config)
    assert result.ok
    out = result.out_dir
    for name in ("manifest.json", "summary.json", "curves_eb_c.csv", "oracle.json", "student.json"):
        assert os.path.exists(os.path.join(out, name)), name
    with open(os.path.join(out, "summary.json")) as f:
        summary = json.load(f)
    rows = summary["routes"]["eb_c"]["curves"][0]["rows"]
    by_l = {r["l"]: r for r in rows}
    assert by_l[1]["ratio"] == pytest.approx(1.8, abs=1e-12)
    assert summary["config_hash"] == config.config_hash


def test_manifest_hashes_match_files(tmp_path):
    config = load_config(fixture_config(out_dir=tmp_path / "run"))
    result = run_experiment(config)
    import hashlib

    for name, entry in result.manifest["outputs"].items():
        with open(os.path.join(result.out_dir, name), "rb") as f:
            assert hashlib.sha256(f.read()).hexdigest() == entry["sha256"], name


def test_same_config_twice_is_byte_identical(tmp_path):
    doc = fixture_config()
    r1 = run_experiment(load_config(doc), str(tmp_path / "a"))
    r2 = run_experiment(load_config(doc), str(tmp_path / "b"))
    for name in ("curves_eb_c.csv", "summary.json", "student.json", "train_report.json"):
        if name not in r1.manifest["outputs"]:
            continue
        with open(os.path.join(r1.out_dir, name), "rb") as f:
            b1 = f.read()
        with open(os.path.join(r2.out_dir, name), "rb") as f:
            b2 = f.read()
        assert b1 == b2, name


def test_replay_verifies_all_outputs(tmp_path):
    config = load_config(fixture_config(out_dir=tmp_path / "run"))
    result = run_experiment(config)
    checks = replay(os.path.join(result.out_dir, "manifest.json"), str(tmp_path / "replayed"))
    assert checks and all(ok for _, ok in checks)


def test_failed_run_leaves_marker_and_manifest(tmp_path):
    doc = fixture_config(out_dir=tmp_path / "run")
    doc["student"] = {"kind": "file", "path": str(tmp_path / "missing_model.json")}
    with pytest.raises(Exception):
        run_experiment(load_config(doc))
    out = tmp_path / "run"
    assert (out / "FAILED").exists()
    with open(out / "manifest.json") as f:
        manifest = json.load(f)
    assert manifest["status"] == "failed"
    assert manifest["error"]


def test_trained_student_run_writes_train_report(tmp_path):
    doc = {
        "config_version": 1,
        "base_seed": 3,
        "vocab": {"size": 3},
        "max_len": 4,
        "oracle": {"kind": "random-tabular"},
        "student": {
            "kind": "train",
            "model": "tabular",
            "train": {"epochs": 1, "sequences_per_epoch": 5000},
        },
        "measure": {"routes": ["eb-c"], "metrics": ["tv"], "mode": "exact"},
    }
    result = run_experiment(load_config(doc), str(tmp_path / "run"))
    with open(os.path.join(result.out_dir, "train_report.json")) as f:
        report = json.load(f)
    assert report["epochs"] == 1
    assert "wall_time_s" not in report  # timing lives in the manifest only
    assert "train_report_wall" in result.manifest["timings_s"]
    # count-MLE students can assign zero mass, so inf arrives as the string "inf"
    ppl = report["final_perplexity"]
    assert (isinstance(ppl, float) and ppl > 1.0) or ppl == "inf"


# ---------------------------------------------------------------------------
# Completion and perplexity helpers
# ---------------------------------------------------------------------------


def test_complete_shapes_and_determinism():
    _, model = conditional_bias_pair()
    a = complete(model, "model", 4, seed=9, prefix_len=1)
    b = complete(model, "model", 4, seed=9, prefix_len=1)
    assert a == b
    for prefix, continuation in a:
        assert len(prefix) == 1 and len(continuation) == 1
        assert set(prefix) <= {"A", "B"}


def test_complete_random_source_and_errors():
    _, model = conditional_bias_pair()
    rows = complete(model, "random", 10, seed=1, prefix_len=1)
    assert len(rows) == 10
    with pytest.raises(ValueError):
        complete(model, "corpus", 2, seed=1, prefix_len=1)
    with pytest.raises(ValueError):
        complete(model, "model", 2, seed=1, prefix_len=5)  # >= max_len
    with pytest.raises(ValueError):
        complete(model, "teapot", 2, seed=1, prefix_len=1)


def test_ppl_eval_prefers_corpus(tmp_path):
    oracle, model = conditional_bias_pair()
    corpus = ingest_corpus(
        write_lines(tmp_path / "c.txt", ["A A", "B B"]), Vocab(("A", "B")), 2
    )
    got = ppl_eval(model, oracle, corpus)
    # hand value: NLL = -(log .9 + log .9 + log .1 + log .5)/4
    expect = math.exp(-(math.log(0.9) + math.log(0.9) + math.log(0.1) + math.log(0.5)) / 4)
    assert got == pytest.approx(expect, rel=1e-12)
    with pytest.raises(ValueError):
        ppl_eval(model)


# ---------------------------------------------------------------------------
# CLI exit codes and wiring
# ---------------------------------------------------------------------------


def write_config(tmp_path, doc):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def test_cli_sweep_success_exit_zero(tmp_path, capsys):
    cfg = write_config(tmp_path, fixture_config())
    code = cli_main(["--config", cfg, "--out", str(tmp_path / "run"), "sweep"])
    out = capsys.readouterr().out
    assert code == 0
    assert "eb_c average ratio [tv]: 1.8" in out


def test_cli_eb_m_route_override(tmp_path):
    cfg = write_config(tmp_path, fixture_config())
    code = cli_main(["--config", cfg, "--out", str(tmp_path / "run"), "eb-m"])
    assert code == 0
    assert os.path.exists(tmp_path / "run" / "curves_eb_m.csv")
    assert not os.path.exists(tmp_path / "run" / "curves_eb_c.csv")


def test_cli_seed_override_changes_hash(tmp_path):
    cfg = write_config(tmp_path, fixture_config())
    assert cli_main(["--config", cfg, "--seed", "99", "--out", str(tmp_path / "r1"), "train"]) == 0
    with open(tmp_path / "r1" / "manifest.json") as f:
        assert json.load(f)["base_seed"] == 99


def test_cli_config_errors_exit_one(tmp_path):
    assert cli_main(["--config", str(tmp_path / "nope.json"), "sweep"]) == 1
    bad = write_config(tmp_path, {"config_version": 1})
    assert cli_main(["--config", bad, "sweep"]) == 1
    assert cli_main(["sweep"]) == 1  # no --config at all
    assert cli_main(["not-a-command"]) == 1


def test_cli_replay_roundtrip_and_mismatch_exit_two(tmp_path):
    cfg = write_config(tmp_path, fixture_config())
    assert cli_main(["--config", cfg, "--out", str(tmp_path / "run"), "sweep"]) == 0
    manifest_path = tmp_path / "run" / "manifest.json"
    assert cli_main(["--out", str(tmp_path / "rep"), "replay", str(manifest_path)]) == 0
    # tamper with a recorded hash: replay must fail with a runtime exit code
    with open(manifest_path) as f:
        manifest = json.load(f)
    name = next(iter(manifest["outputs"]))
    manifest["outputs"][name]["sha256"] = "0" * 64
    with open(manifest_path, "w") as f:
        json.dump(manifest, f)
    assert cli_main(["--out", str(tmp_path / "rep2"), "replay", str(manifest_path)]) == 2


def test_cli_complete_and_ppl(tmp_path, capsys):
    _, model = conditional_bias_pair()
    model_path = tmp_path / "model.json"
    save_model(model, model_path)
    code = cli_main(["complete", str(model_path), "-n", "3", "--prefix-len", "1"])
    out = capsys.readouterr().out
    assert code == 0
    assert len([ln for ln in out.splitlines() if " | " in ln]) == 3

    cfg = write_config(tmp_path, fixture_config())
    code = cli_main(["--config", cfg, "ppl", str(model_path), "-n", "500"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.startswith("perplexity: ")
    assert math.isfinite(float(out.split(":")[1]))
