from __future__ import annotations

import io
import json

import numpy as np
import pytest

from percept.cli import main
from percept.featureio import load_fseq, load_manifest
from percept.rewards import load_model, score_sequence


def run(*argv) -> int:
    return main([str(a) for a in argv])


def read_csv(path):
    body = "\n".join(
        line for line in path.read_text().splitlines() if not line.startswith("#")
    )
    return np.genfromtxt(io.StringIO(body), delimiter=",", names=True)


def gen_demos(tmp_path, n=6, n_test=2, d=64, seed=1):
    out = tmp_path / "demos"
    assert (
        run(
            "synth", "gen-demos", "--n", n, "--n-test", n_test, "--d", d,
            "--seed", seed, "--out-dir", out,
        )
        == 0
    )
    return out


# ---------------------------------------------------------------- exit codes


def test_no_arguments_prints_usage_and_exits_1(capsys):
    assert main([]) == 1
    assert "usage:" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert run("segment", "--bogus") == 1
    assert "usage:" in capsys.readouterr().err


def test_unknown_command_is_usage_error():
    assert run("frobnicate") == 1


def test_missing_file_is_data_error_naming_the_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = run("segment", "--manifest", missing, "--steps", 3, "--out", tmp_path / "o.json")
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_version_and_help_exit_zero(capsys):
    assert run("--version") == 0
    assert "percept" in capsys.readouterr().out
    assert run("--help") == 0


def test_infeasible_segmentation_is_data_error(tmp_path):
    out = gen_demos(tmp_path)
    # 60 frames cannot hold 40 segments of >= 2
    code = run(
        "segment", "--manifest", out / "manifest.json", "--steps", 40,
        "--out", tmp_path / "s.json",
    )
    assert code == 2


# ---------------------------------------------------------------- synth


def test_gen_demos_writes_sequences_manifest_and_snapshot(tmp_path):
    out = gen_demos(tmp_path, n=6, n_test=2)
    manifest = load_manifest(out / "manifest.json")
    assert len(manifest.split("train")) == 4
    assert len(manifest.split("test")) == 2
    seq, ann = manifest.load_entry(manifest.entries[0])
    assert seq.t == 60 and seq.d == 64
    assert ann is not None and ann.n_steps == 3
    snapshot = json.loads((out / "config.json").read_text())
    assert snapshot["command"] == "synth gen-demos"
    assert snapshot["version"] and snapshot["config"]["seed"] == 1


def test_gen_piecewise_boundaries_match_labels_at_high_snr(tmp_path):
    # the discovered splits must equal the generator's labels when steps are
    # glaringly separated
    pw = tmp_path / "pw"
    assert (
        run(
            "synth", "gen-piecewise", "--n", 5, "--t", 40, "--d", 12, "--steps", 3,
            "--snr", 100, "--min-size", 4, "--seed", 3, "--out-dir", pw,
        )
        == 0
    )
    splits = tmp_path / "splits.json"
    assert (
        run(
            "segment", "--manifest", pw / "manifest.json", "--steps", 3,
            "--min-size", 4, "--solver", "exact", "--out", splits,
        )
        == 0
    )
    results = json.loads(splits.read_text())["results"]
    assert len(results) == 5
    for row in results:
        truth = json.loads((pw / f"{row['name']}.json").read_text())
        assert row["boundaries"] == truth["boundaries"]


# ---------------------------------------------------------------- config file


def test_config_supplies_defaults_and_flags_win(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(
        json.dumps(
            {"n": 4, "t": 30, "d": 8, "steps": 2, "snr": 50, "seed": 5,
             "out-dir": str(tmp_path / "pw")}
        )
    )
    assert run("--config", conf, "synth", "gen-piecewise", "--t", 36) == 0
    snapshot = json.loads((tmp_path / "pw" / "config.json").read_text())
    assert snapshot["config"]["t"] == 36
    assert snapshot["config"]["n"] == 4
    seq = load_fseq(tmp_path / "pw" / "seq000.fseq")
    assert seq.t == 36 and seq.d == 8


def test_unknown_config_key_is_data_error(tmp_path, capsys):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"quux": 1}))
    assert run("--config", conf, "segment") == 2
    assert "quux" in capsys.readouterr().err


def test_config_without_subcommand_is_usage_error(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text("{}")
    assert run("--config", conf) == 1


# ---------------------------------------------------------------- train/score


def test_train_score_roundtrip_matches_library(tmp_path):
    out = gen_demos(tmp_path)
    model_path = tmp_path / "soft.json"
    assert (
        run(
            "train", "--manifest", out / "manifest.json", "--method", "linear",
            "--out", model_path,
        )
        == 0
    )
    trace_path = tmp_path / "trace.csv"
    fseq = out / "seq000.fseq"
    assert run("score", "--model", model_path, "--fseq", fseq, "--out", trace_path) == 0
    table = read_csv(trace_path)
    assert list(table.dtype.names) == ["frame", "step_1", "step_2", "step_3", "combined"]
    model, stats = load_model(model_path)
    ref = score_sequence(model, load_fseq(fseq), stats)
    assert np.allclose(table["combined"], ref.combined, rtol=0, atol=0)
    assert np.allclose(table["step_2"], ref.per_step[:, 1], rtol=0, atol=0)


def test_train_on_discovered_splits_and_calibration_persists(tmp_path):
    out = gen_demos(tmp_path)
    splits = tmp_path / "splits.json"
    assert run("segment", "--manifest", out / "manifest.json", "--steps", 3, "--out", splits) == 0
    model_path = tmp_path / "cal.json"
    assert (
        run(
            "train", "--manifest", out / "manifest.json", "--splits", splits,
            "--method", "linear", "--calibrate", 0.9, "--out", model_path,
        )
        == 0
    )
    model, _ = load_model(model_path)
    assert model.temperature > 1.0


def test_train_select_method_writes_gaussian_model(tmp_path):
    out = gen_demos(tmp_path)
    model_path = tmp_path / "gauss.json"
    assert (
        run(
            "train", "--manifest", out / "manifest.json", "--method", "select",
            "--top-m", 16, "--out", model_path,
        )
        == 0
    )
    payload = json.loads(model_path.read_text())
    assert payload["kind"] == "gaussian_steps"
    assert all(len(s["indices"]) == 16 for s in payload["steps"])


# ---------------------------------------------------------------- evaluation


def test_eval_reward_report_and_table(tmp_path, capsys):
    out = gen_demos(tmp_path)
    gauss = tmp_path / "gauss.json"
    run("train", "--manifest", out / "manifest.json", "--method", "select", "--out", gauss)
    report = tmp_path / "report.json"
    assert (
        run(
            "eval-reward", "--manifest", out / "manifest.json", "--model", gauss,
            "--seeds", 10, "--out", report,
        )
        == 0
    )
    assert "bernoulli" in capsys.readouterr().out
    payload = json.loads(report.read_text())
    assert payload["command"] == "eval-reward"
    methods = [r["method"] for r in payload["results"]]
    assert methods == ["gauss", "bernoulli"]


def test_eval_seg_report(tmp_path):
    pw = tmp_path / "pw"
    run(
        "synth", "gen-piecewise", "--n", 4, "--t", 40, "--d", 8, "--steps", 3,
        "--snr", 100, "--min-size", 4, "--seed", 2, "--out-dir", pw,
    )
    report = tmp_path / "seg.json"
    assert (
        run(
            "eval-seg", "--manifest", pw / "manifest.json", "--steps", 3,
            "--min-size", 4, "--seeds", 10, "--out", report,
        )
        == 0
    )
    results = json.loads(report.read_text())["results"]
    assert [r["method"] for r in results] == ["exact_dp", "ordered_random"]
    assert results[0]["average"] == 1.0


def test_baseline_subcommand_both_kinds(tmp_path):
    out = gen_demos(tmp_path)
    for kind in ("ordered-random", "bernoulli"):
        report = tmp_path / f"{kind}.json"
        assert (
            run(
                "baseline", "--manifest", out / "manifest.json", "--kind", kind,
                "--seeds", 10, "--out", report,
            )
            == 0
        )
        row = json.loads(report.read_text())["results"][0]
        assert row["method"] == kind
        assert 0.0 < row["average"] < 1.0


# ---------------------------------------------------------------- pi2


def test_pi2_train_env_truth_curve(tmp_path):
    curve_path = tmp_path / "curve.csv"
    assert (
        run(
            "pi2-train", "--reward", "env_truth", "--iters", 2, "--samples", 4,
            "--epsilon", 0.3, "--eval-episodes", 5, "--d", 32, "--seed", 0,
            "--out", curve_path,
        )
        == 0
    )
    table = read_csv(curve_path)
    assert list(table.dtype.names) == ["iteration", "mean_reward", "success_rate"]
    assert table.shape == (3,)
    assert np.all((table["success_rate"] >= 0) & (table["success_rate"] <= 1))


def test_pi2_train_with_learned_reward_model(tmp_path):
    out = gen_demos(tmp_path, d=32)
    model_path = tmp_path / "soft.json"
    run("train", "--manifest", out / "manifest.json", "--method", "linear",
        "--calibrate", 0.9, "--out", model_path)
    curve_path = tmp_path / "curve.csv"
    assert (
        run(
            "pi2-train", "--reward", model_path, "--iters", 1, "--samples", 4,
            "--eval-episodes", 5, "--d", 32, "--seed", 0, "--out", curve_path,
        )
        == 0
    )
    assert read_csv(curve_path).shape == (2,)


# ---------------------------------------------------------------- determinism


def test_identical_command_and_seed_give_identical_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        run("synth", "gen-demos", "--n", 4, "--d", 32, "--seed", 7, "--out-dir", out)
        run(
            "train", "--manifest", out / "manifest.json", "--method", "linear",
            "--out", out / "model.json",
        )
    assert (a / "seq002.fseq").read_bytes() == (b / "seq002.fseq").read_bytes()
    assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


def test_outputs_embed_version_and_config(tmp_path):
    pw = tmp_path / "pw"
    run(
        "synth", "gen-piecewise", "--n", 2, "--t", 20, "--d", 4, "--steps", 2,
        "--snr", 10, "--seed", 0, "--out-dir", pw,
    )
    splits = tmp_path / "splits.json"
    run("segment", "--manifest", pw / "manifest.json", "--steps", 2, "--out", splits)
    payload = json.loads(splits.read_text())
    assert set(payload) == {"version", "command", "config", "results"}
    snapshot = json.loads((tmp_path / "splits.config.json").read_text())
    assert snapshot["config"] == payload["config"]
