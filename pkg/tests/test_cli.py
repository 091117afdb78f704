import json
from pathlib import Path

import numpy as np
import pytest

from graspdiff import cli
from graspdiff.io import write_cloud

TINY_SAMPLER = ["--epochs", "2", "--width", "16", "--heads", "2", "--tokens", "2", "--batch", "32", "--bps-size", "32"]
TINY_EVAL = ["--epochs", "2", "--batch", "32", "--bps-size", "32"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def outputs(d):
    return {f.name: f.read_bytes() for f in sorted(Path(d).iterdir()) if f.name != "manifest.json"}


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--objects", 5, "--views", 1, "--grasps", 20, "--seed", 1, "--out", root / "data") == 0
    assert run("train-sampler", "--data", root / "data", *TINY_SAMPLER, "--out", root / "sp") == 0
    assert run("train-evaluator", "--data", root / "data", *TINY_EVAL, "--out", root / "ev") == 0
    meta = json.loads((root / "data" / "object_0000.json").read_text())
    cloud = np.loadtxt(root / "data" / meta["views"][0]["cloud"]) + [0.3, -0.1, 0.2]
    write_cloud(root / "cloud.txt", cloud)
    return root


def test_gen_data_deterministic(world, tmp_path):
    assert run("gen-data", "--objects", 5, "--views", 1, "--grasps", 20, "--seed", 1, "--out", tmp_path / "again") == 0
    a = json.loads((world / "data" / "manifest.json").read_text())["dataset_hash"]
    b = json.loads((tmp_path / "again" / "manifest.json").read_text())["dataset_hash"]
    assert a == b
    assert outputs(world / "data") == outputs(tmp_path / "again")


def test_manifest_contents(world):
    m = json.loads((world / "sp" / "manifest.json").read_text())
    assert m["command"] == "train-sampler" and m["seed"] == 0
    assert m["config"]["width"] == 16
    assert set(m["outputs"]) == {"sampler.gdw", "history.json"}
    assert m["weights_hash"] == m["outputs"]["sampler.gdw"]
    assert "dataset_hash" in m and "train" in m["timings"]


def test_sample_zero(world, tmp_path):
    assert run("sample", "--model", world / "sp" / "sampler.gdw", "--cloud", world / "cloud.txt", "--n", 0, "--out", tmp_path / "s") == 0
    assert json.loads((tmp_path / "s" / "grasps.json").read_text()) == []


def test_sample_score_refine(world, tmp_path):
    assert run("sample", "--model", world / "sp" / "sampler.gdw", "--cloud", world / "cloud.txt", "--n", 4, "--out", tmp_path / "s") == 0
    grasps = json.loads((tmp_path / "s" / "grasps.json").read_text())
    assert len(grasps) == 4
    assert run("score", "--model", world / "ev" / "evaluator.gdw", "--cloud", world / "cloud.txt", "--grasps", tmp_path / "s" / "grasps.json", "--out", tmp_path / "sc") == 0
    scores = json.loads((tmp_path / "sc" / "scores.json").read_text())
    assert len(scores) == 4 and all(0 < s < 1 for s in scores)
    assert run("refine", "--sampler", world / "sp" / "sampler.gdw", "--evaluator", world / "ev" / "evaluator.gdw", "--cloud", world / "cloud.txt", "--n", 3, "--method", "esr2", "--iters", 4, "--out", tmp_path / "r") == 0
    assert len(json.loads((tmp_path / "r" / "grasps.json").read_text())) == 3
    assert "| sampler+esr2 |" in (tmp_path / "r" / "report.md").read_text()


@pytest.mark.parametrize(
    "argv",
    [
        ["sample", "--model", "{w}/sp/sampler.gdw", "--cloud", "{w}/cloud.txt", "--n", "3"],
        ["refine", "--sampler", "{w}/sp/sampler.gdw", "--evaluator", "{w}/ev/evaluator.gdw", "--cloud", "{w}/cloud.txt", "--n", "2", "--iters", "4"],
        ["train-evaluator", "--data", "{w}/data", *TINY_EVAL],
        ["bps", "encode", "--cloud", "{w}/cloud.txt", "--bps-size", "16"],
    ],
)
def test_rerun_from_manifest_is_byte_identical(world, tmp_path, argv):
    argv = [a.format(w=world) for a in argv]
    assert run(*argv, "--seed", 3, "--out", tmp_path / "a") == 0
    assert run(*argv[: 2 if argv[0] == "bps" else 1], "--config", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b") == 0
    assert outputs(tmp_path / "a") == outputs(tmp_path / "b")
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] and ma["config"] == mb["config"]


def test_bench_and_report(world, tmp_path):
    args = ["bench", "--sampler", world / "sp" / "sampler.gdw", "--evaluator", world / "ev" / "evaluator.gdw", "--data", world / "data", "--test-views", 1, "--n", 3, "--iters", 2]
    assert run(*args, "--out", tmp_path / "b") == 0
    rows = json.loads((tmp_path / "b" / "bench.json").read_text())
    assert [r["method"] for r in rows] == list(cli.BENCH_ROWS)
    assert {"success", "eval_score", "diversity_mean", "diversity_std"} <= set(rows[0])
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert all("ms_per_grasp" in r for r in man["results"])
    assert run("report", tmp_path / "b", "--out", tmp_path / "rep") == 0
    assert len(json.loads((tmp_path / "rep" / "report.json").read_text())) == 6
    assert "Time (ms/grasp)" in (tmp_path / "rep" / "report.md").read_text()


def test_report_single_method(world, tmp_path, capsys):
    assert run("refine", "--sampler", world / "sp" / "sampler.gdw", "--evaluator", world / "ev" / "evaluator.gdw", "--cloud", world / "cloud.txt", "--n", 2, "--method", "sampler", "--out", tmp_path / "r") == 0
    capsys.readouterr()
    assert run("report", tmp_path / "r") == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert len(table) == 3 and table[2].startswith("| sampler |")


def test_report_errors(tmp_path):
    assert run("report") == 1
    (tmp_path / "empty").mkdir()
    assert run("report", tmp_path / "empty") == 1


def test_ablate(world, tmp_path):
    assert run("ablate", "--data", world / "data", "--epochs", 1, "--batch", 64, "--bps-size", 32, "--out", tmp_path / "a") == 0
    res = json.loads((tmp_path / "a" / "ablation.json").read_text())
    assert set(res) == {"No Freq. Enc.", "(10,4,0)"}
    assert "Recall Pos." in (tmp_path / "a" / "ablation.md").read_text()


def test_usage_errors(world, tmp_path, capsys):
    assert run() == 2
    assert run("frobnicate") == 2
    assert run("sample", "--out", tmp_path / "x") == 2  # missing --model
    assert run("sample", "--model", "m", "--cloud", "c", "--n", "many", "--out", tmp_path / "y") == 2
    assert run("sample", "--model", "m", "--cloud", "c") == 2  # no --out
    assert "error" in capsys.readouterr().err


def test_runtime_errors(world, tmp_path):
    assert run("sample", "--model", tmp_path / "missing.gdw", "--cloud", world / "cloud.txt", "--out", tmp_path / "x") == 1
    # evaluator weights are not a sampler
    assert run("sample", "--model", world / "ev" / "evaluator.gdw", "--cloud", world / "cloud.txt", "--out", tmp_path / "y") == 1
    assert run("refine", "--sampler", world / "sp" / "sampler.gdw", "--evaluator", world / "ev" / "evaluator.gdw", "--cloud", world / "cloud.txt", "--method", "anneal", "--out", tmp_path / "z") == 1


def test_out_must_be_fresh(world, tmp_path):
    (tmp_path / "busy").mkdir()
    (tmp_path / "busy" / "f").write_text("x")
    assert run("bps", "encode", "--cloud", world / "cloud.txt", "--bps-size", 8, "--out", tmp_path / "busy") == 1


def test_inputs_not_mutated(world, tmp_path):
    before = outputs(world / "data")
    assert run("train-evaluator", "--data", world / "data", *TINY_EVAL, "--out", tmp_path / "e") == 0
    assert outputs(world / "data") == before


def test_precedence_flag_env_config(world, tmp_path, monkeypatch):
    cfg = tmp_path / "c.toml"
    cfg.write_text('bps-size = 8\n["bps encode"]\nbps-radius = 0.2\n')
    assert run("bps", "encode", "--cloud", world / "cloud.txt", "--config", cfg, "--out", tmp_path / "a") == 0
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["config"]["bps_size"] == 8 and m["config"]["bps_radius"] == 0.2
    monkeypatch.setenv("GRASPDIFF_BPS_SIZE", "12")
    assert run("bps", "encode", "--cloud", world / "cloud.txt", "--config", cfg, "--out", tmp_path / "b") == 0
    assert len(np.loadtxt(tmp_path / "b" / "encoding.txt")) == 12
    assert run("bps", "encode", "--cloud", world / "cloud.txt", "--config", cfg, "--bps-size", 5, "--out", tmp_path / "c") == 0
    assert len(np.loadtxt(tmp_path / "c" / "encoding.txt")) == 5


def test_manifest_for_other_command_rejected(world, tmp_path):
    assert run("sample", "--config", world / "sp" / "manifest.json", "--out", tmp_path / "x") == 2


def test_reference_defaults_echoed_in_manifest(world):
    from graspdiff.evaluator import REFERENCE_EVALUATOR_HYPER
    from graspdiff.sampler import REFERENCE_SAMPLER_HYPER

    m = json.loads((world / "ev" / "manifest.json").read_text())
    assert m["reference_hyper"] == REFERENCE_EVALUATOR_HYPER.to_dict()
    m = json.loads((world / "sp" / "manifest.json").read_text())
    assert m["reference_hyper"] == REFERENCE_SAMPLER_HYPER.to_dict()
