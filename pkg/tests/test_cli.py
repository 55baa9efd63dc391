import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from npsa import cli
from npsa import training as TR

ROOT = os.path.dirname(os.path.dirname(__file__))


def small_config(tmp_path, family="NPSA", steps=20, **over):
    cfg = {"experiment": "regression1d",
           "model": {"family": family, "d_h": 8, "heads": 2, "l_pre": 2, "l_dec": 2},
           "train": {"steps": steps, "seed": 1},
           "eval": {"n_tasks": 3, "seed": 5}}
    cfg.update(over)
    path = tmp_path / f"{family}.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = small_config(d)
    assert cli.main(["train", "--config", str(cfg), "--out", str(d / "out")]) == 0
    return d / "out"


def test_train_writes_artifacts(trained_dir):
    for name in ("checkpoint.npz", "loss_log.csv", "resolved_config.json", "run_meta.json"):
        assert (trained_dir / name).exists()
    resolved = json.loads((trained_dir / "resolved_config.json").read_text())
    assert resolved["model"]["K"] == 300.0 and resolved["train"]["steps"] == 20


def test_train_rerun_is_byte_identical(tmp_path, trained_dir):
    cfg = small_config(tmp_path)
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "loss_log.csv").read_bytes() == (trained_dir / "loss_log.csv").read_bytes()


def test_missing_field_names_path(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"experiment": "regression1d", "model": {"family": "NP"}, "train": {}}))
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "$.train.steps" in capsys.readouterr().err


@pytest.mark.parametrize("patch,where", [
    ({"model": {"family": "NP", "dh": 3}}, "$.model.dh"),
    ({"model": {"family": "NP", "d_h": "wide"}}, "$.model.d_h"),
    ({"bogus": 1}, "$.bogus"),
    ({"eval": {"kernels": ["rbf", "cosine"]}}, "$.eval.kernels[1]"),
    ({"data": {"noise": {"family": "Periodic", "freq": 0.1}}}, "$.data.noise"),
])
def test_invalid_config_exit_two(tmp_path, capsys, patch, where):
    path = small_config(tmp_path, **patch)
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert where in capsys.readouterr().err


def test_eval_three_kernels_and_determinism(trained_dir, capsys):
    args = ["eval", "--checkpoint", str(trained_dir / "checkpoint.npz"), "--kernel", "rbf,matern,periodic",
            "--n-tasks", "3", "--seed", "7"]
    assert cli.main(args) == 0
    first = capsys.readouterr().out.strip().splitlines()
    assert [json.loads(line)["kernel"] for line in first] == ["rbf", "matern", "periodic"]
    assert cli.main(args) == 0
    assert capsys.readouterr().out.strip().splitlines() == first


def test_eval_zero_tasks_and_family_mismatch(trained_dir):
    ck = str(trained_dir / "checkpoint.npz")
    assert cli.main(["eval", "--checkpoint", ck, "--n-tasks", "0"]) == 2
    assert cli.main(["eval", "--checkpoint", ck, "--family", "ANP", "--n-tasks", "2"]) == 2
    assert cli.main(["eval", "--checkpoint", ck, "--kernel", "hare-lynx", "--n-tasks", "2"]) == 2


def test_eval_missing_checkpoint_is_io_error(tmp_path):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "nope.npz")]) == 4


def test_simulate_lv(tmp_path):
    out = tmp_path / "lv.csv"
    assert cli.main(["simulate-lv", "--seed", "3", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["t", "X", "Y"]
    t = np.array([float(r[0]) for r in rows[1:]])
    assert np.all(np.diff(t) > 0)
    assert min(int(r[1]) for r in rows[1:]) >= 0 and min(int(r[2]) for r in rows[1:]) >= 0


def test_simulate_lv_zero_start_constant(tmp_path):
    out = tmp_path / "lv.csv"
    assert cli.main(["simulate-lv", "--init", "0,0", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))[1:]
    assert len(rows) == 100 and all(r[1:] == ["0", "0"] for r in rows)


def test_simulate_lv_no_negative_over_seeds(tmp_path):
    out = tmp_path / "lv.csv"
    for s in range(100):
        assert cli.main(["simulate-lv", "--seed", str(s), "--t-max", "10", "--out", str(out)]) == 0
        vals = np.array([[int(r[1]), int(r[2])] for r in list(csv.reader(open(out)))[1:]])
        assert vals.min() >= 0


@pytest.mark.parametrize("theta", ["0.01,0.5,1", "a,b,c,d", "0.01,-0.5,1,0.01"])
def test_simulate_lv_bad_theta(tmp_path, theta):
    assert cli.main(["simulate-lv", "--theta", theta, "--out", str(tmp_path / "x.csv")]) == 2


def test_heatmap_csv_shapes(trained_dir, tmp_path):
    ck = str(trained_dir / "checkpoint.npz")
    simple = tmp_path / "s.csv"
    full = tmp_path / "f.csv"
    assert cli.main(["heatmap", "--checkpoint", ck, "--task-seed", "2", "--mode", "simplified", "--out", str(simple)]) == 0
    assert cli.main(["heatmap", "--checkpoint", ck, "--task-seed", "2", "--mode", "full", "--n-target", "40",
                     "--out", str(full)]) == 0
    s_rows = list(csv.reader(open(simple)))
    assert len(s_rows) == 11 and all(len(r) == 11 for r in s_rows)
    assert len(list(csv.reader(open(full)))) == 41


def test_heatmap_rejects_np_family(tmp_path):
    cfg = small_config(tmp_path, family="NP", steps=1)
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "np")]) == 0
    assert cli.main(["heatmap", "--checkpoint", str(tmp_path / "np" / "checkpoint.npz"), "--task-seed", "0",
                     "--out", str(tmp_path / "h.csv")]) == 2


def test_sweep_k_rows(tmp_path):
    cfg = small_config(tmp_path, steps=8)
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep-k", "--config", str(cfg), "--k-list", "1,300", "--n-heatmap-tasks", "2",
                     "--cache", str(tmp_path / "cache"), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0][:3] == ["K", "regularized", "converged"] and len(rows) == 5


def test_numeric_failure_exit_three(tmp_path, monkeypatch):
    cfg = small_config(tmp_path, steps=2)

    def boom(*a, **k):
        raise TR.T.NumericError("non-finite gradient")

    monkeypatch.setattr(TR, "train", boom)
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_usage_error_exit_two():
    assert cli.main(["train"]) == 2
    assert cli.main(["frobnicate"]) == 2


def test_console_entry_point_runs(tmp_path):
    out = tmp_path / "lv.csv"
    proc = subprocess.run([sys.executable, "-m", "npsa.cli", "simulate-lv", "--out", str(out)],
                          cwd=ROOT, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
