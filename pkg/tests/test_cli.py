import csv
import json

import numpy as np
import pytest

from snapsurv import __version__
from snapsurv.cli import main
from snapsurv.dataset import load_dataset

TRAIN_FLAGS = ["--epochs", "2", "--quad-points", "33", "--batch-size", "64"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def sim_dir(tmp_path):
    assert main(["simulate", "--n", "60", "--seed", "2", "--out-dir", str(tmp_path / "sim")]) == 0
    return tmp_path / "sim"


def data_flags(d):
    return ["--individuals", str(d / "individuals.csv"), "--snapshots", str(d / "snapshots.csv")]


@pytest.fixture
def trained(tmp_path, sim_dir):
    out = tmp_path / "run"
    assert main(["train", *data_flags(sim_dir), "--out-dir", str(out), *TRAIN_FLAGS]) == 0
    return out


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_simulate_writes_three_files(sim_dir, capsys):
    ds = load_dataset(sim_dir / "individuals.csv", sim_dir / "snapshots.csv")
    assert len(ds) == 60 and ds.names() == ("usage",)
    truth = read_csv(sim_dir / "truth.csv")
    assert len(truth) == 60 and set(truth[0]) == {"id", "u", "true_T", "censor_time"}


def test_resample_reports_grid_and_coverage(tmp_path, sim_dir, capsys):
    capsys.readouterr()
    out = tmp_path / "flat.csv"
    code = main(["resample", *data_flags(sim_dir), "--out", str(out), "--num-points", "4",
                 "--out-individuals", str(tmp_path / "ri.csv"), "--out-snapshots", str(tmp_path / "rs.csv")])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(report["grid"], [0.1, 0.4, 0.7, 1.0])
    assert report["n_samples"] == len(read_csv(out))
    assert 0 <= report["coverage"]["fraction"] <= 1
    view = load_dataset(tmp_path / "ri.csv", tmp_path / "rs.csv")
    assert max(rec.num_snapshots for rec in view) <= 4


def test_resample_random_grid_depends_on_epoch(tmp_path, sim_dir, capsys):
    grids = []
    for epoch in ("0", "1"):
        capsys.readouterr()
        main(["resample", *data_flags(sim_dir), "--out", str(tmp_path / "f.csv"), "--grid", "random",
              "--epoch", epoch, "--num-points", "3"])
        grids.append(json.loads(capsys.readouterr().out)["grid"])
    assert grids[0] != grids[1]


def test_train_outputs(trained):
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["config"]["epochs"] == 2
    losses = read_csv(trained / "losses.csv")
    assert [int(r["epoch"]) for r in losses] == [0, 1]
    assert (trained / "model.ckpt").exists()


def test_train_with_config_file_and_sweep(tmp_path, sim_dir):
    cfg = tmp_path / "train.toml"
    cfg.write_text("[train]\nepochs = 1\nhidden_layers = [4]\nquad_points = 17\n"
                   "lr_sweep_count = 2\nreplicates = 1\n")
    out = tmp_path / "swept"
    assert main(["train", *data_flags(sim_dir), "--config", str(cfg), "--sweep", "--out-dir", str(out)]) == 0
    sweep = json.loads((out / "sweep.json").read_text())
    assert len(sweep["learning_rates"]) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["hidden_layers"] == [4]


def test_evaluate_outputs(tmp_path, sim_dir, trained):
    out = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(trained / "model.ckpt"), *data_flags(sim_dir),
                 "--out-dir", str(out), "--n-eval-times", "20"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["quasi_log_likelihood"]) == {"t=0.25", "t=0.5", "random15"}
    assert len(read_csv(out / "brier.csv")) == 20


def test_predict_single_context(tmp_path, trained):
    out = tmp_path / "pred.csv"
    assert main(["predict", "--checkpoint", str(trained / "model.ckpt"), "--t0", "0.5", "--x", "1.0",
                 "--times", "0", "1", "5", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 5 and float(rows[0]["S"]) == 1.0
    s = [float(r["S"]) for r in rows]
    assert all(a >= b for a, b in zip(s, s[1:]))


def test_predict_contexts_file_to_stdout(tmp_path, trained, capsys):
    ctx = tmp_path / "ctx.csv"
    ctx.write_text("t0,usage\n0.1,0.2\n0.9,3.0\n")
    capsys.readouterr()
    assert main(["predict", "--checkpoint", str(trained / "model.ckpt"), "--contexts", str(ctx),
                 "--times", "0", "1", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "row,t,S" and len(lines) == 1 + 2 * 3


def test_study_command(tmp_path):
    cfg = tmp_path / "study.toml"
    cfg.write_text("[study]\nsizes = [30]\ngrid_sizes = [2]\npolicies = ['fixed']\nreplicates = 1\n"
                   "test_size = 20\nn_eval_times = 10\n\n[train]\nepochs = 1\nhidden_layers = [4]\n"
                   "quad_points = 17\n")
    assert main(["study", "--config", str(cfg), "--out-dir", str(tmp_path / "s")]) == 0
    assert len(read_csv(tmp_path / "s" / "results.csv")) == 1


@pytest.mark.parametrize("argv, message", [
    (["resample", "--individuals", "nope.csv", "--snapshots", "nope2.csv", "--out", "x.csv"], "nope"),
    (["predict", "--checkpoint", "missing.ckpt", "--t0", "0.1", "--x", "1"], "missing.ckpt"),
    (["study", "--config", "absent.toml"], "absent.toml"),
])
def test_errors_exit_nonzero_with_diagnostic(tmp_path, monkeypatch, capsys, argv, message):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith(f"snapsurv {argv[0]}: error:") and message in err


def test_predict_requires_context(trained, capsys):
    assert main(["predict", "--checkpoint", str(trained / "model.ckpt")]) == 1
    assert "--contexts" in capsys.readouterr().err


def test_bad_csv_reports_row(tmp_path, sim_dir, capsys):
    bad = tmp_path / "ind.csv"
    bad.write_text("id,tau,delta\na,1.0,1\nb,oops,0\n")
    assert main(["resample", "--individuals", str(bad), "--snapshots", str(sim_dir / "snapshots.csv"),
                 "--out", str(tmp_path / "f.csv")]) == 1
    assert "ind.csv:3: cannot parse" in capsys.readouterr().err
