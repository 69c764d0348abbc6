import json

import numpy as np
import pytest

from ddsvr.cli import EXIT_COMPUTE, EXIT_INVALID, EXIT_OK, main
from ddsvr.core import RngStream
from ddsvr.likelihood import estimate, sample_eps_laplacian

SMALL_CFG = """\
schema = ddsvr-sim/1
experiment = small
seed = 77
repetitions = 2
methods = tuning, cm, dd

[cell]
model = sinc
noise = eps_laplacian
noise_param = 0.2
scale = 0.8
n = 80
"""


@pytest.fixture
def small_csv(tmp_path, boston_path):
    p = tmp_path / "small.csv"
    p.write_text("".join(boston_path.read_text().splitlines(True)[:121]))
    return p


def test_simulate_writes_csv_and_sidecar(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL_CFG)
    out = tmp_path / "r.csv"
    assert main(["simulate", str(cfg), "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0].startswith("experiment_id,method,mae,rmse,ratio_mae")
    assert [ln.split(",")[1] for ln in lines[1:]] == ["tuning", "cm", "dd"]
    meta = json.loads(out.with_suffix(".meta.json").read_text())
    assert meta["seed"] == 77 and "numpy" in meta["versions"]
    assert meta["sinc_amplitude_by_noise"]["eps_laplacian"] == 5.0


def test_simulate_rerun_is_byte_identical(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL_CFG)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", str(cfg), "--out", str(a)])
    main(["simulate", str(cfg), "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_simulate_seed_override_changes_output(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL_CFG)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", str(cfg), "--out", str(a), "--reps", "1"])
    main(["simulate", str(cfg), "--out", str(b), "--reps", "1", "--seed", "78"])
    assert a.read_bytes() != b.read_bytes()


def test_simulate_empty_grid_is_invalid(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("schema = ddsvr-sim/1\nseed = 1\n")
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "x.csv")]) == EXIT_INVALID
    assert "cell" in capsys.readouterr().err


def test_simulate_config_error_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("schema = ddsvr-sim/1\nseed = 1\nwhat = 2\n")
    assert main(["simulate", str(cfg)]) == EXIT_INVALID
    assert "line 3" in capsys.readouterr().err


@pytest.mark.parametrize("method", ["tuning", "cm", "kcv", "dd"])
def test_fit_then_predict(tmp_path, small_csv, method, capsys):
    model = tmp_path / "m.txt"
    assert main(["fit", str(small_csv), "--method", method, "--out", str(model)]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["method"] == method
    pred = tmp_path / "p.csv"
    assert main(["predict", str(model), str(small_csv), "--out", str(pred)]) == EXIT_OK
    rows = pred.read_text().splitlines()
    assert rows[0] == "prediction" and len(rows) == 121
    assert np.isfinite([float(v) for v in rows[1:]]).all()


def test_predict_accepts_feature_only_csv(tmp_path, small_csv):
    model = tmp_path / "m.txt"
    main(["fit", str(small_csv), "--method", "tuning", "--kernel", "linear",
          "--out", str(model)])
    lines = small_csv.read_text().splitlines()
    feats = tmp_path / "f.csv"
    feats.write_text("\n".join(ln.rsplit(",", 1)[0] for ln in lines) + "\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["predict", str(model), str(feats), "--out", str(a)]) == EXIT_OK
    main(["predict", str(model), str(small_csv), "--out", str(b)])
    assert a.read_text() == b.read_text()


def test_bench_single_rep_tuning(tmp_path, small_csv):
    out = tmp_path / "b.csv"
    assert main(["bench", str(small_csv), "--methods", "tuning", "--reps", "1",
                 "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 2
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert row["experiment_id"] == "small"
    assert float(row["ratio_mae"]) == 1.0 and float(row["ratio_rmse"]) == 1.0


def test_curve_from_residuals(tmp_path, capsys):
    u = sample_eps_laplacian(RngStream(8, 0), 1.0, 5000)
    res = tmp_path / "r.csv"
    res.write_text("residual\n" + "\n".join(repr(float(v)) for v in u) + "\n")
    out = tmp_path / "c.csv"
    assert main(["curve", "--residuals", str(res), "--eps-grid", "0.5:1.5:21",
                 "--s-grid", "0.5:1.5:21", "--out", str(out)]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    e, s, v = info["grid_min"]
    assert abs(e - 1) <= 0.15 and abs(s - 1) <= 0.15
    assert v >= estimate(u).neg_log_lik - 1e-6
    assert len(out.read_text().splitlines()) == 1 + 21 * 21


def test_curve_single_point_grid(tmp_path, small_csv):
    out = tmp_path / "c.csv"
    assert main(["curve", "--data", str(small_csv), "--eps-grid", "0.1",
                 "--s-grid", "1", "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 2


def test_curve_from_saved_model(tmp_path, small_csv):
    model = tmp_path / "m.txt"
    main(["fit", str(small_csv), "--method", "tuning", "--out", str(model)])
    out = tmp_path / "c.csv"
    assert main(["curve", "--data", str(small_csv), "--model", str(model),
                 "--eps-grid", "0,1", "--s-grid", "1,2", "--out", str(out)]) == EXIT_OK


def test_curve_degenerate_residuals_exit_3(tmp_path):
    res = tmp_path / "z.csv"
    res.write_text("r\n" + "0\n" * 20)
    assert main(["curve", "--residuals", str(res),
                 "--out", str(tmp_path / "c.csv")]) == EXIT_COMPUTE


@pytest.mark.parametrize("argv", [
    ["fit", "/no/such.csv"],
    ["predict", "/no/model.txt", "/no/data.csv"],
    ["bench", "/no/such.csv"],
    ["curve"],
    ["curve", "--residuals", "x.csv", "--eps-grid", "1:2:x"],
    ["curve", "--residuals", "x.csv", "--eps-grid", ""],
])
def test_invalid_inputs_exit_2(argv):
    assert main(argv) == EXIT_INVALID


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["fit", "x.csv", "--method", "svm"])
    assert info.value.code == EXIT_INVALID


def test_bench_rejects_bad_reps_before_work(tmp_path, small_csv):
    assert main(["bench", str(small_csv), "--reps", "0"]) == EXIT_INVALID
    assert main(["fit", str(small_csv), "--out", str(tmp_path / "no" / "m.txt")]) == EXIT_INVALID
