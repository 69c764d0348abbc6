"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section of the terminal summary.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from conftest import ROOT, report_criterion
from oracles import brute_force_svr_dual, dual_value

from ddsvr.cli import main
from ddsvr.core import Dataset, RngStream, read_csv
from ddsvr.evaluation import Method, run_bench
from ddsvr.kernels import KernelSpec, kernel_matrix
from ddsvr.likelihood import (eps_laplacian_pdf, estimate, limiting_params,
                              sample_eps_laplacian)
from ddsvr.simulation import load_config, run_table
from ddsvr.solver import SvrConfig, kkt_violation, solve_svr

pytestmark = pytest.mark.acceptance


def _emit(capsys, *args):
    line = report_criterion(*args)
    with capsys.disabled():
        print("\n" + line)
    return args[2]


def _rows_by_cell(rows):
    out = {}
    for r in rows:
        ex = dict(r.extra)
        out.setdefault(ex["cell"], {"extra": ex})[r.method] = r
    return out


def test_criterion_1_solver_correctness(capsys):
    t0 = time.perf_counter()
    r = np.random.default_rng(2718)
    worst_coord = worst_obj = worst_kkt = worst_gap = 0.0
    for k in range(50):
        n = int(r.integers(2, 7))
        linear = k % 5 == 0
        x = r.normal(size=(n, n if linear else 2))
        y = 2.0 * r.normal(size=n)
        C, eps = float(r.uniform(0.2, 3.0)), float(r.uniform(0.0, 0.5))
        spec = KernelSpec.linear() if linear else KernelSpec.rbf(float(r.uniform(0.2, 2)))
        K = kernel_matrix(spec, x, x)
        beta_ref, val_ref = brute_force_svr_dual(K, y, C, eps)
        data = Dataset(x, y)
        tight = solve_svr(data, SvrConfig(C, eps, spec, tol_kkt=1e-9))
        default = solve_svr(data, SvrConfig(C, eps, spec))
        worst_coord = max(worst_coord, float(np.abs(tight.beta - beta_ref).max()))
        worst_obj = max(worst_obj, abs(dual_value(tight.beta, K, y, eps) - val_ref))
        for m in (tight, default):
            worst_kkt = max(worst_kkt, kkt_violation(m, data))
            worst_gap = max(worst_gap, m.duality_gap)
    elapsed = time.perf_counter() - t0
    ok = (worst_coord <= 1e-4 and worst_obj <= 1e-6 and worst_kkt <= 1e-3
          and worst_gap <= 1e-4 and elapsed < 60)
    assert _emit(capsys, 1, "solver vs brute-force oracle", ok,
                 f"max|dbeta|={worst_coord:.2e} max|dobj|={worst_obj:.2e} "
                 f"max KKT={worst_kkt:.2e} max gap={worst_gap:.2e} t={elapsed:.1f}s")


def test_criterion_2_likelihood_machinery(capsys):
    t0 = time.perf_counter()
    worst_mass = 0.0
    for eps in np.random.default_rng(1).uniform(0, 10, 20):
        eps = float(eps)
        mass, _ = integrate.quad(eps_laplacian_pdf, -60, 60, args=(eps,),
                                 points=[-eps, eps], limit=200,
                                 epsabs=1e-14, epsrel=1e-13)
        worst_mass = max(worst_mass, abs(mass - 1))
    chain_ok, worst_fp, worst_equi = True, 0.0, 0.0
    for i, eps0 in enumerate((0.2, 0.5, 1.0)):
        for j, s0 in enumerate((0.5, 1.0)):
            u = s0 * sample_eps_laplacian(RngStream(555, 10 * i + j), eps0, 100_000)
            fit = estimate(u)
            chain_ok &= abs(fit.epsilon_hat - eps0) <= 0.05 * (1 + eps0)
            chain_ok &= abs(fit.s_hat / s0 - 1) <= 0.03
            if fit.converged:
                worst_fp = max(worst_fp, fit.fixed_point_residual)
            scaled = estimate(3.7 * u)
            worst_equi = max(worst_equi,
                             abs(scaled.epsilon_hat - fit.epsilon_hat),
                             abs(scaled.s_hat / (3.7 * fit.s_hat) - 1))
    for seed in range(30):
        u = sample_eps_laplacian(RngStream(seed, 99), 0.5, 300)
        fit = estimate(u)
        assert fit.converged
        worst_fp = max(worst_fp, fit.fixed_point_residual)
    elapsed = time.perf_counter() - t0
    ok = (worst_mass <= 1e-9 and chain_ok and worst_fp <= 1e-6
          and worst_equi <= 1e-6 and elapsed < 120)
    assert _emit(capsys, 2, "likelihood machinery", ok,
                 f"mass err={worst_mass:.1e} chain={'ok' if chain_ok else 'off'} "
                 f"fixed-point={worst_fp:.1e} equivariance={worst_equi:.1e} "
                 f"t={elapsed:.1f}s")


def test_criterion_3_sinc_eps_laplacian_ratios(capsys):
    cfg = load_config(ROOT / "configs" / "sinc_eps_laplacian.cfg")
    opts = replace(cfg.options(), methods=(Method.TUNING, Method.CM, Method.DD))
    t0 = time.perf_counter()
    cells = _rows_by_cell(run_table(cfg.cells, opts, cfg.experiment))
    elapsed = time.perf_counter() - t0
    ok, parts = elapsed < 600, []
    for c in cells.values():
        s = c["extra"]["scale"]
        dd, cm = c["dd"], c["cm"]
        ok &= dd.ratio_mae > 1.3 and cm.ratio_mae < 1.05 and abs(dd.s_hat - s) <= 0.15
        ok &= c["extra"]["reps_ok"] == 20
        parts.append(f"s={s:g}: DD {dd.ratio_mae:.3f} CM {cm.ratio_mae:.3f} "
                     f"s_hat {dd.s_hat:.3f}")
    assert _emit(capsys, 3, "sinc eps-Laplacian cells n=1000", ok,
                 "; ".join(parts) + f" (need DD>1.3, CM<1.05, |s_hat-s|<=0.15) "
                 f"t={elapsed:.0f}s")


def test_criterion_4_uniform_linear_cell(capsys):
    cfg = load_config(ROOT / "configs" / "linear_uniform.cfg")
    opts = replace(cfg.options(), methods=(Method.TUNING, Method.KCV, Method.DD))
    t0 = time.perf_counter()
    cell = _rows_by_cell(run_table(cfg.cells, opts, cfg.experiment))[0]
    elapsed = time.perf_counter() - t0
    dd, kcv = cell["dd"], cell["kcv"]
    ok = (dd.ratio_mae > 2.5 and 0.9 <= kcv.ratio_mae <= 1.4 and elapsed < 300
          and cell["extra"]["reps_ok"] == 20)
    assert _emit(capsys, 4, "linear uniform cell n=300 s=2 b=1.2", ok,
                 f"DD ratio_mae {dd.ratio_mae:.3f} (>2.5) 10-CV {kcv.ratio_mae:.3f} "
                 f"([0.9,1.4]) t={elapsed:.0f}s")


def test_criterion_5_parameter_recovery(capsys):
    cfg = load_config(ROOT / "configs" / "linear_eps_laplacian.cfg")
    opts = replace(cfg.options(), methods=(Method.TUNING, Method.DD))
    t0 = time.perf_counter()
    cells = _rows_by_cell(run_table(cfg.cells, opts, cfg.experiment))
    elapsed = time.perf_counter() - t0
    ok, worst_s, worst_e = elapsed < 300, 0.0, 0.0
    for c in cells.values():
        ex, dd = c["extra"], c["dd"]
        worst_s = max(worst_s, abs(dd.s_hat - ex["scale"]))
        worst_e = max(worst_e, abs(dd.epsilon_used - ex["noise_param"]))
        ok &= ex["reps_ok"] == 20
    ok &= worst_s <= 0.1 and worst_e <= 0.3 and len(cells) == 9
    assert _emit(capsys, 5, "linear eps-Laplacian recovery n=300", ok,
                 f"max|s_hat-s|={worst_s:.3f} (<=0.1) max|eps_hat-eps|={worst_e:.3f} "
                 f"(<=0.3) over {len(cells)} cells t={elapsed:.0f}s")


def test_criterion_6_boston_ordering(capsys, boston_path):
    data = read_csv(boston_path)
    t0 = time.perf_counter()
    rows = {r.method: r for r in run_bench(data, [Method.TUNING, Method.DD],
                                           reps=20, seed=2024,
                                           experiment_id="boston")}
    elapsed = time.perf_counter() - t0
    tu, dd = rows["tuning"], rows["dd"]
    ok = (dd.mae <= 0.97 * tu.mae and dd.rmse <= 0.97 * tu.rmse and elapsed < 600
          and dict(dd.extra)["reps_ok"] == 20)
    assert _emit(capsys, 6, "Boston housing ordering", ok,
                 f"MAE DD {dd.mae:.3f} vs tuning {tu.mae:.3f}; RMSE DD {dd.rmse:.3f} "
                 f"vs tuning {tu.rmse:.3f} (3% margin) t={elapsed:.0f}s")


def test_criterion_7_limiting_solver(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for eps0, s0 in [(0.2, 0.5), (0.5, 0.7), (1.0, 1.0), (2.0, 1.5)]:
        lim = limiting_params(lambda v, e=eps0, s=s0: eps_laplacian_pdf(v / s, e) / s,
                              s0 * (eps0 + 60), breakpoints=[eps0 * s0])
        worst = max(worst, abs(lim.epsilon_star - eps0), abs(lim.s_star - s0))
    b = 1.2
    lim = limiting_params(lambda v: 1 / (2 * b) if abs(v) <= b else 0.0, b,
                          breakpoints=[b])
    fit = estimate(RngStream(4242, 0).uniform(100_000, -b, b))
    rel = max(abs(fit.epsilon_hat / lim.epsilon_star - 1),
              abs(fit.s_hat / lim.s_star - 1))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and rel <= 0.02 and elapsed < 60
    assert _emit(capsys, 7, "limiting-value solver", ok,
                 f"eps-Laplacian max err={worst:.1e} (<=1e-4); uniform b=1.2 "
                 f"limit ({lim.epsilon_star:.3g}, {lim.s_star:.5f}) vs estimate "
                 f"({fit.epsilon_hat:.3g}, {fit.s_hat:.5f}) rel={rel:.2%} t={elapsed:.1f}s")


def test_criterion_8_simulate_determinism(capsys, tmp_path):
    cfg = tmp_path / "det.cfg"
    cfg.write_text((ROOT / "configs" / "linear_uniform.cfg").read_text()
                   .replace("repetitions = 20", "repetitions = 4"))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    codes = (main(["simulate", str(cfg), "--out", str(a)]),
             main(["simulate", str(cfg), "--out", str(b)]))
    same = a.read_bytes() == b.read_bytes()
    ok = codes == (0, 0) and same
    assert _emit(capsys, 8, "simulate determinism", ok,
                 f"exit codes {codes}, byte-identical={same}, {len(a.read_bytes())} bytes")
