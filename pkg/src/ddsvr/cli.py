"""Command-line entry point: ``ddsvr {simulate,fit,predict,bench,curve}``.

Exit status is 0 on success, 2 on invalid input and 3 when a computation
fails (non-convergence, degenerate residuals).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import (ComputationError, Dataset, DdsvrError, RngStream,
                   ValidationError, read_csv, read_table, read_vector_csv,
                   standardize_features)
from .evaluation import (Method, parse_methods, run_bench, write_report_csv,
                         c_cm, cm_epsilon, kcv_select, TUNING_C, TUNING_EPSILON)
from .kernels import KernelSpec
from .likelihood import estimate, likelihood_curve
from .model_io import load_model, save_model
from .simulation import SINC_AMPLITUDE, cell_seed, load_config, run_table
from .solver import SvrConfig, fit_dd, pilot_fit, predict, solve_svr

EXIT_OK, EXIT_INVALID, EXIT_COMPUTE = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags already; keep the message terse
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _grid(text: str) -> np.ndarray:
    """``start:stop:num`` (inclusive, linear) or a comma list."""
    try:
        if ":" in text:
            a, b, k = text.split(":")
            k = int(k)
            if k < 1:
                raise ValueError
            return np.linspace(float(a), float(b), k)
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ValidationError(f"bad grid {text!r}; use start:stop:num or a,b,c") from None


def _existing(path: str | None, what: str) -> Path:
    if path is None:
        raise ValidationError(f"missing {what} path")
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} file not found: {p}")
    return p


def _out_dir_ok(path: str) -> Path:
    p = Path(path)
    if not p.parent.exists():
        raise ValidationError(f"output directory does not exist: {p.parent}")
    return p


def _kernel(args, d: int) -> KernelSpec:
    if args.kernel == "linear":
        return KernelSpec.linear()
    return KernelSpec.rbf(args.gamma, d=d)


def cmd_simulate(args) -> int:
    cfg = load_config(_existing(args.config, "config"))
    if args.seed is not None or args.reps is not None:
        # overrides reassign cell seeds the same way the parser does
        seed = cfg.seed if args.seed is None else args.seed
        cells = [replace(c, seed=cell_seed(seed, i),
                         repetitions=args.reps or c.repetitions)
                 for i, c in enumerate(cfg.cells)]
        cfg = replace(cfg, seed=seed, cells=cells)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    out = _out_dir_ok(args.out or f"{cfg.experiment}.csv")
    t0 = time.perf_counter()
    rows = run_table(cfg.cells, cfg.options(), cfg.experiment)
    elapsed = time.perf_counter() - t0
    write_report_csv(rows, out)
    meta = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config": str(args.config),
        "cells": len(cfg.cells),
        "methods": [m.value for m in cfg.methods],
        "gamma": "1/d" if cfg.gamma is None else cfg.gamma,
        "C": cfg.C,
        "score_linear": cfg.score_linear,
        "sinc_amplitude_by_noise": SINC_AMPLITUDE,
        "elapsed_seconds": round(elapsed, 3),
        "versions": {"ddsvr": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
    }
    out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(out)
    return EXIT_OK


def _fit_one(method: Method, train: Dataset, kernel: KernelSpec, args):
    if method is Method.TUNING:
        return solve_svr(train, SvrConfig(TUNING_C, TUNING_EPSILON, kernel)), {}
    C = c_cm(train.targets) if args.use_c_cm else args.c
    if method is Method.DD:
        fit = fit_dd(train, kernel, C)
        lik = fit.likelihood
        return fit.model, {"epsilon_hat": lik.epsilon_hat, "s_hat": lik.s_hat}
    if method is Method.CM:
        _, resid = pilot_fit(train, kernel, C)
        eps = cm_epsilon(float(np.std(resid, ddof=1)), train.n)
    else:
        eps = kcv_select(train, kernel=kernel, C=C, rng=RngStream(args.seed, 0))
    return solve_svr(train, SvrConfig(C, eps, kernel)), {"epsilon": eps}


def cmd_fit(args) -> int:
    path = _existing(args.data, "data")
    out = _out_dir_ok(args.out or "model.txt")
    method = parse_methods(args.method)[0]
    train = standardize_features(read_csv(path, args.target))
    model, info = _fit_one(method, train, _kernel(args, train.d), args)
    save_model(model, out)
    print(json.dumps({"model": str(out), "method": method.value,
                      "support_vectors": int(model.support_indices.size),
                      **info}))
    return EXIT_OK


def _model_inputs(model, path: Path, target: str | None):
    """Standardized features and (if present) targets for a saved model.

    A CSV with exactly ``d`` columns is all features; otherwise the target
    column (last, or ``target``) is split off.
    """
    header, a = read_table(path)
    if target is None and len(header) == model.d:
        x, y = a, None
    else:
        data = read_csv(path, target)
        x, y = data.features, data.targets
    if x.shape[1] != model.d:
        raise ValidationError(
            f"{path}: {x.shape[1]} feature columns, model expects {model.d}")
    if model.feature_means is not None:
        x = (x - model.feature_means) / model.feature_stds
    return x, y


def cmd_predict(args) -> int:
    model = load_model(_existing(args.model, "model"))
    x, _ = _model_inputs(model, _existing(args.data, "data"), args.target)
    out = _out_dir_ok(args.out) if args.out else None
    pred = np.atleast_1d(predict(model, x))
    fh = out.open("w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prediction"])
        for v in pred:
            w.writerow([repr(float(v))])
    finally:
        if out:
            fh.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    path = _existing(args.data, "data")
    methods = parse_methods(args.methods)
    if args.reps < 1:
        raise ValidationError("--reps must be at least 1")
    out = _out_dir_ok(args.out or f"{path.stem}_bench.csv")
    data = read_csv(path, args.target)
    rows = run_bench(data, methods, args.reps, args.split, args.seed,
                     args.gamma, args.c, path.stem, args.use_c_cm,
                     kernel_family=args.kernel)
    write_report_csv(rows, out)
    for r in rows:
        print(f"{r.method:7s} mae={r.mae:.4f} rmse={r.rmse:.4f} "
              f"eps={r.epsilon_used:.4g} s_hat={r.s_hat:.4g}")
    print(out)
    return EXIT_OK


def _residuals(args) -> np.ndarray:
    if args.residuals:
        return read_vector_csv(_existing(args.residuals, "residuals"))
    path = _existing(args.data, "data")
    if args.model:
        model = load_model(_existing(args.model, "model"))
        x, y = _model_inputs(model, path, args.target)
        if y is None:
            raise ValidationError(f"{path}: residuals need a target column")
        return y - predict(model, x)
    data = standardize_features(read_csv(path, args.target))
    _, resid = pilot_fit(data, _kernel(args, data.d), args.c)
    return resid


def cmd_curve(args) -> int:
    if not (args.residuals or args.data):
        raise ValidationError("curve needs --residuals or --data")
    eps_grid, s_grid = _grid(args.eps_grid), _grid(args.s_grid)
    if eps_grid.size == 0 or s_grid.size == 0:
        raise ValidationError("empty grid")
    out = _out_dir_ok(args.out or "curve.csv")
    resid = _residuals(args)
    rows = likelihood_curve(resid, eps_grid, s_grid)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "s", "neg_log_lik"])
        for e, s, v in rows:
            w.writerow([repr(float(e)), repr(float(s)), repr(float(v))])
    best = min(rows, key=lambda r: r[2])
    fit = estimate(resid)
    print(json.dumps({"curve": str(out), "grid_min": list(best),
                      "epsilon_hat": fit.epsilon_hat, "s_hat": fit.s_hat,
                      "neg_log_lik": fit.neg_log_lik}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddsvr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, kernel=True, seed=0):
        sp.add_argument("--seed", type=int, default=seed)
        sp.add_argument("--out")
        if kernel:
            sp.add_argument("--kernel", choices=("linear", "rbf"), default="rbf")
            sp.add_argument("--gamma", type=float, help="RBF width; default 1/d")
            sp.add_argument("--c", type=float, default=1.0)
            sp.add_argument("--target", help="target column (default: last)")
            sp.add_argument("--use-c-cm", action="store_true",
                            help="use the 0.95 quantile of |y| as C for cm/kcv/dd")

    s = sub.add_parser("simulate", help="run a simulation grid from a config file")
    s.add_argument("config")
    s.add_argument("--reps", type=int)
    s.add_argument("--jobs", type=int)
    common(s, kernel=False, seed=None)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="train one model on a CSV and save it")
    f.add_argument("data")
    f.add_argument("--method", default="dd", choices=[m.value for m in Method])
    common(f)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict a CSV with a saved model")
    pr.add_argument("model")
    pr.add_argument("data")
    pr.add_argument("--target", help="column to drop if present (default: last)")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", help="repeated-split benchmark on a CSV")
    b.add_argument("data")
    b.add_argument("--methods", default="tuning,cm,kcv,dd")
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--split", type=float, default=0.7)
    common(b)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("curve", help="export the working-likelihood surface")
    c.add_argument("--residuals", help="one-column CSV of residuals")
    c.add_argument("--data", help="CSV; residuals from an epsilon=0 pilot fit")
    c.add_argument("--model", help="saved model to take residuals from (with --data)")
    c.add_argument("--eps-grid", default="0:3:61")
    c.add_argument("--s-grid", default="0.1:3:59")
    common(c)
    c.set_defaults(func=cmd_curve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"ddsvr: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ComputationError, DdsvrError) as exc:
        print(f"ddsvr: computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
