"""Baseline epsilon rules, cross-validation and error metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (Dataset, DdsvrError, RngStream, SplitSpec, ValidationError,
                   apply_standardization, split_indices, standardize_features)
from .kernels import KernelSpec
from .solver import SvrConfig, fit_dd, pilot_fit, predict, solve_svr

TUNING_C = 1.0
TUNING_EPSILON = 0.1
KCV_CANDIDATES = (0.01, 0.05, 0.1, 0.2, 0.3)
KCV_FOLDS = 10


class Method(str, Enum):
    TUNING = "tuning"
    CM = "cm"
    KCV = "kcv"
    DD = "dd"


def parse_methods(text: str | Iterable[str]) -> list[Method]:
    items = text.split(",") if isinstance(text, str) else list(text)
    out = []
    for item in items:
        item = str(item).strip().lower()
        if not item:
            continue
        try:
            m = Method(item)
        except ValueError:
            raise ValidationError(
                f"unknown method {item!r}; choose from "
                f"{', '.join(m.value for m in Method)}") from None
        if m not in out:
            out.append(m)
    if not out:
        raise ValidationError("no methods given")
    return out


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    ratio_mae: float | None = None
    ratio_rmse: float | None = None
    epsilon_used: float = float("nan")
    s_hat: float = float("nan")
    C_used: float = float("nan")


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValidationError(f"length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise ValidationError("empty input")
    return p, t


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def cm_epsilon(sigma_noise: float, n: int) -> float:
    """3 * sigma * sqrt(ln n / n)."""
    if n < 2:
        raise ValidationError(f"cm_epsilon needs n >= 2, got {n}")
    if sigma_noise < 0:
        raise ValidationError("sigma_noise must be non-negative")
    return 3.0 * sigma_noise * math.sqrt(math.log(n) / n)


def c_cm(targets) -> float:
    """Nearest-rank 0.95 quantile of |y| (the ceil(0.95 n)-th order statistic)."""
    a = np.sort(np.abs(np.asarray(targets, dtype=float).ravel()))
    if a.size == 0:
        raise ValidationError("empty input")
    return float(a[math.ceil(0.95 * a.size) - 1])


def kfold_indices(n: int, k: int, rng: RngStream) -> list[np.ndarray]:
    if k < 2 or k > n:
        raise ValidationError(f"need 2 <= k <= n, got k={k}, n={n}")
    return [np.sort(f) for f in np.array_split(rng.permutation(n), k)]


def kcv_select(train: Dataset, k: int = KCV_FOLDS,
               candidates: Sequence[float] = KCV_CANDIDATES,
               kernel: KernelSpec | None = None, C: float = TUNING_C,
               rng: RngStream | None = None, **solver_opts) -> float:
    """Candidate epsilon with the lowest mean validation RMSE over k folds.

    Ties go to the smaller epsilon.
    """
    cands = sorted(set(float(c) for c in candidates))
    if not cands:
        raise ValidationError("no candidate epsilon values")
    if len(cands) == 1:
        return cands[0]
    kernel = kernel or KernelSpec.rbf(d=train.d)
    folds = kfold_indices(train.n, k, rng or RngStream(0, 0))
    best, best_score = cands[0], np.inf
    for eps in cands:
        scores = []
        for f in folds:
            keep = np.ones(train.n, dtype=bool)
            keep[f] = False
            fit_part, val = train.subset(np.flatnonzero(keep)), train.subset(f)
            model = solve_svr(fit_part, SvrConfig(C, eps, kernel, **solver_opts))
            scores.append(rmse(predict(model, val.features), val.targets))
        score = float(np.mean(scores))
        if score < best_score:
            best, best_score = eps, score
    return best


def _fit_method(method: Method, train: Dataset, kernel: KernelSpec,
                C: float, pilot, rng: RngStream | None, kcv_folds: int,
                kcv_candidates, use_c_cm: bool, solver_opts: dict):
    """Returns (model, epsilon_used, s_hat, C_used)."""
    if method is Method.TUNING:
        cfg = SvrConfig(TUNING_C, TUNING_EPSILON, kernel, **solver_opts)
        return solve_svr(train, cfg), TUNING_EPSILON, float("nan"), TUNING_C
    c_used = c_cm(train.targets) if use_c_cm else C
    if method is Method.KCV:
        eps = kcv_select(train, kcv_folds, kcv_candidates, kernel, c_used,
                         rng, **solver_opts)
        cfg = SvrConfig(c_used, eps, kernel, **solver_opts)
        return solve_svr(train, cfg), eps, float("nan"), c_used
    if pilot is None or pilot[0].config.C != c_used:
        pilot = pilot_fit(train, kernel, c_used, **solver_opts)
    if method is Method.CM:
        sigma = float(np.std(pilot[1], ddof=1))
        eps = cm_epsilon(sigma, train.n)
        cfg = SvrConfig(c_used, eps, kernel, **solver_opts)
        return solve_svr(train, cfg), eps, float("nan"), c_used
    fit = fit_dd(train, kernel, c_used, pilot=pilot, **solver_opts)
    return fit.model, fit.likelihood.epsilon_hat, fit.likelihood.s_hat, c_used


def run_methods(methods: Sequence[Method], train: Dataset, test: Dataset,
                kernel: KernelSpec, truth=None, C: float = 1.0,
                rng: RngStream | None = None, kcv_folds: int = KCV_FOLDS,
                kcv_candidates: Sequence[float] = KCV_CANDIDATES,
                use_c_cm: bool = False, **solver_opts) -> dict[Method, MetricReport]:
    """Train each method on ``train`` and score it on ``test``.

    ``truth`` replaces the test targets as the scoring reference (e.g. the
    noise-free mean). A tuning fit on the same split is always run so every
    report carries its ratios. CM and D-D share one epsilon=0 pilot fit.
    """
    if train.d != test.d:
        raise ValidationError("train and test have different dimensions")
    ref = test.targets if truth is None else np.asarray(truth, dtype=float)
    pilot = None
    if (Method.CM in methods or Method.DD in methods) and not use_c_cm:
        pilot = pilot_fit(train, kernel, C, **solver_opts)
    raw: dict[Method, tuple] = {}
    for m in [Method.TUNING] + [m for m in methods if m is not Method.TUNING]:
        model, eps, s_hat, c_used = _fit_method(
            m, train, kernel, C, pilot, rng, kcv_folds, kcv_candidates,
            use_c_cm, solver_opts)
        pred = predict(model, test.features)
        raw[m] = (mae(pred, ref), rmse(pred, ref), eps, s_hat, c_used)
    t_mae, t_rmse = raw[Method.TUNING][:2]
    out = {}
    for m in methods:
        a, r, eps, s_hat, c_used = raw[m]
        out[m] = MetricReport(a, r, _ratio(t_mae, a), _ratio(t_rmse, r),
                              eps, s_hat, c_used)
    return out


def _ratio(baseline: float, value: float) -> float:
    if value == 0:
        return float("inf") if baseline > 0 else 1.0
    return baseline / value


def run_method(method: Method, train: Dataset, test: Dataset,
               kernel: KernelSpec, truth=None, **kw) -> MetricReport:
    return run_methods([method], train, test, kernel, truth, **kw)[method]


REPORT_COLUMNS = ("experiment_id", "method", "mae", "rmse", "ratio_mae",
                  "ratio_rmse", "epsilon_used", "s_hat", "seed")


@dataclass(frozen=True)
class ReportRow:
    """One averaged (cell, method) line of an experiment report."""

    experiment_id: str
    method: str
    mae: float
    rmse: float
    ratio_mae: float
    ratio_rmse: float
    epsilon_used: float
    s_hat: float
    seed: int
    extra: tuple[tuple[str, object], ...] = ()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report_csv(rows: Sequence[ReportRow], path: str | Path) -> Path:
    path = Path(path)
    extra_cols: list[str] = []
    for row in rows:
        for k, _ in row.extra:
            if k not in extra_cols:
                extra_cols.append(k)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(REPORT_COLUMNS) + extra_cols)
        for row in rows:
            d = asdict(row)
            ex = dict(row.extra)
            w.writerow([_fmt(d[c]) for c in REPORT_COLUMNS]
                       + [_fmt(ex.get(c, "")) for c in extra_cols])
    return path


def read_report_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def run_bench(data: Dataset, methods: Sequence[Method], reps: int = 20,
              train_fraction: float = 0.7, seed: int = 0,
              gamma: float | None = None, C: float = 1.0,
              experiment_id: str = "bench", use_c_cm: bool = False,
              kernel_family: str = "rbf", **solver_opts) -> list[ReportRow]:
    """Repeated random-split benchmark on one dataset.

    Each repetition draws a fresh split from stream ``(seed, rep)``,
    standardizes features on the training part, and scores every method
    against the observed test targets. Failed repetitions are excluded
    from the averages and counted in the ``reps_failed`` column.
    """
    if reps < 1:
        raise ValidationError("reps must be at least 1")
    methods = list(methods)
    SplitSpec(train_fraction, seed)
    results, failed = [], 0
    for rep in range(reps):
        rng = RngStream(seed, rep)
        tr, te = split_indices(data.n, SplitSpec(train_fraction, rng.child(2).seed))
        train = standardize_features(data.subset(tr))
        test = apply_standardization(data.subset(te), train)
        kernel = (KernelSpec.linear() if kernel_family == "linear"
                  else KernelSpec.rbf(gamma, d=train.d))
        try:
            results.append(run_methods(methods, train, test, kernel, None, C,
                                       rng.child(3), use_c_cm=use_c_cm,
                                       **solver_opts))
        except DdsvrError:
            failed += 1
    rows = []
    for m in methods:
        per = [r[m] for r in results]

        def avg(attr):
            vals = [getattr(x, attr) for x in per]
            return math.fsum(vals) / len(vals) if vals else float("nan")
        rows.append(ReportRow(
            experiment_id, m.value, avg("mae"), avg("rmse"), avg("ratio_mae"),
            avg("ratio_rmse"), avg("epsilon_used"), avg("s_hat"), seed,
            (("reps_ok", len(per)), ("reps_failed", failed))))
    return rows
