"""Epsilon-SVR dual solver (SMO) and the data-driven training pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ComputationError, Dataset, ValidationError
from .kernels import KernelCache, KernelSpec, kernel_matrix

log = logging.getLogger(__name__)

MAX_PAIR_UPDATES = 100_000
GAP_TOL = 1e-4


@dataclass(frozen=True)
class SvrConfig:
    C: float = 1.0
    epsilon: float = 0.1
    kernel: KernelSpec = field(default_factory=KernelSpec)
    tol_kkt: float = 1e-3
    # one pass = n pair updates; None means 10 * n passes
    max_passes: int | None = None
    cache_bytes: int = 64 * 2**20

    def __post_init__(self) -> None:
        if not self.C > 0:
            raise ValidationError(f"C must be positive, got {self.C}")
        if not self.epsilon >= 0:
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.tol_kkt > 0:
            raise ValidationError(f"tol_kkt must be positive, got {self.tol_kkt}")
        if self.max_passes is not None and self.max_passes < 1:
            raise ValidationError("max_passes must be a positive integer")


@dataclass(frozen=True)
class SvrModel:
    """Trained model: f(x) = target_scale * (sum_i beta_i k(x_i, x) + bias)."""

    beta: np.ndarray
    bias: float
    config: SvrConfig
    train_ref: np.ndarray
    target_scale: float = 1.0
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None
    iterations: int = 0
    kkt_gap: float = 0.0
    duality_gap: float = 0.0

    def __post_init__(self) -> None:
        for name in ("beta", "train_ref", "feature_means", "feature_stds"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float)
                v.setflags(write=False)
                object.__setattr__(self, name, v)

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.beta)

    @property
    def n(self) -> int:
        return self.train_ref.shape[0]

    @property
    def d(self) -> int:
        return self.train_ref.shape[1]


class ConvergenceError(ComputationError):
    """SMO ran out of pair updates; ``model`` holds the last iterate."""

    def __init__(self, message: str, model: SvrModel, max_violation: float):
        super().__init__(message)
        self.model = model
        self.max_violation = max_violation


def dual_objective(beta, kb, y, epsilon) -> float:
    """-1/2 b'Kb - eps*sum|b| + y'b, with ``kb`` = K @ beta."""
    return float(-0.5 * beta @ kb - epsilon * np.abs(beta).sum() + y @ beta)


def primal_objective(beta, kb, bias, y, C, epsilon) -> float:
    slack = np.maximum(np.abs(y - kb - bias) - epsilon, 0.0)
    return float(0.5 * beta @ kb + C * slack.sum())


def relative_gap(primal: float, dual: float) -> float:
    return (primal - dual) / max(1.0, abs(primal))


def _bias(alpha, astar, r, eps, C, up_a, up_s, low_a, low_s) -> float:
    free_a = (alpha > 0) & (alpha < C)
    free_s = (astar > 0) & (astar < C)
    vals = np.concatenate([(r - eps)[free_a], (r + eps)[free_s]])
    if vals.size:
        return float(vals.mean())
    lo = max(np.max(r - eps, initial=-np.inf, where=up_a),
             np.max(r + eps, initial=-np.inf, where=up_s))
    hi = min(np.min(r - eps, initial=np.inf, where=low_a),
             np.min(r + eps, initial=np.inf, where=low_s))
    if not np.isfinite(lo):
        return float(hi)
    if not np.isfinite(hi):
        return float(lo)
    return 0.5 * (lo + hi)


def solve_svr(train: Dataset, config: SvrConfig, trace: list | None = None) -> SvrModel:
    """Solve the epsilon-SVR dual by SMO over the 2n multipliers.

    Variables are alpha (pushes f up) and alpha* (pushes f down); the
    working pair is the maximal KKT-violating pair. Stops when the violation
    is below ``tol_kkt`` and the relative duality gap is at most 1e-4; if
    the gap is still open the violation threshold is tightened and SMO
    resumes. ``trace``, if given, receives the dual objective after every
    pair update.
    """
    x = train.features
    y = train.targets
    n = train.n
    if n < 2:
        raise ValidationError("solve_svr needs at least 2 samples")
    C, eps = float(config.C), float(config.epsilon)
    passes = config.max_passes if config.max_passes is not None else 10 * n
    budget = min(passes * n, MAX_PAIR_UPDATES)

    cache = KernelCache(config.kernel, x, config.cache_bytes)
    diag = cache.diag
    alpha = np.zeros(n)
    astar = np.zeros(n)
    beta = np.zeros(n)
    kb = np.zeros(n)
    tol = config.tol_kkt
    it = 0

    while True:
        r = y - kb
        up_a, up_s = alpha < C, astar > 0
        low_a, low_s = alpha > 0, astar < C
        va, vs = r - eps, r + eps
        cand_up = np.where(up_a, va, -np.inf), np.where(up_s, vs, -np.inf)
        cand_lo = np.where(low_a, va, np.inf), np.where(low_s, vs, np.inf)
        iu = (int(cand_up[0].argmax()), int(cand_up[1].argmax()))
        il = (int(cand_lo[0].argmin()), int(cand_lo[1].argmin()))
        ui = 0 if cand_up[0][iu[0]] >= cand_up[1][iu[1]] else 1
        li = 0 if cand_lo[0][il[0]] <= cand_lo[1][il[1]] else 1
        m_up = cand_up[ui][iu[ui]]
        m_lo = cand_lo[li][il[li]]
        gap = m_up - m_lo

        if gap < tol:
            bias = _bias(alpha, astar, r, eps, C, up_a, up_s, low_a, low_s)
            p = primal_objective(beta, kb, bias, y, C, eps)
            d = dual_objective(beta, kb, y, eps)
            rel = relative_gap(p, d)
            if rel <= GAP_TOL or tol < 1e-12:
                return SvrModel(beta, bias, config, x, 1.0,
                                train.feature_means, train.feature_stds,
                                it, max(float(gap), 0.0), rel)
            tol *= 0.1
            continue

        if it >= budget:
            r = y - kb
            bias = _bias(alpha, astar, r, eps, C, up_a, up_s, low_a, low_s)
            model = SvrModel(beta, bias, config, x, 1.0, train.feature_means,
                             train.feature_stds, it, float(gap), np.nan)
            raise ConvergenceError(
                f"SMO did not converge in {it} pair updates "
                f"(max KKT violation {gap:.3g})", model, float(gap))

        a, b = iu[ui], il[li]
        # step t moves beta_a up and beta_b down
        room_up = C - alpha[a] if ui == 0 else astar[a]
        room_lo = alpha[b] if li == 0 else C - astar[b]
        t_max = min(room_up, room_lo)
        if a == b:
            t = t_max
        else:
            row_a, row_b = cache.row(a), cache.row(b)
            quad = diag[a] + diag[b] - 2.0 * row_a[b]
            t = min(gap / quad, t_max) if quad > 1e-12 else t_max

        if ui == 0:
            alpha[a] = C if t == room_up else alpha[a] + t
        else:
            astar[a] = 0.0 if t == room_up else astar[a] - t
        if li == 0:
            alpha[b] = 0.0 if t == room_lo else alpha[b] - t
        else:
            astar[b] = C if t == room_lo else astar[b] + t
        np.clip(alpha, 0.0, C, out=alpha)
        np.clip(astar, 0.0, C, out=astar)
        if a != b:
            beta[a] = alpha[a] - astar[a]
            beta[b] = alpha[b] - astar[b]
            kb += t * (row_a - row_b)
        it += 1
        if trace is not None:
            trace.append(dual_objective(alpha - astar, kb, y, 0.0)
                         - eps * float((alpha + astar).sum()))


def decision_values(model: SvrModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.d:
        raise ValidationError(
            f"dimension mismatch: model has {model.d} features, got {x.shape[1]}")
    sv = model.support_indices
    if sv.size == 0:
        return np.full(x.shape[0], model.bias)
    k = kernel_matrix(model.config.kernel, x, model.train_ref[sv])
    return k @ model.beta[sv] + model.bias


def predict(model: SvrModel, x) -> float | np.ndarray:
    """Predict one feature vector (returns float) or a matrix of rows.

    Inputs must already be standardized with the training statistics.
    """
    arr = np.asarray(x, dtype=float)
    out = model.target_scale * decision_values(model, arr)
    return float(out[0]) if arr.ndim == 1 else out


def kkt_violation(model: SvrModel, data: Dataset) -> float:
    """Largest violation of the epsilon-SVR optimality conditions.

    Residuals are taken on the scale the model was trained on.
    """
    C, eps = model.config.C, model.config.epsilon
    r = data.targets / model.target_scale - decision_values(model, data.features)
    b = model.beta
    at_up = np.isclose(b, C, rtol=0, atol=1e-12 * max(C, 1))
    at_lo = np.isclose(b, -C, rtol=0, atol=1e-12 * max(C, 1))
    zero = b == 0
    free = ~(at_up | at_lo | zero)
    viol = np.zeros_like(r)
    viol = np.where(zero, np.maximum(np.abs(r) - eps, 0), viol)
    viol = np.where(at_up, np.maximum(eps - r, 0), viol)
    viol = np.where(at_lo, np.maximum(r + eps, 0), viol)
    viol = np.where(free, np.abs(np.abs(r) - eps), viol)
    return float(viol.max(initial=0.0))


@dataclass(frozen=True)
class DdFit:
    model: SvrModel
    likelihood: "WorkingLikelihoodFit"
    pilot_residuals: np.ndarray
    pilot: SvrModel


def pilot_fit(train: Dataset, kernel: KernelSpec, C: float = 1.0,
              **solver_opts) -> tuple[SvrModel, np.ndarray]:
    """Epsilon=0 fit and its training residuals y - f(x)."""
    cfg = SvrConfig(C=C, epsilon=0.0, kernel=kernel, **solver_opts)
    model = solve_svr(train, cfg)
    return model, train.targets - predict(model, train.features)


def fit_dd(train: Dataset, kernel: KernelSpec, C: float = 1.0,
           pilot: tuple[SvrModel, np.ndarray] | None = None,
           **solver_opts) -> DdFit:
    """Four-step data-driven fit.

    1. pilot SVR with epsilon=0; 2. working-likelihood estimate of
    (eps, s) from its residuals; 3. refit on targets / s with the
    estimated epsilon and the same C. Predicting with the returned model
    is step 4. If the pilot interpolates the data (all residuals within
    the solver tolerance) the pilot model itself is returned unscaled and
    the likelihood fit is flagged ``degenerate``.
    """
    from .likelihood import degenerate_fit, estimate

    if train.n < 10:
        raise ValidationError("fit_dd needs at least 10 training samples")
    pilot_model, resid = pilot if pilot is not None else pilot_fit(
        train, kernel, C, **solver_opts)
    if np.max(np.abs(resid)) <= pilot_model.config.tol_kkt:
        return DdFit(pilot_model, degenerate_fit(resid), resid, pilot_model)
    lik = estimate(resid)
    scaled = train.with_targets(train.targets / lik.s_hat)
    cfg = SvrConfig(C=C, epsilon=lik.epsilon_hat, kernel=kernel, **solver_opts)
    model = replace(solve_svr(scaled, cfg), target_scale=lik.s_hat)
    return DdFit(model, lik, resid, pilot_model)
