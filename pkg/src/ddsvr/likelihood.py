"""Working likelihood for the insensitive parameter eps and noise scale s.

The working density of a standardized residual u is the eps-Laplacian

    g(u; eps) = exp(-|u|_eps) / (2 (1 + eps)),    |u|_eps = max(|u| - eps, 0)

and (eps, s) are fitted by minimizing the negative log-likelihood of the
residuals U_i under density g(U/s; eps) / s.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .core import ComputationError, RngStream, ValidationError

log = logging.getLogger(__name__)

EPS_MAX = 20.0
S_FLOOR = 1e-8
FIXED_POINT_TOL = 1e-6
MIN_SAMPLES = 10


class DegenerateResidualsError(ComputationError):
    """All residuals are zero, so no noise scale can be estimated."""


class InsufficientSampleError(ValidationError):
    pass


class RootNotFoundError(ComputationError):
    def __init__(self, message: str, record: list[tuple[float, float]]):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class WorkingLikelihoodFit:
    epsilon_hat: float
    s_hat: float
    neg_log_lik: float
    iterations: int
    converged: bool
    fixed_point_residual: float
    # None for an interior optimum, else "eps_zero" or "eps_max"
    boundary: str | None = None
    degenerate: bool = False


@dataclass(frozen=True)
class LimitingParams:
    epsilon_star: float
    s_star: float
    integration_error: float
    # limiting per-sample negative log-likelihood at the solution
    objective: float = float("nan")
    boundary: str | None = None


def eps_loss(u, epsilon: float):
    """|u|_eps; works elementwise on arrays."""
    out = np.maximum(np.abs(u) - epsilon, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def eps_laplacian_pdf(u, epsilon: float):
    out = np.exp(-np.maximum(np.abs(u) - epsilon, 0.0)) / (2.0 * (1.0 + epsilon))
    return float(out) if np.ndim(out) == 0 else out


def neg_log_lik(residuals, epsilon: float, s: float) -> float:
    if not s > 0:
        raise ValidationError(f"scale s must be positive, got {s}")
    if epsilon < 0:
        raise ValidationError(f"epsilon must be >= 0, got {epsilon}")
    u = np.asarray(residuals, dtype=float).ravel()
    n = u.size
    if n < 1:
        raise ValidationError("need at least one residual")
    return float(n * np.log(s) + n * np.log(2.0 * (1.0 + epsilon))
                 + np.maximum(np.abs(u) / s - epsilon, 0.0).sum())


def nll_gradient(residuals, epsilon: float, s: float) -> tuple[float, float]:
    """Partial derivatives of :func:`neg_log_lik` in (eps, s).

    Valid away from the breakpoints |U_i| = eps * s.
    """
    a = np.abs(np.asarray(residuals, dtype=float).ravel())
    n = a.size
    out = a / s > epsilon
    return (n / (1.0 + epsilon) - out.sum(),
            n / s - a[out].sum() / s**2)


def stationarity_residual(residuals, epsilon: float, s: float,
                          eps_max: float = EPS_MAX) -> float:
    """Max violation of the fixed-point equations

        eps = #{|U/s| <= eps} / #{|U/s| > eps},   s = sum_{|U/s| > eps} |U| / n.

    Residuals sitting exactly on the tube edge may be split between the
    two sets by a common weight (the subgradient form of the conditions,
    which is what holds at a minimizer). On the eps=0 or eps_max edges the
    eps equation is replaced by its one-sided inequality.
    """
    a = np.abs(np.asarray(residuals, dtype=float).ravel())
    n = a.size
    z = a / s
    tie = np.abs(z - epsilon) <= 1e-9 * max(1.0, epsilon)
    strict = (z > epsilon) & ~tie
    m = int(strict.sum())
    k = int(tie.sum())
    S = float(a[strict].sum())
    edge = epsilon * s

    def viol(lam: float) -> float:
        out = m + lam
        if epsilon <= 0.0:
            v_eps = max(0.0, out - n)
        elif epsilon >= eps_max:
            v_eps = max(0.0, n / (1.0 + epsilon) - out)
        else:
            v_eps = abs(epsilon - (n - out) / out) if out > 0 else np.inf
        v_s = abs(s - (S + lam * edge) / n)
        return max(v_eps, v_s)

    cands = [0.0, float(k)]
    if k:
        cands.append(min(max(n / (1.0 + epsilon) - m, 0.0), k))
        if edge > 0:
            cands.append(min(max((n * s - S) / edge, 0.0), k))
    return float(min(viol(lam) for lam in cands))


def _profile_candidates(a_sorted: np.ndarray, eps_max: float, s_lo: float,
                        s_hi: float):
    """Exact minimizer over tube edges t = eps*s in {0} U {|U_i|}.

    For a fixed edge t the optimal scale solves n s^2 = A (s + t) with
    A = sum (|U_i| - t)_+; between data points the profiled objective is
    concave in t, so the minimum sits on a data point or at t = 0.
    """
    a = a_sorted
    n = a.size
    t = np.concatenate([[0.0], np.unique(a[a > 0])])
    suffix = np.concatenate([np.cumsum(a[::-1])[::-1], [0.0]])
    pos = np.searchsorted(a, t, side="right")
    m = n - pos
    A = suffix[pos] - m * t
    ok = A > 0
    t, A = t[ok], A[ok]
    s = (A + np.sqrt(A * A + 4.0 * n * A * t)) / (2.0 * n)
    eps = t / s
    ok = (eps <= eps_max) & (s >= s_lo) & (s <= s_hi)
    t, A, s, eps = t[ok], A[ok], s[ok], eps[ok]
    val = n * np.log(s + t) + n * np.log(2.0) + A / s
    return eps, s, val


def _cap_candidates(a_sorted: np.ndarray, eps_cap: float, s_lo: float,
                    s_hi: float):
    """Best scale with eps held at ``eps_cap``."""
    a = a_sorted
    n = a.size
    suffix = np.concatenate([np.cumsum(a[::-1])[::-1], [0.0]])
    s_break = a[a > 0] / eps_cap
    s_cell = suffix[: n] / n
    s = np.concatenate([s_break, s_cell])
    s = s[(s >= s_lo) & (s <= s_hi)]
    if s.size == 0:
        return np.empty(0), np.empty(0), np.empty(0)
    pos = np.searchsorted(a, eps_cap * s, side="right")
    m = n - pos
    A = suffix[pos] - m * eps_cap * s
    val = n * np.log(s) + n * np.log(2.0 * (1.0 + eps_cap)) + A / s
    return np.full(s.size, eps_cap), s, val


def _fixed_point(a: np.ndarray, eps_max: float, s_lo: float, s_hi: float,
                 max_iter: int = 500, damping: float = 0.5):
    n = a.size
    eps, s = 0.0, float(a.mean())
    it = 0
    for it in range(1, max_iter + 1):
        inside = a / s <= eps
        n_out = n - int(inside.sum())
        if n_out == 0:
            break
        eps_new = min((n - n_out) / n_out, eps_max)
        s_new = (1 - damping) * s + damping * float(a[~inside].sum()) / n
        s_new = min(max(s_new, s_lo), s_hi)
        done = abs(eps_new - eps) <= 1e-12 and abs(s_new - s) <= 1e-12 * s
        eps, s = eps_new, s_new
        if done:
            break
    return eps, s, it


def estimate(residuals: Sequence[float] | np.ndarray,
             eps_max: float = EPS_MAX) -> WorkingLikelihoodFit:
    """Minimize the working negative log-likelihood over (eps, s).

    Runs the damped fixed-point iteration from (0, mean|U|), then an exact
    search over every candidate tube edge (plus the eps = eps_max edge),
    and keeps whichever point has the lower objective.
    """
    u = np.asarray(residuals, dtype=float).ravel()
    if u.size < MIN_SAMPLES:
        raise InsufficientSampleError(
            f"need at least {MIN_SAMPLES} residuals, got {u.size}")
    if not np.isfinite(u).all():
        raise ValidationError("residuals must be finite")
    a = np.sort(np.abs(u))
    if a[-1] == 0.0:
        raise DegenerateResidualsError("all residuals are zero")
    s_lo, s_hi = S_FLOOR, 10.0 * float(a.mean())

    fp_eps, fp_s, iters = _fixed_point(a, eps_max, s_lo, s_hi)
    fp_val = neg_log_lik(a, fp_eps, fp_s)

    e1, s1, v1 = _profile_candidates(a, eps_max, s_lo, s_hi)
    e2, s2, v2 = _cap_candidates(a, eps_max, s_lo, s_hi)
    eps_all = np.concatenate([e1, e2])
    s_all = np.concatenate([s1, s2])
    val_all = np.concatenate([v1, v2])
    best = int(np.argmin(val_all))
    eps_hat, s_hat = float(eps_all[best]), float(s_all[best])
    # exact objective recomputed the same way for both routes
    val = neg_log_lik(a, eps_hat, s_hat)
    if fp_val < val:
        eps_hat, s_hat, val = fp_eps, fp_s, fp_val

    boundary = None
    if eps_hat <= 0.0:
        boundary = "eps_zero"
    elif eps_hat >= eps_max:
        boundary = "eps_max"
    resid = stationarity_residual(a, eps_hat, s_hat, eps_max)
    return WorkingLikelihoodFit(eps_hat, s_hat, val, iters,
                                resid <= FIXED_POINT_TOL, resid, boundary)


def degenerate_fit(residuals) -> WorkingLikelihoodFit:
    """Floor values used when the pilot fit leaves no usable noise."""
    return WorkingLikelihoodFit(0.0, S_FLOOR, float("nan"), 0, False,
                                float("nan"), "eps_zero", degenerate=True)


def likelihood_curve(residuals, eps_grid, s_grid) -> list[tuple[float, float, float]]:
    """(eps, s, neg_log_lik) over the product grid, eps-major."""
    u = np.asarray(residuals, dtype=float).ravel()
    return [(float(e), float(s), neg_log_lik(u, float(e), float(s)))
            for e in eps_grid for s in s_grid]


def sample_eps_laplacian(rng: RngStream, epsilon: float, n: int) -> np.ndarray:
    """Inverse-CDF draws from the eps-Laplacian density.

    With q = 1 / (2 (1 + eps)): below q the left exponential tail, above
    1 - q the right tail, otherwise the flat part on [-eps, eps].
    """
    if epsilon < 0:
        raise ValidationError(f"epsilon must be >= 0, got {epsilon}")
    v = rng.uniform(n)
    q = 0.5 / (1.0 + epsilon)
    out = -epsilon + (v - q) * 2.0 * (1.0 + epsilon)
    lo, hi = v < q, v > 1.0 - q
    out[lo] = -epsilon + np.log(v[lo] / q)
    out[hi] = epsilon - np.log((1.0 - v[hi]) / q)
    return out


def limiting_params(noise_pdf: Callable[[float], float], support_bound: float,
                    eps_max: float = EPS_MAX,
                    breakpoints: Sequence[float] = (),
                    t_bracket: tuple[float, float] | None = None,
                    n_scan: int = 400) -> LimitingParams:
    """Large-sample limit of :func:`estimate` for a given noise density.

    With t = eps*s the tube edge, P(t) = Pr(|U| > t) and
    T(t) = E[|U| 1{|U| > t}], the limiting equations read
    1/(1 + eps) = P(t) and s = T(t). Roots of eps(t) s(t) - t are located
    by scanning t and refining with Brent's method; t = 0 is always a root
    and the eps = eps_max edge is solved separately. The candidate with the
    smallest limiting objective wins.
    """
    B = float(support_bound)
    if not B > 0:
        raise ValidationError("support_bound must be positive")
    pts = sorted({abs(float(p)) for p in breakpoints if 0 < abs(p) < B})
    err_total = 0.0

    def _quad(f, lo, hi):
        nonlocal err_total
        inner = [p for p in pts if lo < p < hi]
        val, err = integrate.quad(f, lo, hi, points=inner or None,
                                  limit=500, epsabs=1e-13, epsrel=1e-12)
        err_total += err
        return val

    mass = _quad(lambda v: noise_pdf(v) + noise_pdf(-v), 0.0, B)
    if abs(mass - 1.0) > 1e-8:
        raise ValidationError(
            f"noise_pdf integrates to {mass:.12g} on the support, not 1")

    def tail_prob(t):
        return _quad(lambda v: noise_pdf(v) + noise_pdf(-v), t, B)

    def tail_abs(t):
        return _quad(lambda v: v * (noise_pdf(v) + noise_pdf(-v)), t, B)

    def phi(t):
        P = tail_prob(t)
        if P <= 0:
            return np.inf
        return (1.0 / P - 1.0) * tail_abs(t) - t

    def objective(eps, s):
        t = eps * s
        return (np.log(s) + np.log(2.0 * (1.0 + eps))
                + (tail_abs(t) - t * tail_prob(t)) / s)

    cands: list[tuple[float, float, str | None]] = []
    p0 = tail_prob(0.0)
    cands.append((0.0, tail_abs(0.0), "eps_zero") if abs(p0 - 1.0) < 1e-8
                 else (1.0 / p0 - 1.0, tail_abs(0.0), None))

    lo_t, hi_t = t_bracket if t_bracket is not None else (0.0, B)
    grid = np.linspace(lo_t, hi_t, n_scan + 1)[1:-1]
    record = [(float(t), float(phi(t))) for t in grid]
    found = False
    for (t0, f0), (t1, f1) in zip(record, record[1:]):
        if np.isfinite(f0) and np.isfinite(f1) and f0 * f1 < 0:
            t_root = optimize.brentq(phi, t0, t1, xtol=1e-14, rtol=1e-13)
            P = tail_prob(t_root)
            eps = 1.0 / P - 1.0
            if eps <= eps_max:
                cands.append((eps, tail_abs(t_root), None))
            found = True
    if t_bracket is not None and not found:
        raise RootNotFoundError(
            f"no sign change of the limiting equations in t in {t_bracket}",
            record)

    def psi(s):
        return tail_abs(eps_max * s) - s

    s_hi = B / eps_max
    if psi(s_hi) < 0 < psi(1e-12):
        s_cap = optimize.brentq(psi, 1e-12, s_hi, xtol=1e-15, rtol=1e-13)
        cands.append((eps_max, s_cap, "eps_max"))

    scored = [(objective(e, s), e, s, b) for e, s, b in cands if s > 0]
    if not scored:
        raise RootNotFoundError("no admissible solution of the limiting equations",
                                record)
    val, eps, s, bnd = min(scored, key=lambda r: r[0])
    return LimitingParams(float(eps), float(s), err_total, float(val), bnd)
