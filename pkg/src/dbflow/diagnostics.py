"""Post-hoc analysis of trajectories: differences, ISS fits, slopes, audits."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from dbflow.linalg import (
    commutator_generator,
    haar_rotation,
    lyapunov,
    random_skew,
    rotate_covariance,
)
from dbflow.retractions import cayley_exact
from dbflow.solver import TrajectoryLog, lipschitz_bound


@dataclass
class ComparisonReport:
    per_step: np.ndarray = field(repr=False)
    max: float
    mean: float

    def within(self, tol: float) -> bool:
        return self.max <= tol

    def to_json(self) -> str:
        return json.dumps({"max": self.max, "mean": self.mean, "steps": int(self.per_step.size)})


def _iterates(run):
    if isinstance(run, TrajectoryLog):
        if run.iterates is None:
            raise ValueError("log was recorded without iterates")
        return np.asarray(run.iterates)
    return np.asarray(run)


def trajectory_difference(run_a, run_b) -> ComparisonReport:
    """Per-step ``||M_k^a - M_k^b||_F`` for two logs (or iterate stacks)."""
    a, b = _iterates(run_a), _iterates(run_b)
    if a.shape != b.shape:
        raise ValueError(f"trajectories differ in shape: {a.shape} vs {b.shape}")
    d = np.linalg.norm(a - b, axis=(1, 2))
    return ComparisonReport(d, float(d.max()) if d.size else 0.0, float(d.mean()) if d.size else 0.0)


def input_bound(norm_ce: float, norm_ee: float) -> float:
    """``4 ||C_e||_2 ||E_e||_F + 2 ||E_e||_F^2``: bound on the generator perturbation."""
    if norm_ce < 0 or norm_ee < 0:
        raise ValueError("norms must be non-negative")
    return 4.0 * norm_ce * norm_ee + 2.0 * norm_ee**2


def generator_perturbation(A, E) -> float:
    """``||Omega(A + E) - Omega(A)||_F``, the quantity :func:`input_bound` controls."""
    return float(np.linalg.norm(commutator_generator(A + E) - commutator_generator(A)))


def domain_radius(g: float, delta_lower: float, norm_ce: float) -> float:
    """``(g - delta) / (2 sqrt(2) ||C_e||_2)``: the sqrt(f) radius that keeps ``delta(M)`` above ``delta``."""
    if not 0 <= delta_lower < g:
        raise ValueError("need 0 <= delta_lower < g")
    if norm_ce <= 0:
        raise ValueError("norm_ce must be positive")
    return (g - delta_lower) / (2.0 * math.sqrt(2.0) * norm_ce)


@dataclass
class IssFit:
    contraction: float
    gain: float
    radius: float
    radius_median: float
    stationary: bool
    c1: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def steady_state(f_series, tail: float = 0.1) -> tuple[float, float]:
    """Mean and median of ``sqrt(f)`` over the last ``tail`` fraction of the series."""
    y = np.sqrt(np.maximum(np.asarray(f_series, dtype=float), 0.0))
    if y.size == 0:
        raise ValueError("empty series")
    m = max(1, int(round(tail * y.size)))
    t = y[-m:]
    return float(t.mean()), float(np.median(t))


def iss_fit(f_series, eta: float | None = None, delta_lower: float | None = None,
            tail: float = 0.1, drift_tol: float = 0.1) -> IssFit:
    """Fit ``y_{k+1} = a y_k + b`` on ``y = sqrt(f)`` by least squares.

    ``a`` is the contraction estimate and ``b`` the gain.  When ``eta`` and
    ``delta_lower`` are given, ``c1 = (1 - a) / (delta^2 eta)`` is reported.
    The tail counts as non-stationary when a linear trend across it moves
    by more than ``drift_tol`` times its mean.
    """
    y = np.sqrt(np.maximum(np.asarray(f_series, dtype=float), 0.0))
    if y.size < 3:
        raise ValueError("need at least three samples")
    X = np.column_stack([y[:-1], np.ones(y.size - 1)])
    (a, b), *_ = np.linalg.lstsq(X, y[1:], rcond=None)
    mean, median = steady_state(y**2, tail)
    m = max(2, int(round(tail * y.size)))
    t = y[-m:]
    slope = np.polyfit(np.arange(m), t, 1)[0] if m > 2 else 0.0
    stationary = bool(abs(slope) * m <= drift_tol * max(mean, np.finfo(float).tiny)) or mean == 0.0
    c1 = None
    if eta is not None and delta_lower:
        c1 = float((1.0 - a) / (delta_lower**2 * eta))
    return IssFit(float(a), float(b), mean, median, stationary, c1)


def linear_fit(x, y) -> tuple[float, float, float]:
    """Ordinary least squares ``y = slope x + intercept``; returns ``(slope, intercept, R^2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def riemannian_gradient(M, C_e) -> np.ndarray:
    """``grad f(M) = -M Omega(M)``."""
    return -M @ commutator_generator(rotate_covariance(M, C_e))


def empirical_lipschitz(C_e, samples: int = 1000, eps: float = 1e-4,
                        rng: np.random.Generator | None = None) -> float:
    """Largest ``||grad f(M) - grad f(M')||_F / ||M - M'||_F`` over Haar pairs at distance ``~eps``."""
    C_e = np.asarray(C_e, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(0)
    n = C_e.shape[0]
    best = 0.0
    for _ in range(samples):
        M = haar_rotation(n, rng)
        X = random_skew(n, rng)
        X *= eps / np.linalg.norm(X)
        M2 = M @ cayley_exact(X)
        dist = np.linalg.norm(M2 - M)
        if dist == 0.0:
            continue
        num = np.linalg.norm(riemannian_gradient(M, C_e) - riemannian_gradient(M2, C_e))
        best = max(best, float(num / dist))
    return best


def lipschitz_ratio(C_e, norm_ce: float, **kw) -> tuple[float, float, float]:
    """``(L_est, L_bound, L_est / L_bound)``."""
    est = empirical_lipschitz(C_e, **kw)
    bound = lipschitz_bound(np.asarray(C_e).shape[0], norm_ce)
    return est, bound, est / bound


def monotonicity_audit(f_series, rel_tol: float = 1e-6) -> int:
    """Number of steps with ``f_{k+1} > f_k (1 + rel_tol)``."""
    f = np.asarray(f_series, dtype=float)
    if f.size < 2:
        return 0
    return int(np.sum(f[1:] > f[:-1] * (1.0 + rel_tol)))


def loglog_slope(f_series, burn_in: int = 0, k=None) -> float:
    """Least-squares slope of ``log f`` against ``log k`` for ``k > burn_in``.

    ``k`` defaults to ``0, 1, 2, ...``; the point ``k = 0`` is always dropped.
    """
    f = np.asarray(f_series, dtype=float)
    k = np.arange(f.size, dtype=float) if k is None else np.asarray(k, dtype=float)
    keep = (k > burn_in) & (k > 0)
    if not keep.any():
        raise ValueError("nothing left after burn-in")
    if np.any(f[keep] <= 0):
        raise ValueError("log-log fit needs positive values")
    slope, _ = np.polyfit(np.log(k[keep]), np.log(f[keep]), 1)
    return float(slope)


def sandwich_holds(A, norm_ce: float, rtol: float = 1e-9) -> bool:
    """``2 delta^2 f <= ||Omega||^2 <= 8 ||C_e||_2^2 f`` with ``delta = delta(A)``."""
    d = np.sort(np.diag(A))
    delta = float(np.min(np.diff(d)))
    f = lyapunov(A)
    w2 = float(np.sum(commutator_generator(A) ** 2))
    slack = rtol * max(1.0, 8.0 * norm_ce**2 * f)
    return 2.0 * delta**2 * f <= w2 + slack and w2 <= 8.0 * norm_ce**2 * f + slack


def domain_bound_holds(A, g: float, atol: float = 1e-9) -> bool:
    """``delta(A) >= g - 2 sqrt(2 f)``."""
    d = np.sort(np.diag(A))
    return float(np.min(np.diff(d))) >= g - 2.0 * math.sqrt(2.0 * lyapunov(A)) - atol


def audit_log(log: TrajectoryLog, norm_ce: float, g: float, rtol: float = 1e-9) -> dict:
    """Re-check the sandwich and domain inequalities on every logged step.

    The log must carry ground-truth diagnostics (``f``, ``delta`` and
    ``||Omega||`` of the trace-free signal).  Returns violation counts.
    """
    f = log.column("f")
    delta = log.column("delta")
    w2 = log.column("omega_norm") ** 2
    slack = rtol * np.maximum(1.0, 8.0 * norm_ce**2 * f)
    low = int(np.sum(2.0 * delta**2 * f > w2 + slack))
    high = int(np.sum(w2 > 8.0 * norm_ce**2 * f + slack))
    dom = int(np.sum(delta < g - 2.0 * np.sqrt(2.0 * f) - 1e-9))
    return {"sandwich_lower": low, "sandwich_upper": high, "domain": dom}


def gradient_fd_check(C_e, M, Xi, hs=(1e-2, 5e-3, 2.5e-3, 1.25e-3)):
    """Central-difference check of ``D f(M)[M Xi] = <-Omega, Xi>``.

    Returns ``(errors, order)`` where ``order`` is the fitted log-log slope of
    the error against ``h`` (about 2 for a correct gradient).
    """
    A = rotate_covariance(M, C_e)
    exact = float(np.sum(-commutator_generator(A) * Xi))
    errs = []
    for h in hs:
        fp = lyapunov(rotate_covariance(M @ cayley_exact(h * Xi), C_e))
        fm = lyapunov(rotate_covariance(M @ cayley_exact(-h * Xi), C_e))
        errs.append(abs((fp - fm) / (2.0 * h) - exact))
    errs = np.asarray(errs)
    order = float(np.polyfit(np.log(hs), np.log(np.maximum(errs, 1e-300)), 1)[0])
    return errs, order
