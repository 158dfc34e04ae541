"""Comparison algorithms and their closed-form degradation predictors.

Every baseline returns the same :class:`~dbflow.solver.TrajectoryLog` as the
flow solver, with ``f``/``delta``/``||Omega||`` measured against the
trace-free signal so the methods can be compared row by row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dbflow.linalg import (
    check_rotation,
    commutator_generator,
    haar_rotation,
    lyapunov,
    off_diagonal,
    random_symmetric,
    rotate_covariance,
    skew,
    spectral_separation,
    sym,
)
from dbflow.observation import MvpOracle, ObservationModel, hutchinson_trace
from dbflow.retractions import qf, qr_retract
from dbflow.solver import StepRecord, StepSchedule, TrajectoryLog

BASELINE_KINDS = ("subspace", "qr_oja", "raw_oja", "tf_oja", "tf_oja_hutchinson", "euclidean_sgd")


def si_contraction(lam1: float, lam2: float, sigma2: float) -> float:
    """Per-step contraction ``(lam2 + s) / (lam1 + s)`` of subspace iteration."""
    if not lam1 > lam2:
        raise ValueError("need lam1 > lam2")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    return (lam2 + sigma2) / (lam1 + sigma2)


def oja_effective_step(eta: float, sigma2: float) -> float:
    """QR-Oja step after the isotropic part is normalized away: ``eta / (1 + eta s)``."""
    if eta <= 0 or sigma2 < 0:
        raise ValueError("need eta > 0 and sigma2 >= 0")
    return eta / (1.0 + eta * sigma2)


def subspace_iteration_step(M, oracle: MvpOracle) -> np.ndarray:
    return qr_retract(oracle.apply(M))


def qr_oja_step(M, oracle: MvpOracle, eta: float) -> np.ndarray:
    if eta <= 0:
        raise ValueError("step size must be positive")
    return qr_retract(M + eta * oracle.apply(M))


def tf_oja_step(M, oracle: MvpOracle, eta: float, trace: float) -> np.ndarray:
    """``qf((I + eta tf(C)) M)`` with ``tr C`` supplied by the caller.

    ``trace`` comes either from entry access (not matrix-free) or from
    :func:`~dbflow.observation.hutchinson_trace`.
    """
    if eta <= 0:
        raise ValueError("step size must be positive")
    Y = oracle.apply(M)
    return qr_retract(M + eta * (Y - (trace / oracle.n) * M))


def euclidean_gradient(M, Y) -> np.ndarray:
    """``2 C M off(M^T C M)`` given ``Y = C M``."""
    A = sym(M.T @ Y)
    return 2.0 * Y @ off_diagonal(A)


def euclidean_sgd_step(M, oracle: MvpOracle, eta: float) -> np.ndarray:
    if eta <= 0:
        raise ValueError("step size must be positive")
    G = euclidean_gradient(M, oracle.apply(M))
    return qr_retract(M - eta * G)


def tangent_normal_split(M, G):
    """Split ``M^T G`` into its skew (tangent) and symmetric (normal) parts.

    ``M @ (tangent + normal)`` reconstructs ``G``.
    """
    M = np.asarray(M, dtype=float)
    G = np.asarray(G, dtype=float)
    if M.shape != G.shape:
        raise ValueError(f"shape mismatch: M {M.shape}, G {G.shape}")
    H = M.T @ G
    return skew(H), sym(H)


def direction_cosine(C, M) -> float | None:
    """Cosine between the subspace-iteration move ``qf(CM) - M`` and ``M Omega``.

    ``None`` when either direction vanishes (e.g. at a critical point).
    """
    C = np.asarray(C, dtype=float)
    M = np.asarray(M, dtype=float)
    comm = M @ commutator_generator(rotate_covariance(M, C))
    try:
        v_si = qf(C @ M) - M
    except np.linalg.LinAlgError:
        return None
    a, b = np.linalg.norm(v_si), np.linalg.norm(comm)
    if a == 0.0 or b == 0.0:
        return None
    return float(np.sum(v_si * comm) / (a * b))


def sample_direction_cosines(n: int, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Cosines for ``samples`` draws of a GOE ``C`` (so ``C`` and ``-C`` are equally likely) and Haar ``M``."""
    out = []
    for _ in range(samples):
        C = random_symmetric(n, rng)
        M = haar_rotation(n, rng)
        c = direction_cosine(C, M)
        if c is not None:
            out.append(c)
    return np.asarray(out)


# Stored to five decimals; recomputed f values agree with the reference
# ones to about 1e-4, so checks use 1e-3.
COUNTEREXAMPLES = {
    "subspace": {
        "C": [[0.11537, 1.77881, -0.52963],
              [1.77881, -0.44274, 0.09983],
              [-0.52963, 0.09983, 0.32737]],
        "M0": [[-0.18742, 0.73430, 0.65244],
               [-0.84085, -0.46329, 0.27987],
               [0.50778, -0.49616, 0.70427]],
        "f0": 3.212,
        "f1": 3.489,
    },
    "qr_oja": {
        "C": [[0.81739, 0.78860, -0.87209],
              [0.78860, 0.27574, 0.73028],
              [-0.87209, 0.73028, -1.09313]],
        "M0": [[-0.50527, 0.73623, -0.45018],
               [-0.86296, -0.43194, 0.26216],
               [-0.00144, 0.52095, 0.85359]],
        "eta": 0.2,
        "f0": 1.411,
        "f1": 1.730,
    },
    # 2x2 Euclidean-gradient instance; f(M0) is not printed, only f(M1) per
    # noise level.  The isotropic shift added to C is sigma^2 with sigma in {0, 5}.
    "euclidean_sgd": {
        "C": [[0.35377, 0.35731], [0.35731, 1.12382]],
        "M0": [[0.77485, 0.63214], [-0.63214, 0.77485]],
        "eta": 0.5,
        "f1": {0.0: 0.00450, 5.0: 0.15477},
    },
}


def counterexample(name: str) -> dict:
    """Fixture ``name`` with ``C`` and ``M0`` as arrays."""
    d = dict(COUNTEREXAMPLES[name])
    d["C"] = np.array(d["C"])
    d["M0"] = np.array(d["M0"])
    return d


def replay_counterexample(name: str, sigma: float = 0.0) -> tuple[float, float]:
    """``(f(M0), f(M1))`` after one baseline step on fixture ``name``.

    ``f`` is measured on the fixture's ``C`` (trace-free for the 3x3 cases);
    for the Euclidean instance the observation is ``C + sigma^2 I``.
    """
    d = counterexample(name)
    C, M0 = d["C"], d["M0"]
    if name == "subspace":
        M1 = qf(C @ M0)
    elif name == "qr_oja":
        M1 = qf(M0 + d["eta"] * C @ M0)
    elif name == "euclidean_sgd":
        Ck = C + sigma**2 * np.eye(C.shape[0])
        M1 = qf(M0 - d["eta"] * euclidean_gradient(M0, Ck @ M0))
    else:
        raise KeyError(name)
    f = lambda M: lyapunov(M.T @ C @ M)  # noqa: E731
    return f(M0), f(M1)


@dataclass(frozen=True)
class BaselineConfig:
    """Baseline run settings.

    ``step`` defaults by kind: raw Oja normalizes by the observed
    ``||C_k||_2^2``, the other step-size methods by ``||C_e||_2^2``.
    ``probes`` is the Hutchinson probe count ``m``.
    """

    kind: str
    step: StepSchedule | None = None
    max_iters: int = 30_000
    f_tolerance: float = 1e-6
    probes: int = 10
    record_iterates: bool = False

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}; choose from {BASELINE_KINDS}")
        if self.max_iters < 1 or self.f_tolerance <= 0:
            raise ValueError("need max_iters >= 1 and f_tolerance > 0")
        if self.probes < 1:
            raise ValueError("Hutchinson needs at least one probe")
        if self.step is None:
            default = StepSchedule("constant", 0.1, "C2sq" if self.kind == "raw_oja" else "Ce2sq")
            object.__setattr__(self, "step", default)


def run_baseline(config: BaselineConfig, model: ObservationModel, M0,
                 rng: np.random.Generator | None = None,
                 probe_rng: np.random.Generator | None = None) -> TrajectoryLog:
    """Run a baseline until ``f < f_tolerance`` (ground truth) or ``max_iters``.

    Not reaching the tolerance leaves ``converged = False``, which tables
    report as FAIL.  ``rng`` drives ``E_k``; ``probe_rng`` the Hutchinson
    probes.
    """
    M = check_rotation(np.array(M0, dtype=float, copy=True))
    ref = model.c_e
    norm_ce = model.norm_ce
    kind = config.kind
    if kind == "tf_oja_hutchinson" and probe_rng is None:
        raise ValueError("Hutchinson baseline needs probe_rng")
    log = TrajectoryLog(method=kind)
    if config.record_iterates:
        log.iterates = [M.copy()]
    mvp = 0
    for k in range(config.max_iters + 1):
        A = rotate_covariance(M, ref)
        f = lyapunov(A)
        delta = spectral_separation(A)
        onorm = float(np.linalg.norm(commutator_generator(A)))
        if f < config.f_tolerance or k == config.max_iters:
            log.records.append(StepRecord(k, f, delta, onorm, 0.0, math.nan, mvp))
            log.converged = f < config.f_tolerance
            break
        oracle = model.observe(k, rng)
        if kind == "tf_oja":
            oracle.entry_access_allowed = True
        before = oracle.mvp_count
        norm_ck = oracle.step_norm() if config.step.needs_observed_norm else None
        eta = config.step.eta(k, norm_ce, norm_ck)
        if kind == "subspace":
            M_next = subspace_iteration_step(M, oracle)
            eta = math.nan
        elif kind in ("qr_oja", "raw_oja"):
            M_next = qr_oja_step(M, oracle, eta)
        elif kind == "tf_oja":
            M_next = tf_oja_step(M, oracle, eta, oracle.trace())
        elif kind == "tf_oja_hutchinson":
            tr = hutchinson_trace(oracle, config.probes, probe_rng)
            M_next = tf_oja_step(M, oracle, eta, tr)
        else:
            M_next = euclidean_sgd_step(M, oracle, eta)
        mvp += oracle.mvp_count - before
        log.records.append(StepRecord(k, f, delta, onorm, float(np.linalg.norm(M_next - M)), eta, mvp))
        M = M_next
        if config.record_iterates:
            log.iterates.append(M.copy())
    log.final = M
    log.iterations = log.records[-1].k
    return log
