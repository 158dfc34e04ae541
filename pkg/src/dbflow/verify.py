"""Fast invariant battery behind ``dbf verify``.

Each check returns ``(name, passed, detail)``.  The battery is a smoke gate
for an installed build; the pytest suite covers the same ground in depth.
"""

from __future__ import annotations

import math

import numpy as np

from dbflow.baselines import BaselineConfig, replay_counterexample, run_baseline
from dbflow.diagnostics import (
    domain_bound_holds,
    gradient_fd_check,
    sandwich_holds,
    trajectory_difference,
)
from dbflow.linalg import (
    commutator_generator,
    haar_rotation,
    lyapunov,
    operator_norm,
    random_skew,
    random_symmetric,
    rotate_covariance,
    trace_free,
)
from dbflow.observation import NoiseSchedule, ObservationModel, SignalSpec
from dbflow.retractions import cayley_exact, cayley_neumann, givens_rotation, qf
from dbflow.solver import SolverConfig, run


def dyadic_symmetric(n, rng, bits=20):
    """Symmetric matrix on a dyadic grid so ``A + alpha I`` is exact in binary64."""
    A = rng.integers(-(2**bits), 2**bits, size=(n, n)).astype(float) / 2.0**bits
    return np.triu(A) + np.triu(A, 1).T


def check_shift_invariance(trials=1000, seed=0):
    rng = np.random.default_rng(seed)
    # alpha must also sit on the grid: 0.3, say, is rounded when added
    alphas = [1e9, -5.0, 0.0]
    bad = 0
    for t in range(trials):
        n = int(rng.integers(2, 9))
        A = dyadic_symmetric(n, rng)
        alpha = alphas[t] if t < len(alphas) else float(rng.integers(-(2**20), 2**20)) / 2.0**8
        if not np.array_equal(commutator_generator(A + alpha * np.eye(n)), commutator_generator(A)):
            bad += 1
    return "shift_invariance_bitwise", bad == 0, f"{bad} mismatches in {trials}"


def check_neumann(seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for K in range(1, 7):
        for rho in (0.1, 0.3, 0.5):
            X = random_skew(6, rng)
            X *= rho / np.linalg.norm(X, 2)
            exact = cayley_exact(2 * X)
            err = np.linalg.norm(exact - cayley_neumann(X, K))
            worst = max(worst, abs(err - np.linalg.norm(np.linalg.matrix_power(X, K + 1))))
            if K % 2 == 0:
                # even K: Q^T Q - I = -Cay^T X^{2K+2} Cay, so the defect is ||X^{2K+2}||_F
                Q = cayley_neumann(X, K)
                defect = np.linalg.norm(Q.T @ Q - np.eye(6))
                worst = max(worst, abs(defect - np.linalg.norm(np.linalg.matrix_power(X, 2 * K + 2))))
    return "neumann_truncation_identity", worst <= 1e-12, f"max deviation {worst:.2e}"


def givens_profile_error(b=0.5, points=100):
    """Max deviation of ``f(M G(t)) - f(M)`` from ``-b^2 sin^2(2t)`` on a degenerate block."""
    A = np.diag([2.0, 2.0, -1.0, -3.0])
    A[0, 1] = A[1, 0] = b
    A[2, 3] = A[3, 2] = 0.3
    f0 = lyapunov(A)
    ts = np.linspace(0.0, math.pi / 2, points)
    dev = [abs(lyapunov(rotate_covariance(givens_rotation(4, 0, 1, t), A)) - f0 + b**2 * math.sin(2 * t) ** 2)
           for t in ts]
    return max(dev)


def check_givens():
    dev = givens_profile_error()
    return "givens_profile", dev <= 1e-10, f"max deviation {dev:.2e}"


def check_sandwich(trials=2000, seed=2):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        Ce = trace_free(random_symmetric(n, rng))
        lam = np.sort(np.linalg.eigvalsh(Ce))
        A = rotate_covariance(haar_rotation(n, rng), Ce)
        if not sandwich_holds(A, operator_norm(Ce)) or not domain_bound_holds(A, float(np.min(np.diff(lam)))):
            bad += 1
    return "sandwich_and_domain", bad == 0, f"{bad} violations in {trials}"


def check_counterexamples():
    si = replay_counterexample("subspace")
    oja = replay_counterexample("qr_oja")
    e0 = replay_counterexample("euclidean_sgd", 0.0)
    e5 = replay_counterexample("euclidean_sgd", 5.0)
    ok = (abs(si[0] - 3.212) <= 1e-3 and abs(si[1] - 3.489) <= 1e-3
          and abs(oja[0] - 1.411) <= 1e-3 and abs(oja[1] - 1.730) <= 1e-3
          and abs(e0[1] - 0.00450) <= 1e-3 and e0[1] < e0[0]
          and abs(e5[1] - 0.15477) <= 1e-3 and e5[1] > e5[0])
    detail = f"SI {si[0]:.4f}->{si[1]:.4f}, QR-Oja {oja[0]:.4f}->{oja[1]:.4f}, SGD {e0[1]:.5f}/{e5[1]:.5f}"
    return "counterexamples", ok, detail


def check_gradient(trials=20, seed=3):
    rng = np.random.default_rng(seed)
    worst_order = math.inf
    for _ in range(trials):
        n = int(rng.integers(3, 8))
        Ce = trace_free(random_symmetric(n, rng))
        Xi = random_skew(n, rng)
        Xi /= np.linalg.norm(Xi)
        _, order = gradient_fd_check(Ce, haar_rotation(n, rng), Xi)
        worst_order = min(worst_order, order)
    return "gradient_identity", worst_order >= 1.8, f"min convergence order {worst_order:.2f}"


def check_mvp(n=20, m=10, iters=20):
    model = ObservationModel(SignalSpec.standard(n, 0), NoiseSchedule.constant(100.0))
    M0 = haar_rotation(n, np.random.default_rng(4))
    cay = run(SolverConfig(max_iters=iters, f_tolerance=1e-300), model, M0)
    hut = run_baseline(BaselineConfig("tf_oja_hutchinson", max_iters=iters, f_tolerance=1e-300, probes=m),
                       model, M0, probe_rng=np.random.default_rng(5))
    ok = cay.mvp_count == n * iters and hut.mvp_count == (n + m) * iters
    ratio = hut.mvp_count / cay.mvp_count
    return "mvp_audit", ok and ratio == 1.5, f"cayley {cay.mvp_count}, hutchinson {hut.mvp_count}, ratio {ratio}"


def check_sigma_invariance(n=10, steps=500):
    M0 = haar_rotation(n, np.random.default_rng(6))
    cfg = SolverConfig(max_iters=steps, f_tolerance=1e-300, record_iterates=True)
    logs = [run(cfg, ObservationModel(SignalSpec.standard(n, 0), NoiseSchedule.constant(s2)), M0)
            for s2 in (0.0, 1e6)]
    rep = trajectory_difference(*logs)
    return "sigma2_invariance", rep.within(1e-10), f"max diff {rep.max:.2e} over {steps} steps"


def check_qr_sign(seed=7):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((6, 6))
    dev = float(np.linalg.norm(qf(-X) + qf(X)))
    return "qr_sign_equivariance", dev <= 1e-12, f"||qf(-X) + qf(X)|| = {dev:.1e}"


CHECKS = (check_shift_invariance, check_neumann, check_givens, check_sandwich, check_counterexamples,
          check_gradient, check_mvp, check_sigma_invariance, check_qr_sign)


def run_checks():
    out = []
    for check in CHECKS:
        try:
            out.append(check())
        except Exception as exc:  # a crashing check is a failed check
            out.append((check.__name__, False, f"{type(exc).__name__}: {exc}"))
    return out
