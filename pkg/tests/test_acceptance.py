"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in
the terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""

import math
import time

import numpy as np

from dbflow.baselines import replay_counterexample
from dbflow.diagnostics import gradient_fd_check
from dbflow.experiments import ExperimentSpec, run_experiment
from dbflow.linalg import haar_rotation, lyapunov, random_skew, random_symmetric, rotate_covariance, trace_free
from dbflow.retractions import cayley_exact, cayley_neumann, givens_rotation
from dbflow.verify import check_mvp, check_sandwich, check_shift_invariance

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []


def report(number, name, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {name} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def experiment(id, **kw):
    overrides = kw.pop("overrides", {})
    t0 = time.perf_counter()
    table = run_experiment(ExperimentSpec(id, workers=1, overrides=overrides, **kw))
    return table, time.perf_counter() - t0


def test_criterion_01_sigma2_invariance():
    t, secs = experiment("e1", n=20, sigma2=(0.0, 1e3, 1e6), overrides={"steps": 5000})
    worst = max(t.column("max_diff"))
    report(1, "sigma2 invariance E1", worst <= 1e-10 and secs < 30,
           f"max pairwise diff {worst:.2e} <= 1e-10, {secs:.1f}s < 30s")


def test_criterion_02_shift_invariance():
    t0 = time.perf_counter()
    _, ok, detail = check_shift_invariance(trials=1000)
    secs = time.perf_counter() - t0
    report(2, "shift invariance bitwise", ok and secs < 1, f"{detail}, alpha includes 1e9, {secs:.2f}s < 1s")


def test_criterion_03_givens_profile():
    b = 0.5
    A = np.diag([2.0, 2.0, -1.0, -3.0])
    A[0, 1] = A[1, 0] = b
    A[2, 3] = A[3, 2] = 0.3
    f0 = lyapunov(A)
    ts = np.linspace(0.0, math.pi / 2, 100)
    dev = max(abs(lyapunov(rotate_covariance(givens_rotation(4, 0, 1, t), A)) - f0 + b**2 * math.sin(2 * t) ** 2)
              for t in ts)
    drop = f0 - lyapunov(rotate_covariance(givens_rotation(4, 0, 1, math.pi / 4), A))
    ok = dev <= 1e-10 and abs(drop - b**2) <= 1e-10
    report(3, "Givens profile", ok, f"max deviation {dev:.1e} on 100 points, drop at pi/4 = {drop:.12f}")


def test_criterion_04_neumann_exactness():
    rng = np.random.default_rng(0)
    err_dev = defect_dev = 0.0
    for K in range(1, 7):
        for rho in (0.1, 0.2, 0.3, 0.4, 0.5):
            X = random_skew(6, rng)
            X *= rho / np.linalg.norm(X, 2)
            Q = cayley_neumann(X, K)
            XK = np.linalg.matrix_power(X, K + 1)
            err_dev = max(err_dev, abs(np.linalg.norm(cayley_exact(2 * X) - Q) - np.linalg.norm(XK)))
            if K % 2 == 0:
                defect = np.linalg.norm(Q.T @ Q - np.eye(6))
                defect_dev = max(defect_dev, abs(defect - np.linalg.norm(XK) ** 2))
    report(4, "Neumann exactness", err_dev <= 1e-12 and defect_dev <= 1e-12,
           f"truncation identity deviation {err_dev:.1e}, even-K defect vs ||X^(K+1)||_F^2 deviation "
           f"{defect_dev:.1e}; tolerance 1e-12")


def test_criterion_05_counterexamples():
    t0 = time.perf_counter()
    si = replay_counterexample("subspace")
    oja = replay_counterexample("qr_oja")
    _, quiet = replay_counterexample("euclidean_sgd", 0.0)
    f0, loud = replay_counterexample("euclidean_sgd", 5.0)
    secs = time.perf_counter() - t0
    ok = (abs(si[0] - 3.212) <= 1e-3 and abs(si[1] - 3.489) <= 1e-3
          and abs(oja[0] - 1.411) <= 1e-3 and abs(oja[1] - 1.730) <= 1e-3
          and abs(loud - 0.15477) <= 1e-3 and loud > f0
          and abs(quiet - 0.00450) <= 1e-3 and quiet < f0 and secs < 1)
    report(5, "counterexample fixtures", ok,
           f"SI {si[0]:.4f}->{si[1]:.4f}, QR-Oja {oja[0]:.4f}->{oja[1]:.4f}, "
           f"SGD sigma=5 {loud:.5f}, sigma=0 {quiet:.5f}, {secs:.2f}s")


def test_criterion_06_e14_flatness():
    grid = (0.0, 1.0, 10.0, 100.0, 1000.0)
    t, secs = experiment("e14", n=10, seeds=5, sigma2=grid,
                         overrides={"methods": ["cayley", "riem_qr", "riem_polar", "raw_oja"], "max_iters": 30000})
    worst_cv = 0.0
    for m in ("cayley", "riem_qr", "riem_polar"):
        rows = t.where(method=m)
        if any(r["status"] != "ok" for r in rows):
            worst_cv = math.inf
            continue
        per_seed = np.array([[int(x) for x in r["iters"].split(";")] for r in rows])
        for col in per_seed.T:
            worst_cv = max(worst_cv, float(col.std() / col.mean()))
    raw = {r["sigma2"]: r for r in t.where(method="raw_oja")}
    cay0 = t.where(method="cayley", sigma2=0.0)[0]["mean_iters"]
    raw_fails = all(raw[s]["status"] == "FAIL" for s in grid if s >= 10)
    raw0 = raw[0.0]["mean_iters"]
    ratio = raw0 / cay0 if raw0 else math.inf
    ok = worst_cv < 0.01 and raw_fails and ratio > 5 and secs < 300
    report(6, "E14 flatness", ok,
           f"max CV across sigma2 {worst_cv:.2%}, raw Oja FAIL for sigma2>=10: {raw_fails}, "
           f"raw/Cayley at 0 = {raw0}/{cay0} = {ratio:.2f}x, {secs:.0f}s")


def test_criterion_07_descent_threshold():
    t, secs = experiment("e5", n=20)
    rows = {r["eta"]: r for r in t.where()}
    small = [e for e in rows if e <= 0.02]
    ascents = max(rows[e]["mean_ascents"] for e in small)
    frac = rows[0.05]["monotone_fraction"]
    ok = ascents == 0 and frac == 0 and len(small) == 6 and secs < 60
    report(7, "descent threshold E5", ok,
           f"max ascents for eta<=0.02: {ascents}, monotone fraction at 0.05: {frac}, {secs:.1f}s")


def test_criterion_08_sandwich_domain():
    _, ok, detail = check_sandwich(trials=10_000)
    report(8, "sandwich and domain inequalities", ok, f"{detail}, n in 2..8")


def test_criterion_09_iss_linearity():
    t, secs = experiment("e3", n=20)
    r2 = {s: t.where(sigma2=s)[0]["r2"] for s in (0.0, 1e3, 1e6)}
    slopes = [t.where(sigma2=s)[0]["slope"] for s in (0.0, 1e3, 1e6)]
    spread = (max(slopes) - min(slopes)) / np.mean(slopes)
    ok = min(r2.values()) > 0.95 and spread <= 0.05 and secs < 300
    report(9, "ISS linearity E3", ok,
           f"min R^2 {min(r2.values()):.6f}, slopes {slopes[0]:.4f}/{slopes[1]:.4f}/{slopes[2]:.4f} "
           f"(spread {spread:.1e}), {secs:.0f}s")


def test_criterion_10_rate():
    t, secs = experiment("e4")
    slope = t.column("slope")[0]
    report(10, "O(1/k) rate E4 variant A", abs(slope + 1.0) <= 0.15 and secs < 300,
           f"log-log slope {slope:.3f} in -1 +/- 0.15, {secs:.0f}s")


def test_criterion_11_direction_probability():
    t, secs = experiment("e8", overrides={"dims": [10], "samples": 10_000})
    p = t.column("p_negative")[0]
    report(11, "direction probability E8", 0.48 <= p <= 0.52 and secs < 60,
           f"P(cos<0) = {p:.4f} on {t.column('samples')[0]} samples, {secs:.1f}s")


def test_criterion_12_lipschitz():
    t, _ = experiment("e7", overrides={"dims": [5, 10, 20], "samples": 1000})
    ok = all(r["L_est"] <= r["L_bound"] and 0.01 <= r["ratio"] <= 1.0 for r in t.where())
    detail = ", ".join(f"n={r['n']} ratio {r['ratio']:.3f}" for r in t.where())
    report(12, "Lipschitz validity E7", ok, detail)


def test_criterion_13_gradient_identity():
    rng = np.random.default_rng(13)
    orders = []
    for _ in range(100):
        n = int(rng.integers(3, 9))
        Ce = trace_free(random_symmetric(n, rng))
        Xi = random_skew(n, rng)
        Xi /= np.linalg.norm(Xi)
        orders.append(gradient_fd_check(Ce, haar_rotation(n, rng), Xi)[1])
    worst = min(orders)
    report(13, "gradient identity", worst >= 1.8,
           f"min fitted convergence order {worst:.3f} over 100 (M, Xi), h-squared expected")


def test_criterion_14_global_convergence():
    t, secs = experiment("e11", n=10, seeds=50, overrides={"max_iters": 10_000, "f_tolerance": 1e-8})
    hits = sum(t.column("converged"))
    worst = max(t.column("iterations"))
    report(14, "global convergence E11", hits == 50 and secs < 300,
           f"{hits}/50 reach f < 1e-8, max iterations {worst}, {secs:.0f}s")


def test_criterion_15_mvp_audit():
    _, ok, detail = check_mvp(n=20, m=10)
    report(15, "MVP audit", ok, detail)


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
