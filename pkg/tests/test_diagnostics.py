import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbflow.baselines import BaselineConfig, run_baseline
from dbflow.diagnostics import (
    audit_log,
    domain_bound_holds,
    domain_radius,
    empirical_lipschitz,
    generator_perturbation,
    gradient_fd_check,
    input_bound,
    iss_fit,
    linear_fit,
    lipschitz_ratio,
    loglog_slope,
    monotonicity_audit,
    sandwich_holds,
    steady_state,
    trajectory_difference,
)
from dbflow.linalg import (
    haar_rotation,
    operator_norm,
    random_skew,
    random_symmetric,
    rotate_covariance,
    trace_free,
)
from dbflow.observation import NoiseSchedule, ObservationModel, SignalSpec, trace_free_noise
from dbflow.solver import SolverConfig, lipschitz_bound, run


def model(n=10, sigma2=0.0, eps=0.0):
    return ObservationModel(SignalSpec.standard(n, 777), NoiseSchedule.constant(sigma2, eps_E=eps))


# ---- trajectory comparison

def test_identical_runs_give_zero_difference():
    M0 = haar_rotation(5, np.random.default_rng(0))
    cfg = SolverConfig(max_iters=50, f_tolerance=1e-300, record_iterates=True)
    a = run(cfg, model(5), M0)
    b = run(cfg, model(5), M0)
    rep = trajectory_difference(a, b)
    assert rep.max == 0.0 and rep.mean == 0.0 and rep.per_step.size == 51
    assert '"max": 0.0' in rep.to_json()


def test_raw_oja_trajectories_separate_with_noise():
    M0 = haar_rotation(10, np.random.default_rng(1))
    cfg = BaselineConfig("raw_oja", max_iters=3000, f_tolerance=1e-300, record_iterates=True)
    logs = [run_baseline(cfg, model(10, s2), M0) for s2 in (0.0, 10.0)]
    assert trajectory_difference(*logs).max > 0.1


def test_difference_requires_iterates_and_matching_shapes():
    log = run(SolverConfig(max_iters=3, f_tolerance=1e-300), model(4), np.eye(4))
    with pytest.raises(ValueError):
        trajectory_difference(log, log)
    with pytest.raises(ValueError):
        trajectory_difference(np.zeros((3, 2, 2)), np.zeros((4, 2, 2)))


# ---- input-to-state stability

def test_input_bound_values():
    assert input_bound(1.0, 0.0) == 0.0
    assert input_bound(1.0, 0.1) == pytest.approx(0.42, rel=1e-12)
    with pytest.raises(ValueError):
        input_bound(-1.0, 0.1)


@settings(max_examples=50)
@given(st.integers(2, 8), st.floats(1e-3, 5.0), st.integers(0, 2**31))
def test_generator_perturbation_within_input_bound(n, eps, seed):
    rng = np.random.default_rng(seed)
    Ce = trace_free(random_symmetric(n, rng))
    M = haar_rotation(n, rng)
    E = trace_free_noise(n, eps, rng)
    A = rotate_covariance(M, Ce)
    got = generator_perturbation(A, rotate_covariance(M, E))
    assert got <= input_bound(operator_norm(Ce), eps) * (1 + 1e-12)


def test_steady_state_of_noiseless_run_is_zero():
    assert steady_state(np.zeros(100)) == (0.0, 0.0)
    fit = iss_fit(np.zeros(100))
    assert fit.radius == 0.0 and fit.stationary


def test_iss_fit_recovers_linear_recursion():
    a, b = 0.9, 0.05
    y = [1.0]
    for _ in range(300):
        y.append(a * y[-1] + b)
    fit = iss_fit(np.square(y), eta=0.1, delta_lower=1.0)
    assert fit.contraction == pytest.approx(a, abs=1e-9)
    assert fit.gain == pytest.approx(b, abs=1e-9)
    assert fit.radius == pytest.approx(b / (1 - a), rel=1e-6)
    assert fit.c1 == pytest.approx((1 - a) / 0.1, rel=1e-6)
    assert fit.stationary


def test_iss_fit_flags_drifting_tail():
    f = np.linspace(1.0, 100.0, 200) ** 2
    assert not iss_fit(f).stationary


def test_steady_radius_grows_linearly_with_noise():
    m0 = model(10)
    M0 = m0.signal.basis()
    radii = []
    eps_grid = (0.1, 0.2, 0.4)
    for eps in eps_grid:
        log = run(SolverConfig(max_iters=1500, f_tolerance=1e-300), model(10, 0.0, eps), M0,
                  np.random.default_rng(5))
        radii.append(steady_state(log.f, 0.5)[0])
    slope, _, r2 = linear_fit(eps_grid, radii)
    assert r2 > 0.95 and slope > 0


def test_domain_radius_values():
    assert domain_radius(1.0, 0.5, 1.0) == pytest.approx(0.5 / (2 * math.sqrt(2)), rel=1e-12)
    assert domain_radius(1.0, 0.5, 1.0) == pytest.approx(0.17678, abs=1e-5)
    assert domain_radius(1.0, 1.0 - 1e-12, 1.0) < 1e-12
    with pytest.raises(ValueError):
        domain_radius(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        domain_radius(1.0, 0.5, 0.0)


def test_domain_radius_for_small_gap_signal():
    m = ObservationModel(SignalSpec.standard(20, 0, 0.1))
    r = domain_radius(0.1, 0.025, m.norm_ce)
    assert r == pytest.approx(0.075 / (2 * math.sqrt(2) * m.norm_ce), rel=1e-12)


# ---- Lipschitz constant

def test_zero_signal_has_zero_lipschitz():
    assert empirical_lipschitz(np.zeros((4, 4)), samples=20) == 0.0


@pytest.mark.parametrize("n", [5, 10])
def test_lipschitz_estimate_below_bound(n):
    m = model(n)
    est, bound, ratio = lipschitz_ratio(m.c_e, m.norm_ce, samples=200, rng=np.random.default_rng(n))
    assert bound == lipschitz_bound(n, m.norm_ce)
    assert 0.01 <= ratio <= 1.0
    assert est > 0


# ---- monotonicity and slopes

def test_monotonicity_audit():
    assert monotonicity_audit(np.ones(10)) == 0
    assert monotonicity_audit([3.0, 2.0, 2.5, 1.0, 1.5]) == 2
    assert monotonicity_audit([1.0]) == 0


def test_noiseless_small_step_is_monotone():
    from dbflow.experiments import e5_scale
    from dbflow.retractions import Retraction
    from dbflow.solver import StepSchedule

    m = ObservationModel(SignalSpec.standard(20, 3, e5_scale(20)))
    cfg = SolverConfig(Retraction("cayley"), StepSchedule.fixed(0.01), 300, 1e-300)
    assert monotonicity_audit(run(cfg, m, haar_rotation(20, np.random.default_rng(0))).f) == 0


def test_loglog_slope_synthetic():
    k = np.arange(1, 1001, dtype=float)
    assert loglog_slope(np.concatenate([[1.0], 1.0 / k]), burn_in=0) == pytest.approx(-1.0, abs=1e-12)
    assert loglog_slope(np.full(100, 3.0), burn_in=10) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        loglog_slope(np.ones(5), burn_in=10)
    with pytest.raises(ValueError):
        loglog_slope(np.zeros(5))


def test_linear_fit_exact_line():
    slope, icpt, r2 = linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert slope == pytest.approx(2.0) and icpt == pytest.approx(1.0) and r2 == pytest.approx(1.0)


# ---- sandwich and domain inequalities

@settings(max_examples=200)
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_sandwich_and_domain_hold(n, seed):
    rng = np.random.default_rng(seed)
    Ce = trace_free(random_symmetric(n, rng))
    lam = np.sort(np.linalg.eigvalsh(Ce))
    A = rotate_covariance(haar_rotation(n, rng), Ce)
    assert sandwich_holds(A, operator_norm(Ce))
    assert domain_bound_holds(A, float(np.min(np.diff(lam))))


def test_sandwich_rejects_bad_norm():
    rng = np.random.default_rng(3)
    Ce = trace_free(random_symmetric(6, rng))
    A = rotate_covariance(haar_rotation(6, rng), Ce)
    assert not sandwich_holds(A, 1e-3 * operator_norm(Ce))


def test_audit_log_on_solver_run():
    m = model(8)
    log = run(SolverConfig(max_iters=3000), m, haar_rotation(8, np.random.default_rng(4)))
    assert audit_log(log, m.norm_ce, m.signal.gap) == {"sandwich_lower": 0, "sandwich_upper": 0, "domain": 0}


# ---- gradient identity

@pytest.mark.parametrize("seed", range(10))
def test_gradient_identity_converges_quadratically(seed):
    rng = np.random.default_rng(seed)
    n = 3 + seed % 5
    Ce = trace_free(random_symmetric(n, rng))
    Xi = random_skew(n, rng)
    Xi /= np.linalg.norm(Xi)
    errs, order = gradient_fd_check(Ce, haar_rotation(n, rng), Xi)
    assert order >= 1.8
    assert errs[-1] < 1e-4
