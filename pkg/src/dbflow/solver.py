"""Discrete double-bracket flow ``M_{k+1} = M_k R(eta_k Omega_k)`` on SO(n)."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from dbflow.errors import StepSizeError
from dbflow.linalg import (
    check_rotation,
    commutator_generator,
    lyapunov,
    operator_norm,
    rotate_covariance,
    spectral_separation,
    sym,
    trace_free,
)
from dbflow.observation import MvpOracle, ObservationModel
from dbflow.retractions import Retraction, givens_rotation, qr_retract

LOG_COLUMNS = ("k", "f", "delta", "omega_norm", "displacement", "eta", "mvp_count")
NORMALIZERS = ("Ce2sq", "C2sq", "C2", "none")


def lipschitz_bound(n: int, norm_ce: float) -> float:
    """Gradient Lipschitz bound ``(2 sqrt(n) + 8) ||C_e||_2^2``; ``eta_max`` is its inverse."""
    return (2.0 * math.sqrt(n) + 8.0) * norm_ce**2


def entry_threshold(g: float, delta_lower: float) -> float:
    """Lyapunov level ``(g - delta)^2 / 8`` below which the separated domain is entered."""
    if not 0 <= delta_lower < g:
        raise ValueError("need 0 <= delta_lower < g")
    return (g - delta_lower) ** 2 / 8.0


@dataclass(frozen=True)
class StepSchedule:
    """``constant``: ``eta = c / N`` with ``N`` picked by ``normalizer``.

    ``Ce2sq`` divides by ``||C_e||_2^2`` (frozen once per run), ``C2sq`` and
    ``C2`` by ``||C_k||_2^2`` / ``||C_k||_2`` of the realized observation,
    ``none`` uses ``c`` as is.  ``decaying``: ``eta_k = c / (k + k0)``.
    """

    kind: str = "constant"
    c: float = 0.1
    normalizer: str = "Ce2sq"
    k0: float = 100.0

    def __post_init__(self):
        if self.kind not in ("constant", "decaying"):
            raise ValueError(f"unknown step schedule {self.kind!r}")
        if self.normalizer not in NORMALIZERS:
            raise ValueError(f"unknown normalizer {self.normalizer!r}")
        if self.c <= 0 or (self.kind == "decaying" and self.k0 <= 0):
            raise ValueError("step constants must be positive")

    @classmethod
    def fixed(cls, eta: float) -> "StepSchedule":
        return cls("constant", eta, "none")

    @classmethod
    def decaying(cls, c: float, k0: float) -> "StepSchedule":
        return cls("decaying", c, "none", k0)

    @property
    def needs_observed_norm(self) -> bool:
        return self.kind == "constant" and self.normalizer in ("C2sq", "C2")

    def eta(self, k: int, norm_ce: float | None = None, norm_ck: float | None = None) -> float:
        if self.kind == "decaying":
            return self.c / (k + self.k0)
        if self.normalizer == "none":
            return self.c
        if self.normalizer == "Ce2sq":
            return self.c / norm_ce**2
        return self.c / (norm_ck**2 if self.normalizer == "C2sq" else norm_ck)


@dataclass(frozen=True)
class EscapeConfig:
    """Opt-in Givens saddle escape.

    Fires after a step when ``||Omega||_F < grad_tol`` while ``f > f_enter``;
    ``grad_tol`` defaults to ``1e-6 ||C_e||_2^2`` and ``f_enter`` to the
    solver's convergence tolerance.
    """

    gap_tol: float = 1e-6
    offdiag_tol: float = 1e-6
    grad_tol: float | None = None
    f_enter: float | None = None


@dataclass(frozen=True)
class SolverConfig:
    retraction: Retraction = field(default_factory=Retraction)
    step: StepSchedule = field(default_factory=StepSchedule)
    max_iters: int = 100_000
    f_tolerance: float = 1e-6
    reorth_period: int = 100
    escape: EscapeConfig | None = None
    use_trace_free: bool = True
    record_iterates: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.f_tolerance <= 0:
            raise ValueError("f_tolerance must be positive")
        if self.reorth_period < 0:
            raise ValueError("reorth_period must be >= 0 (0 disables)")


@dataclass
class StepRecord:
    k: int
    f: float
    delta: float
    omega_norm: float
    displacement: float
    eta: float
    mvp_count: int


@dataclass
class StepDiagnostics:
    f: float
    delta: float
    omega_norm: float
    displacement: float
    observed_f: float
    A: np.ndarray = field(repr=False)
    omega: np.ndarray = field(repr=False)


@dataclass
class TrajectoryLog:
    """Per-step records for one solver or baseline run."""

    method: str
    records: list[StepRecord] = field(default_factory=list)
    final: np.ndarray | None = None
    converged: bool = False
    iterations: int | None = None
    iterates: list[np.ndarray] | None = None
    escapes: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def f(self) -> np.ndarray:
        return self.column("f")

    @property
    def final_f(self) -> float:
        return self.records[-1].f if self.records else math.nan

    @property
    def mvp_count(self) -> int:
        return self.records[-1].mvp_count if self.records else 0

    def summary(self) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "iters": self.iterations,
            "final_f": self.final_f,
            "mvp_count": self.mvp_count,
            "escapes": self.escapes,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def _diagnose(M, A_obs, omega_obs, reference):
    if reference is None:
        A, omega = A_obs, omega_obs
    else:
        A = rotate_covariance(M, reference)
        omega = commutator_generator(A)
    return lyapunov(A), spectral_separation(A), float(np.linalg.norm(omega)), A, omega


def _generator(M, oracle: MvpOracle, use_trace_free: bool):
    Y = oracle.apply(M)
    if use_trace_free:
        # Truncated retractions leave M slightly non-orthogonal, so the
        # isotropic part arrives as sigma^2 M^T M rather than sigma^2 I.
        # Removing it along the Gram matrix is exact for any M and reduces
        # to tf(A) when M^T M = I.  The shift is taken out of Y first so the
        # M^T Y product never sums terms of size sigma^2.
        G = sym(M.T @ M)
        trG = np.trace(G)
        Y = Y - (np.sum(M * Y) / trG) * M
        A = sym(M.T @ Y)
        A = A - (np.trace(A) / trG) * G
    else:
        A = sym(M.T @ Y)
    return A, commutator_generator(A)


def _retract(M, eta, omega, retraction):
    try:
        return retraction(M, eta * omega)
    except StepSizeError as exc:
        raise StepSizeError(
            f"{exc}; step eta={eta:.4g} is too large, keep it below "
            "eta_max = 1 / ((2 sqrt(n) + 8) ||C_e||_2^2)") from exc


def dbf_step(M, oracle: MvpOracle, eta: float, retraction: Retraction | None = None,
             use_trace_free: bool = True, reference: np.ndarray | None = None):
    """One flow step; costs ``n`` MVPs.

    ``A = M^T C_k M`` comes from the oracle; ``Omega = [A, diag A]`` is
    retracted at step ``eta``.  Diagnostics (``f``, ``delta``,
    ``||Omega||``) refer to ``M`` and are measured against ``reference``
    (normally the trace-free signal) when given, else against the observed
    ``A``.  Returns ``(M_next, StepDiagnostics)``.
    """
    if eta <= 0:
        raise ValueError("step size must be positive")
    retraction = retraction or Retraction()
    A, omega = _generator(M, oracle, use_trace_free)
    M_next = _retract(M, eta, omega, retraction)
    f, delta, onorm, A_diag, omega_diag = _diagnose(M, A, omega, reference)
    diag = StepDiagnostics(
        f=f,
        delta=delta,
        omega_norm=onorm,
        displacement=float(np.linalg.norm(M_next - M)),
        observed_f=lyapunov(A),
        A=A_diag,
        omega=omega_diag,
    )
    return M_next, diag


def detect_degenerate_block(A, gap_tol: float, offdiag_tol: float):
    """Pair ``(i, j, A_ij)`` with ``|A_ii - A_jj| <= gap_tol`` and the largest ``|A_ij| >= offdiag_tol``."""
    if gap_tol <= 0 or offdiag_tol <= 0:
        raise ValueError("tolerances must be positive")
    A = np.asarray(A, dtype=float)
    d = np.diag(A)
    mask = np.abs(d[:, None] - d[None, :]) <= gap_tol
    mask &= np.abs(A) >= offdiag_tol
    mask = np.triu(mask, 1)
    if not mask.any():
        return None
    mag = np.where(mask, np.abs(A), -1.0)
    i, j = np.unravel_index(int(np.argmax(mag)), mag.shape)
    return int(i), int(j), float(A[i, j])


def givens_escape(M, i: int, j: int, t: float = math.pi / 4) -> np.ndarray:
    """``M G_ij(t)``; at an exact degenerate block ``t = pi/4`` lowers ``f`` by ``A_ij^2``."""
    return M @ givens_rotation(M.shape[0], i, j, t)


def _initial_norm_ce(model: ObservationModel, M, rng, known: bool):
    if known:
        return model.norm_ce, None
    # matrix-free estimate: tf(M^T C_0 M) is orthogonally similar to tf(C_0)
    oracle = model.observe(0, rng)
    A0 = sym(M.T @ oracle.apply(M))
    return operator_norm(trace_free(A0)), oracle


def run(config: SolverConfig, model: ObservationModel, M0, rng: np.random.Generator | None = None,
        *, ground_truth: bool = True) -> TrajectoryLog:
    """Iterate :func:`dbf_step` until ``f < f_tolerance`` or ``max_iters`` steps.

    With ``ground_truth`` the log and the stopping test use the trace-free
    signal; otherwise they use the observed, trace-freed ``A``.  ``rng``
    drives the per-step perturbations ``E_k``.
    """
    M = check_rotation(np.array(M0, dtype=float, copy=True))
    n = M.shape[0]
    ref = model.c_e if ground_truth else None
    norm_ce, first_oracle = _initial_norm_ce(model, M, rng, known=ground_truth)
    sched = config.step
    tol = config.f_tolerance
    esc = config.escape
    grad_tol = f_enter = None
    if esc is not None:
        grad_tol = esc.grad_tol if esc.grad_tol is not None else 1e-6 * norm_ce**2
        f_enter = esc.f_enter if esc.f_enter is not None else tol

    log = TrajectoryLog(method=f"dbf-{config.retraction.label}")
    if config.record_iterates:
        log.iterates = [M.copy()]
    mvp = first_oracle.mvp_count if first_oracle is not None else 0

    for k in range(config.max_iters + 1):
        if ref is not None:
            A_true = rotate_covariance(M, ref)
            f_true = lyapunov(A_true)
            delta_true = spectral_separation(A_true)
            onorm_true = float(np.linalg.norm(commutator_generator(A_true)))
            if f_true < tol or k == config.max_iters:
                log.records.append(StepRecord(k, f_true, delta_true, onorm_true, 0.0, math.nan, mvp))
                log.converged = f_true < tol
                break
        oracle = first_oracle if (k == 0 and first_oracle is not None) else model.observe(k, rng)
        norm_ck = oracle.step_norm() if sched.needs_observed_norm else None
        eta = sched.eta(k, norm_ce, norm_ck)
        before = oracle.mvp_count
        if ref is None:
            M_next, d = dbf_step(M, oracle, eta, config.retraction, config.use_trace_free)
            if d.f < tol or k == config.max_iters:
                mvp += oracle.mvp_count - before
                log.records.append(StepRecord(k, d.f, d.delta, d.omega_norm, 0.0, math.nan, mvp))
                log.converged = d.f < tol
                break
            f_true, delta_true, onorm_true, A_obs = d.f, d.delta, d.omega_norm, d.A
        else:
            # ground-truth diagnostics were computed above; skip the observed ones
            if eta <= 0:
                raise ValueError("step size must be positive")
            A_obs, omega = _generator(M, oracle, config.use_trace_free)
            M_next = _retract(M, eta, omega, config.retraction)
        mvp += oracle.mvp_count - before
        log.records.append(StepRecord(k, f_true, delta_true, onorm_true,
                                      float(np.linalg.norm(M_next - M)), eta, mvp))
        M = M_next
        if config.reorth_period and (k + 1) % config.reorth_period == 0:
            M = qr_retract(M)
        if esc is not None and onorm_true < grad_tol and f_true > f_enter:
            A_now = rotate_covariance(M, ref) if ref is not None else A_obs
            hit = detect_degenerate_block(A_now, esc.gap_tol, esc.offdiag_tol)
            if hit is not None:
                M = givens_escape(M, hit[0], hit[1])
                log.escapes += 1
        if config.record_iterates:
            log.iterates.append(M.copy())

    log.final = M
    log.iterations = log.records[-1].k
    return log
