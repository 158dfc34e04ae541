"""Matrix-free double-bracket flow on SO(n) with isotropic-noise immunity."""

from dbflow.errors import ConvergenceError, DimensionError, StepSizeError
from dbflow.linalg import (
    commutator_generator,
    haar_rotation,
    lyapunov,
    operator_norm,
    rotate_covariance,
    spectral_separation,
    trace_free,
)
from dbflow.observation import (
    MvpOracle,
    NoiseSchedule,
    ObservationModel,
    SignalSpec,
    hutchinson_trace,
    make_signal,
    trace_free_noise,
)
from dbflow.retractions import (
    Retraction,
    cayley_exact,
    cayley_neumann,
    givens_rotation,
    polar_retract,
    qf,
    qr_retract,
)
from dbflow.solver import SolverConfig, StepSchedule, TrajectoryLog, dbf_step, run

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DimensionError",
    "MvpOracle",
    "NoiseSchedule",
    "ObservationModel",
    "Retraction",
    "SignalSpec",
    "SolverConfig",
    "StepSchedule",
    "StepSizeError",
    "TrajectoryLog",
    "cayley_exact",
    "cayley_neumann",
    "commutator_generator",
    "dbf_step",
    "givens_rotation",
    "haar_rotation",
    "hutchinson_trace",
    "lyapunov",
    "make_signal",
    "operator_norm",
    "polar_retract",
    "qf",
    "qr_retract",
    "rotate_covariance",
    "run",
    "spectral_separation",
    "trace_free",
    "trace_free_noise",
]
