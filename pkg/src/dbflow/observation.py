"""Observation stream ``C_k = C_sig + sigma_k^2 I + E_k`` behind a metered MVP oracle."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from dbflow.errors import DimensionError
from dbflow.linalg import haar_rotation, operator_norm, spectral_gap, sym, trace_free

NOISE_LAWS = ("gaussian", "none", "sample")
SCHEDULE_KINDS = ("constant", "pulse", "explicit")


@dataclass(frozen=True)
class SignalSpec:
    """Signal covariance ``Q diag(eigenvalues) Q^T``.

    ``basis_seed=None`` selects ``Q = I``; otherwise ``Q`` is Haar on SO(n)
    drawn from ``default_rng(basis_seed)``.
    """

    eigenvalues: tuple[float, ...]
    basis_seed: int | None = None

    def __post_init__(self):
        lam = tuple(float(x) for x in self.eigenvalues)
        object.__setattr__(self, "eigenvalues", lam)
        if len(lam) < 2:
            raise ValueError("signal needs n >= 2")
        if any(b >= a for a, b in zip(lam, lam[1:])):
            raise ValueError("eigenvalues must be strictly descending")

    @classmethod
    def standard(cls, n: int, basis_seed: int | None = 0, scale: float = 1.0) -> "SignalSpec":
        """Linear spectrum ``scale * (n, n-1, ..., 1)``; gap equals ``scale``."""
        return cls(tuple(scale * (n - i) for i in range(n)), basis_seed)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def gap(self) -> float:
        return spectral_gap(self.eigenvalues)

    def basis(self) -> np.ndarray:
        if self.basis_seed is None:
            return np.eye(self.n)
        return haar_rotation(self.n, np.random.default_rng(self.basis_seed))

    def to_dict(self) -> dict:
        return {"n": self.n, "eigenvalues": list(self.eigenvalues), "basis_seed": self.basis_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SignalSpec":
        lam = d["eigenvalues"]
        if "n" in d and int(d["n"]) != len(lam):
            raise ValueError(f"n={d['n']} disagrees with {len(lam)} eigenvalues")
        return cls(tuple(lam), d.get("basis_seed"))


def make_signal(spec: SignalSpec) -> np.ndarray:
    Q = spec.basis()
    return sym((Q * np.asarray(spec.eigenvalues)) @ Q.T)


def trace_free_noise(n: int, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric trace-free Gaussian matrix rescaled to Frobenius norm ``eps``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if eps == 0:
        return np.zeros((n, n))
    G = rng.standard_normal((n, n))
    E = trace_free(sym(G))
    return E * (eps / np.linalg.norm(E))


@dataclass(frozen=True)
class NoiseSchedule:
    """Isotropic intensity schedule plus the anisotropic perturbation law.

    ``kind`` is one of ``constant`` (uses ``sigma2``), ``pulse`` (``sigma2``
    outside ``[start, end)``, ``pulse`` inside) or ``explicit`` (``values[k]``,
    last value held).  ``noise_law='sample'`` replaces the additive model with
    the sample covariance of ``samples`` Gaussian draws from
    ``N(0, C_sig + sigma_k^2 I)``.
    """

    kind: str = "constant"
    sigma2: float = 0.0
    pulse: float = 0.0
    start: int = 0
    end: int = 0
    values: tuple[float, ...] = ()
    eps_E: float = 0.0
    noise_law: str = "gaussian"
    frozen: bool = False
    samples: int | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.noise_law not in NOISE_LAWS:
            raise ValueError(f"unknown noise law {self.noise_law!r}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.sigma2 < 0 or self.pulse < 0 or any(v < 0 for v in self.values):
            raise ValueError("isotropic intensities must be non-negative")
        if self.eps_E < 0:
            raise ValueError("eps_E must be non-negative")
        if self.kind == "explicit" and not self.values:
            raise ValueError("explicit schedule needs values")
        if self.noise_law == "sample" and (self.samples is None or self.samples < 1):
            raise ValueError("sample-covariance law needs samples >= 1")

    @classmethod
    def constant(cls, sigma2: float = 0.0, **kw) -> "NoiseSchedule":
        return cls(kind="constant", sigma2=sigma2, **kw)

    @classmethod
    def pulse_train(cls, base: float, pulse: float, start: int, end: int, **kw) -> "NoiseSchedule":
        return cls(kind="pulse", sigma2=base, pulse=pulse, start=start, end=end, **kw)

    def sigma2_at(self, k: int) -> float:
        if k < 0:
            raise ValueError("step index must be non-negative")
        if self.kind == "constant":
            return self.sigma2
        if self.kind == "pulse":
            return self.pulse if self.start <= k < self.end else self.sigma2
        return self.values[min(k, len(self.values) - 1)]

    def to_dict(self) -> dict:
        sched = {"kind": self.kind}
        if self.kind == "constant":
            sched["sigma2"] = self.sigma2
        elif self.kind == "pulse":
            sched.update(base=self.sigma2, pulse=self.pulse, start=self.start, end=self.end)
        else:
            sched["values"] = list(self.values)
        d = {"sigma_schedule": sched, "eps_E": self.eps_E, "noise_law": self.noise_law}
        if self.frozen:
            d["frozen"] = True
        if self.samples is not None:
            d["samples"] = self.samples
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        s = dict(d.get("sigma_schedule", {"kind": "constant"}))
        kind = s.pop("kind", "constant")
        kw = dict(
            eps_E=float(d.get("eps_E", 0.0)),
            noise_law=d.get("noise_law", "gaussian"),
            frozen=bool(d.get("frozen", False)),
            samples=d.get("samples"),
        )
        if kind == "constant":
            return cls(kind=kind, sigma2=float(s.get("sigma2", 0.0)), **kw)
        if kind == "pulse":
            return cls(kind=kind, sigma2=float(s.get("base", 0.0)), pulse=float(s["pulse"]),
                       start=int(s["start"]), end=int(s["end"]), **kw)
        if kind == "explicit":
            return cls(kind=kind, values=tuple(s["values"]), **kw)
        raise ValueError(f"unknown schedule kind {kind!r}")


class MvpOracle:
    """Hidden ``C_k`` exposed only through metered products ``V -> C_k V``.

    The isotropic part is applied lazily as ``C_sig V + sigma^2 V`` so huge
    intensities never enter a dense matrix.  Entry-level access (``trace``,
    ``dense``) is refused unless ``entry_access_allowed`` is set; that mode
    exists only for the oracle-trace tf-Oja baseline, which is not
    matrix-free.
    """

    def __init__(self, signal, sigma2=0.0, perturbation=None, *, dense=None,
                 entry_access_allowed=False):
        self._signal = signal
        self._sigma2 = float(sigma2)
        self._E = perturbation
        self._dense = dense
        self.n = signal.shape[0] if dense is None else dense.shape[0]
        self.entry_access_allowed = entry_access_allowed
        self.mvp_count = 0

    def apply(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        if V.shape[0] != self.n or V.ndim not in (1, 2):
            raise DimensionError(f"oracle is {self.n}x{self.n}, got operand {V.shape}")
        self.mvp_count += 1 if V.ndim == 1 else V.shape[1]
        if self._dense is not None:
            return self._dense @ V
        Y = self._signal @ V
        if self._E is not None:
            Y = Y + self._E @ V
        if self._sigma2 != 0.0:
            Y = Y + self._sigma2 * V
        return Y

    __matmul__ = apply

    def _matrix(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        C = self._signal + self._sigma2 * np.eye(self.n)
        if self._E is not None:
            C = C + self._E
        return C

    def _require_entries(self, what):
        if not self.entry_access_allowed:
            raise PermissionError(f"{what} needs entry access; oracle is matrix-free")

    def trace(self) -> float:
        self._require_entries("trace")
        if self._dense is not None:
            return float(np.trace(self._dense))
        tr = float(np.trace(self._signal)) + self.n * self._sigma2
        if self._E is not None:
            tr += float(np.trace(self._E))
        return tr

    def dense(self) -> np.ndarray:
        self._require_entries("dense")
        return self._matrix().copy()

    def step_norm(self) -> float:
        """``||C_k||_2`` for step-size policies (raw Oja); does not reveal entries."""
        return operator_norm(self._matrix())


def hutchinson_trace(oracle: MvpOracle, m: int, rng: np.random.Generator) -> float:
    """Rademacher Hutchinson estimate of ``tr(C_k)``; costs ``m`` MVPs."""
    if m < 1:
        raise ValueError("probe count must be >= 1")
    Z = rng.choice(np.array([-1.0, 1.0]), size=(oracle.n, m))
    CZ = oracle.apply(Z)
    return float(np.sum(Z * CZ) / m)


@dataclass(frozen=True)
class ObservationModel:
    """Signal + schedule; produces one :class:`MvpOracle` per step."""

    signal: SignalSpec
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    frozen_perturbation: np.ndarray | None = field(default=None, compare=False, repr=False)

    @cached_property
    def c_sig(self) -> np.ndarray:
        return make_signal(self.signal)

    @cached_property
    def c_e(self) -> np.ndarray:
        return trace_free(self.c_sig)

    @cached_property
    def norm_ce(self) -> float:
        return operator_norm(self.c_e)

    @property
    def n(self) -> int:
        return self.signal.n

    def freeze(self, rng: np.random.Generator) -> "ObservationModel":
        """Copy whose anisotropic perturbation is drawn once and reused every step."""
        E = trace_free_noise(self.n, self.schedule.eps_E, rng)
        return replace(self, frozen_perturbation=E)

    def perturbation(self, rng: np.random.Generator | None) -> np.ndarray | None:
        if self.frozen_perturbation is not None:
            return self.frozen_perturbation
        s = self.schedule
        if s.noise_law != "gaussian" or s.eps_E == 0.0:
            return None
        if rng is None:
            raise ValueError("a random generator is needed to draw E_k")
        return trace_free_noise(self.n, s.eps_E, rng)

    def observe(self, k: int, rng: np.random.Generator | None = None) -> MvpOracle:
        if k < 0:
            raise ValueError("step index must be non-negative")
        sigma2 = self.schedule.sigma2_at(k)
        if self.schedule.noise_law == "sample":
            if rng is None:
                raise ValueError("sample-covariance law needs a random generator")
            return MvpOracle(self.c_sig, dense=self._sample_covariance(sigma2, rng))
        return MvpOracle(self.c_sig, sigma2, self.perturbation(rng))

    def _sample_covariance(self, sigma2, rng):
        n, m = self.n, self.schedule.samples
        w, V = np.linalg.eigh(self.c_sig + sigma2 * np.eye(n))
        X = rng.standard_normal((m, n)) * np.sqrt(np.clip(w, 0.0, None)) @ V.T
        return sym(X.T @ X / m)

    def to_dict(self) -> dict:
        return {**self.signal.to_dict(), **self.schedule.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationModel":
        return cls(SignalSpec.from_dict(d), NoiseSchedule.from_dict(d))
