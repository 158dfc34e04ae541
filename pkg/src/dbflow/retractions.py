"""Maps from so(n) (or near-orthogonal matrices) back to SO(n)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from dbflow.errors import DimensionError, StepSizeError

DEFAULT_NEUMANN_ORDER = 3
RANK_TOL = 1e-12


def cayley_exact(X) -> np.ndarray:
    """``(I - X/2)^{-1} (I + X/2)`` via LU with partial pivoting."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    I = np.eye(n)
    half = 0.5 * X
    try:
        lu = scipy.linalg.lu_factor(I - half, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise np.linalg.LinAlgError(f"Cayley solve failed: {exc}") from exc
    return scipy.linalg.lu_solve(lu, I + half)


def _spectral_radius_bound(X) -> float:
    # Frobenius norm bounds the 2-norm; only pay for the SVD when it is inconclusive
    fro = float(np.linalg.norm(X))
    if fro < 1.0:
        return fro
    return float(np.linalg.norm(X, 2))


def cayley_neumann(X, K: int = DEFAULT_NEUMANN_ORDER) -> np.ndarray:
    """Truncated Cayley factor ``(I + X + ... + X^K)(I + X)``.

    ``X`` is the *half* step: the result approximates ``cayley_exact(2 X)``
    and differs from it by exactly ``X^{K+1} cayley_exact(2 X)``.
    """
    if K < 1:
        raise ValueError("Neumann order must be >= 1")
    X = np.asarray(X, dtype=float)
    rho = _spectral_radius_bound(X)
    if rho >= 1.0:
        raise StepSizeError(f"Neumann series diverges: ||X||_2 = {rho:.3g} >= 1")
    I = np.eye(X.shape[0])
    S = I + X
    for _ in range(K - 1):
        S = I + X @ S
    return S @ (I + X)


def qf(Y) -> np.ndarray:
    """Q factor of ``Y = QR`` normalized so that ``diag(R) > 0``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise DimensionError(f"qf needs a square matrix, got {Y.shape}")
    Q, R = np.linalg.qr(Y)
    d = np.diag(R)
    scale = max(float(np.max(np.abs(d))), np.finfo(float).tiny)
    if np.min(np.abs(d)) <= RANK_TOL * scale:
        raise np.linalg.LinAlgError("rank-deficient input to QR retraction")
    return Q * np.sign(d)


def qr_retract(Y) -> np.ndarray:
    """:func:`qf` with the last column negated when needed to land in SO(n)."""
    Q = qf(Y)
    if np.linalg.det(Q) < 0:
        Q[:, -1] = -Q[:, -1]
    return Q


def polar_retract(Y) -> np.ndarray:
    """Orthogonal polar factor ``U V^T`` of ``Y``, projected to SO(n)."""
    Y = np.asarray(Y, dtype=float)
    U, s, Vt = np.linalg.svd(Y)
    if s[-1] <= RANK_TOL * max(s[0], np.finfo(float).tiny):
        raise np.linalg.LinAlgError("rank-deficient input to polar retraction")
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        U[:, -1] = -U[:, -1]
    return U @ Vt


def givens_rotation(n: int, i: int, j: int, t: float) -> np.ndarray:
    """Identity with a rotation by ``t`` in the ``(i, j)`` plane.

    ``G[i, i] = G[j, j] = cos t``, ``G[j, i] = sin t = -G[i, j]``.
    """
    if not (0 <= i < j < n):
        raise IndexError(f"need 0 <= i < j < n, got i={i}, j={j}, n={n}")
    G = np.eye(n)
    c, s = np.cos(t), np.sin(t)
    G[i, i] = c
    G[j, j] = c
    G[i, j] = -s
    G[j, i] = s
    return G


@dataclass(frozen=True)
class Retraction:
    """How a solver turns the step ``eta * Omega`` into the next rotation.

    ``kind`` is ``cayley`` (exact), ``neumann`` (truncated, ``order`` terms),
    ``qr`` or ``polar``; the last two retract ``M + eta M Omega``.
    """

    kind: str = "neumann"
    order: int = DEFAULT_NEUMANN_ORDER

    def __post_init__(self):
        if self.kind not in ("cayley", "neumann", "qr", "polar"):
            raise ValueError(f"unknown retraction {self.kind!r}")
        if self.kind == "neumann" and self.order < 1:
            raise ValueError("Neumann order must be >= 1")

    def __call__(self, M: np.ndarray, step: np.ndarray) -> np.ndarray:
        if self.kind == "neumann":
            return M @ cayley_neumann(0.5 * step, self.order)
        if self.kind == "cayley":
            return M @ cayley_exact(step)
        Y = M + M @ step
        return qr_retract(Y) if self.kind == "qr" else polar_retract(Y)

    @property
    def label(self) -> str:
        return f"neumann{self.order}" if self.kind == "neumann" else self.kind

    @classmethod
    def parse(cls, text: str) -> "Retraction":
        """``cayley``, ``qr``, ``polar``, ``neumann`` or ``neumannK``."""
        if text.startswith("neumann"):
            tail = text[len("neumann"):]
            return cls("neumann", int(tail) if tail else DEFAULT_NEUMANN_ORDER)
        return cls(text)
