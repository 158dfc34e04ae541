"""Dense small-matrix primitives for the double-bracket flow.

Matrices are plain ``float64`` ndarrays.  The validators below
(:func:`as_symmetric`, :func:`check_rotation`, :func:`check_skew`) enforce the
invariants of the three matrix roles used throughout the package:

* symmetric ``n x n`` (covariances, rotated covariances, noise),
* rotations in SO(n) (the iterate ``M``),
* skew generators in so(n) (``Omega`` and Givens directions).
"""

from __future__ import annotations

import numpy as np

from dbflow.errors import ConvergenceError, DimensionError

EIGH_CUTOFF = 64
POWER_MAX_ITERS = 10_000
POWER_TOL = 1e-10


def _square(X, name="matrix"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {X.shape}")
    return X


def as_symmetric(S, tol: float = 1e-10) -> np.ndarray:
    """Return ``(S + S^T)/2`` after checking ``S`` is finite and nearly symmetric."""
    S = _square(S, "symmetric matrix")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.linalg.norm(S)))
    if np.linalg.norm(S - S.T) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (S + S.T)


def check_rotation(M, tol: float = 1e-8) -> np.ndarray:
    M = _square(M, "rotation")
    n = M.shape[0]
    defect = np.linalg.norm(M.T @ M - np.eye(n))
    if defect > tol:
        raise ValueError(f"orthogonality defect {defect:.3e} exceeds {tol:.1e}")
    if np.linalg.det(M) <= 0:
        raise ValueError("rotation must have positive determinant")
    return M


def check_skew(X, tol: float = 1e-12) -> np.ndarray:
    X = _square(X, "skew generator")
    scale = max(1.0, float(np.linalg.norm(X)))
    if np.linalg.norm(X + X.T) > tol * scale:
        raise ValueError("generator is not skew-symmetric")
    return X


def sym(H: np.ndarray) -> np.ndarray:
    return 0.5 * (H + H.T)


def skew(H: np.ndarray) -> np.ndarray:
    return 0.5 * (H - H.T)


def trace_free(S) -> np.ndarray:
    """``S - (tr S / n) I``; removes the isotropic component."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    out = S.copy()
    out[np.diag_indices(n)] -= np.trace(S) / n
    return out


def rotate_covariance(M, C) -> np.ndarray:
    """``M^T C M``, symmetrized."""
    M = np.asarray(M, dtype=float)
    C = np.asarray(C, dtype=float)
    if M.shape != C.shape or M.ndim != 2:
        raise DimensionError(f"shape mismatch: M {M.shape}, C {C.shape}")
    return sym(M.T @ (C @ M))


def off_diagonal(A: np.ndarray) -> np.ndarray:
    O = np.array(A, dtype=float, copy=True)
    np.fill_diagonal(O, 0.0)
    return O


def lyapunov(A) -> float:
    """Half the squared Frobenius norm of the off-diagonal part of ``A``."""
    A = np.asarray(A, dtype=float)
    O = A - np.diagflat(np.diagonal(A))
    return 0.5 * float(np.vdot(O, O))


def commutator_generator(A) -> np.ndarray:
    """``[A, diag(A)]`` evaluated entrywise as ``(A_jj - A_ii) A_ij``.

    The entrywise form only ever sees differences of diagonal entries, so a
    shift ``A + alpha I`` leaves the result untouched whenever the shifted
    diagonal is representable.
    """
    A = np.asarray(A, dtype=float)
    d = np.diag(A)
    Om = (d[None, :] - d[:, None]) * A
    np.fill_diagonal(Om, 0.0)
    return Om


def commutator(X, Y) -> np.ndarray:
    return X @ Y - Y @ X


def spectral_separation(A) -> float:
    """Smallest pairwise gap between diagonal entries of ``A``."""
    d = np.sort(np.diag(np.asarray(A, dtype=float)))
    if d.size < 2:
        raise ValueError("spectral separation needs n >= 2")
    return float(np.min(np.diff(d)))


def spectral_gap(eigenvalues) -> float:
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    return float(np.min(np.diff(lam)))


def operator_norm(S, *, rng: np.random.Generator | None = None) -> float:
    """Spectral norm of a symmetric matrix.

    Dense ``eigvalsh`` below ``EIGH_CUTOFF``; power iteration above it, capped
    at ``POWER_MAX_ITERS`` with relative tolerance ``POWER_TOL``.
    """
    S = _square(S)
    n = S.shape[0]
    if n < EIGH_CUTOFF:
        return float(np.max(np.abs(np.linalg.eigvalsh(S))))
    return _power_norm(S, rng if rng is not None else np.random.default_rng(0))


def _power_norm(S, rng, max_iters=POWER_MAX_ITERS, tol=POWER_TOL):
    # iterate on S^2 so +/- extreme eigenvalues of equal modulus do not oscillate
    v = rng.standard_normal(S.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iters):
        w = S @ (S @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = np.sqrt(nw)
        if abs(new - est) <= tol * new:
            return float(new)
        est = new
    raise ConvergenceError(f"power iteration did not reach tol {tol} in {max_iters} iterations")


def haar_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed element of SO(n) from QR of a Gaussian matrix.

    Columns of Q are multiplied by the signs of R's diagonal; if the result
    has determinant -1 the last column is negated.
    """
    if n < 2:
        raise ValueError("haar_rotation needs n >= 2")
    Z = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, -1] = -Q[:, -1]
    return Q


def random_symmetric(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    G = rng.standard_normal((n, n))
    return scale * sym(G)


def random_skew(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    G = rng.standard_normal((n, n))
    return scale * skew(G)
