"""Dense symmetric positive-definite solves with diagonal jitter.

All linear systems in the package have the form (K + eps2*I) x = b with K a
kernel Gram matrix, so everything funnels through a Cholesky factorization.
No inverse is ever materialized.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

from .exceptions import InvalidInputError, NumericalError

SYMMETRY_TOL = 1e-8


class SpdFactor:
    """Cholesky factor of K + eps2*I, reusable across right-hand sides."""

    __slots__ = ("chol", "matrix", "eps2")

    def __init__(self, chol: np.ndarray, matrix: np.ndarray, eps2: float):
        self.chol = chol
        self.matrix = matrix
        self.eps2 = eps2


def spd_factor(K: np.ndarray, eps2: float) -> SpdFactor:
    """Factor K + eps2*I, checking symmetry first.

    K must be symmetric within an absolute tolerance of 1e-8 (relative to its
    magnitude); asymmetry below the tolerance is silently repaired by
    averaging with the transpose.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {K.shape}")
    if not np.isfinite(K).all():
        raise InvalidInputError("matrix contains non-finite entries")
    if eps2 <= 0:
        raise InvalidInputError(f"jitter eps2 must be positive, got {eps2}")
    scale = max(1.0, float(np.max(np.abs(K)))) if K.size else 1.0
    asym = float(np.max(np.abs(K - K.T))) if K.size else 0.0
    if asym > SYMMETRY_TOL * scale:
        raise InvalidInputError(
            f"matrix is not symmetric (max asymmetry {asym:.3e})"
        )
    sym = (K + K.T) / 2.0
    jittered = sym + eps2 * np.eye(K.shape[0])
    c, info = lapack.dpotrf(jittered, lower=1, overwrite_a=0)
    if info != 0:
        raise NumericalError(
            f"Cholesky factorization failed at pivot {info}", pivot=int(info)
        )
    return SpdFactor(c, jittered, float(eps2))


def factor_solve(factor: SpdFactor, B: np.ndarray) -> np.ndarray:
    """Solve (K + eps2*I) X = B using a precomputed factor.

    One step of iterative refinement keeps the residual small even for the
    tiny test-time jitters (eps2 = 1e-7) where the system is ill-conditioned.
    """
    B = np.asarray(B, dtype=np.float64)
    vector = B.ndim == 1
    rhs = B[:, None] if vector else B
    if rhs.shape[0] != factor.matrix.shape[0]:
        raise InvalidInputError(
            f"rhs has {rhs.shape[0]} rows, matrix is {factor.matrix.shape[0]}x"
            f"{factor.matrix.shape[0]}"
        )
    x, info = lapack.dpotrs(factor.chol, rhs, lower=1)
    if info != 0:  # pragma: no cover - potrs only fails on bad arguments
        raise NumericalError(f"triangular solve failed (info={info})")
    resid = rhs - factor.matrix @ x
    dx, _ = lapack.dpotrs(factor.chol, resid, lower=1)
    x = x + dx
    return x[:, 0] if vector else x


def spd_solve(K: np.ndarray, eps2: float, B: np.ndarray) -> np.ndarray:
    """Solve (K + eps2*I) X = B."""
    return factor_solve(spd_factor(K, eps2), B)
