"""The function-space kernel and its jittered linear solves.

The kernel is a modified RBF over concatenated rows [x | color]: a color
term with fixed unit bandwidth scaled by eta0, plus a feature term with one
learnable length-scale divisor per feature dimension,

    k(a, b) = eta0 * exp(-sum((ca - cb)^2) / 2)
              + exp(-sum((xa - xb)^2 / (2 * eta_t))).

Positivity of eta0 and eta_t is enforced by storing their logs and training
those unconstrained.  All solves go through a Cholesky factorization of
K + eps2*I; no inverse is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import InvalidInputError

COLOR_DIMS = 3


@dataclass
class JitterConfig:
    """Diagonal jitter added to K before every solve.

    Training uses a large value for stability; testing a tiny one so the
    posterior interpolates the clicks sharply.
    """

    eps2_train: float = 1e-2
    eps2_test: float = 1e-7

    def __post_init__(self):
        if self.eps2_train <= 0 or self.eps2_test <= 0:
            raise InvalidInputError("jitter values must be strictly positive")


@dataclass
class KernelParams:
    """Kernel hyperparameters stored as logs.

    ``log_eta`` has one entry per feature dimension.  ``use_color`` is False
    only in the no-image-concatenation ablation, where the kernel input is X
    alone and the color term disappears.  Fields may hold autodiff Tensors
    during training.
    """

    log_eta0: object
    log_eta: object
    learn_mode: str = "learned"
    use_color: bool = True

    @property
    def d(self) -> int:
        return int(ad.value_of(self.log_eta).shape[0])

    @property
    def input_dim(self) -> int:
        return self.d + (COLOR_DIMS if self.use_color else 0)

    @property
    def eta0(self) -> float:
        return float(np.exp(ad.value_of(self.log_eta0)))

    @property
    def eta(self) -> np.ndarray:
        return np.exp(ad.value_of(self.log_eta))


def default_kernel_params(
    d: int, learn_mode: str = "learned", use_color: bool = True
) -> KernelParams:
    """eta0 = 1 and eta_t = e^-1, the fixed-kernel ablation constants,
    reused as the initialization in learned mode."""
    if d < 1:
        raise InvalidInputError("feature dimension must be at least 1")
    return KernelParams(
        log_eta0=np.float64(0.0),
        log_eta=np.full(d, -1.0, dtype=np.float64),
        learn_mode=learn_mode,
        use_color=use_color,
    )


def _split(params: KernelParams, rows):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise InvalidInputError(f"expected a 2-D row matrix, got shape {rows.shape}")
    if rows.shape[1] != params.input_dim:
        raise InvalidInputError(
            f"rows have {rows.shape[1]} columns, kernel expects {params.input_dim}"
        )
    if params.use_color:
        return rows[:, : params.d], rows[:, params.d :]
    return rows, None


def kernel_eval(params: KernelParams, a, b) -> float:
    """Scalar kernel value; symmetric in (a, b) and exactly eta0+1 at a == b."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidInputError("kernel arguments must have matching layout")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise InvalidInputError("kernel arguments must be finite")
    ax, ai = _split(params, a[None, :])
    bx, bi = _split(params, b[None, :])
    feat = float(np.exp(-np.sum((ax - bx) ** 2 / (2.0 * params.eta))))
    if not params.use_color:
        return feat
    color = float(np.exp(-0.5 * np.sum((ai - bi) ** 2)))
    return params.eta0 * color + feat


def kernel_matrix(params: KernelParams, A, B):
    """Dense k(A_i, B_j) Gram matrix, tape-aware in the kernel parameters.

    The feature term is assembled from the expansion
    ||a - b||^2_s = (a^2) s + (b^2) s - 2 a diag(s) b^T with s = 1/(2 eta),
    so the cost is one GEMM regardless of whether eta is being trained.
    """
    Ax, Ai = _split(params, A)
    Bx, Bi = _split(params, B)
    s = 0.5 * ad.exp(-1.0 * ad.as_node(params.log_eta))
    t1 = ad.reshape(ad.matmul(Ax**2, s), (Ax.shape[0], 1))
    t2 = ad.reshape(ad.matmul(Bx**2, s), (1, Bx.shape[0]))
    cross = ad.matmul(ad.mul(Ax, s), Bx.T)
    dist = t1 + t2 - 2.0 * cross
    feat = ad.exp(-1.0 * dist)
    if not params.use_color:
        return feat
    dc = (
        np.sum(Ai**2, axis=1)[:, None]
        + np.sum(Bi**2, axis=1)[None, :]
        - 2.0 * (Ai @ Bi.T)
    )
    color = np.exp(-0.5 * dc)
    return ad.exp(ad.as_node(params.log_eta0)) * color + feat


def jittered_solve(K, eps2: float, B):
    """(K + eps2*I)^-1 B via SPD factorization.

    K must be symmetric within 1e-8 (it is silently symmetrized below that);
    factorization failures raise NumericalError with the failing pivot.
    """
    return ad.spd_solve(K, eps2, B)
