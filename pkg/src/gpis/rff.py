"""Weight-space side of the decoupled posterior: Fourier bases and the
learnable weight prior.

The basis matrix is Phi(X)[i, r] = sqrt(2/l) * cos(theta_r . x_i + tau_r);
weights draw from N(mu_w, sigma2_w * I).  In fixed mode all four parameter
groups keep their initialization draws (theta ~ N(0, I), tau ~ U(0, 2pi),
mu_w ~ N(0, 0.25 I), sigma2_w = 0.025); learned mode starts from the same
draws and trains them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng
from .exceptions import InvalidInputError

FIXED_SIGMA2_W = 0.025
MU_W_INIT_VARIANCE = 0.25
DEFAULT_BASIS_COUNT = 128


@dataclass
class WeightSpaceParams:
    """Fourier frequencies/phases plus the weight-prior moments.

    Fields may hold autodiff Tensors during training.
    """

    theta: object  # (l, dim)
    tau: object  # (l,)
    mu_w: object  # (l,)
    log_sigma2_w: object  # scalar; -inf encodes sigma_w = 0 exactly
    learn_mode: str = "learned"

    @property
    def l(self) -> int:  # noqa: E743 - matching the basis-count naming
        return int(ad.value_of(self.theta).shape[0])

    @property
    def dim(self) -> int:
        return int(ad.value_of(self.theta).shape[1])

    @property
    def sigma2_w(self) -> float:
        return float(np.exp(ad.value_of(self.log_sigma2_w)))


def init_weight_space(
    l: int, dim: int, mode: str = "fixed", seed: int = 0
) -> WeightSpaceParams:
    """Draw the basis parameters for a given seed.

    The same (l, dim, seed) always produces identical parameters; mode only
    decides whether training may update them later.
    """
    if l < 1 or dim < 1:
        raise InvalidInputError(f"need l >= 1 and dim >= 1, got l={l}, dim={dim}")
    if mode not in ("fixed", "learned"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    g_theta = rng.stream(seed, "rff-theta")
    g_tau = rng.stream(seed, "rff-tau")
    g_mu = rng.stream(seed, "rff-mu-w")
    return WeightSpaceParams(
        theta=g_theta.standard_normal((l, dim)),
        tau=g_tau.uniform(0.0, 2.0 * np.pi, size=l),
        mu_w=g_mu.normal(0.0, np.sqrt(MU_W_INIT_VARIANCE), size=l),
        log_sigma2_w=np.float64(np.log(FIXED_SIGMA2_W)),
        learn_mode=mode,
    )


def unit_rbf_weight_space(l: int, dim: int, seed: int = 0) -> WeightSpaceParams:  # noqa: E741
    """The textbook configuration: zero-mean unit-variance weights.

    Under it, Phi(a) Phi(b)^T estimates exp(-||a - b||^2 / 2) and the
    weight-space prior is a draw from that approximate GP, which is what the
    sampler-fidelity and kernel-approximation checks assume.
    """
    ws = init_weight_space(l, dim, mode="fixed", seed=seed)
    return WeightSpaceParams(
        theta=ws.theta,
        tau=ws.tau,
        mu_w=np.zeros(l),
        log_sigma2_w=np.float64(0.0),
        learn_mode="fixed",
    )


def phi(ws: WeightSpaceParams, Xbar):
    """Feature matrix (p, l); every entry lies in [-sqrt(2/l), sqrt(2/l)]."""
    Xbar = np.asarray(Xbar, dtype=np.float64)
    if Xbar.ndim != 2 or Xbar.shape[1] != ws.dim:
        raise InvalidInputError(
            f"rows of shape {Xbar.shape} do not match basis dimension {ws.dim}"
        )
    theta = ws.theta if ad.is_tensor(ws.theta) else np.asarray(
        ws.theta, dtype=np.float64
    )
    proj = ad.matmul(Xbar, ad.transpose(theta)) + ws.tau
    return np.sqrt(2.0 / ws.l) * ad.cos(proj)


def draw_w_noise(ws: WeightSpaceParams, seed: int) -> np.ndarray:
    """The standard-normal noise behind one weight draw."""
    return rng.stream(seed, "w-draw").standard_normal(ws.l)


def w_from_noise(ws: WeightSpaceParams, z: np.ndarray):
    """Reparameterized weight draw w = mu_w + sigma_w * z.

    Differentiable in mu_w and log_sigma2_w when those are Tensors; a
    log-variance of -inf encodes sigma_w = 0 exactly (exp(-inf) == 0).
    """
    sigma_w = ad.exp(0.5 * ad.as_node(ws.log_sigma2_w))
    return ad.as_node(ws.mu_w) + sigma_w * z


def sample_w(ws: WeightSpaceParams, seed: int) -> np.ndarray:
    """One weight draw from the seeded stream."""
    return ad.value_of(w_from_noise(ws, draw_w_noise(ws, seed)))
