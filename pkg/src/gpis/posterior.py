"""Posterior machinery: the variational click head, the exact corrected
posterior used as an oracle, and the decoupled pathwise sampler.

A posterior sample over all m pixels is assembled from two maps,

    f = Phi(Xbar) w  +  K_mn (K_nn + eps2*I)^-1 (f_n - Phi(Xbar_n) w),

a weight-space prior draw plus a function-space update that pins the sample
to the variational click values f_n.  The cost is O(m*(l+n) + n^3); no m-by-m
matrix is ever formed.  The exact corrected posterior (quadratic in m) exists
purely so tests can check the sampler's moments against a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import features as features_mod
from . import rff, rng
from .exceptions import InvalidInputError
from .features import FeatureMap, extract_features
from .image_io import Image
from .kernel import JitterConfig, KernelParams, default_kernel_params, kernel_matrix
from .linalg import factor_solve, spd_factor

HIDDEN_UNITS = 96
FIXED_SIGMA2 = 0.01


# -- variational head --------------------------------------------------------


@dataclass
class VariationalHead:
    """One-hidden-layer ReLU perceptron ending in softplus.

    The head maps each click's feature row to a strictly positive magnitude;
    multiplying by the click label gives the variational mean.  ``sigma2`` is
    the (fixed, untrained) variational variance.  Weight fields may hold
    autodiff Tensors during training.
    """

    W1: object  # (hidden, d)
    b1: object  # (hidden,)
    W2: object  # (1, hidden)
    b2: object  # scalar
    sigma2: float = FIXED_SIGMA2

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise InvalidInputError("head variance sigma2 must be positive")

    @property
    def d(self) -> int:
        return int(ad.value_of(self.W1).shape[1])

    @property
    def hidden(self) -> int:
        return int(ad.value_of(self.W1).shape[0])


def init_head(
    d: int, seed: int = 0, hidden: int = HIDDEN_UNITS, scheme: str = "he"
) -> VariationalHead:
    """Seeded head initialization.

    ``scheme="he"`` draws scaled-normal weights with zero biases;
    ``scheme="zero"`` zeroes everything, which makes the untrained magnitude
    softplus(0) = ln 2 at every pixel and is handy for fixtures.
    """
    if d < 1 or hidden < 1:
        raise InvalidInputError("head dimensions must be at least 1")
    if scheme == "zero":
        W1 = np.zeros((hidden, d))
        W2 = np.zeros((1, hidden))
    elif scheme == "he":
        g1 = rng.stream(seed, "head-w1")
        g2 = rng.stream(seed, "head-w2")
        W1 = g1.standard_normal((hidden, d)) * np.sqrt(2.0 / d)
        W2 = g2.standard_normal((1, hidden)) * np.sqrt(2.0 / hidden)
    else:
        raise InvalidInputError(f"unknown init scheme {scheme!r}")
    return VariationalHead(
        W1=W1, b1=np.zeros(hidden), W2=W2, b2=np.float64(0.0)
    )


def variational_mean(head: VariationalHead, X_n, y):
    """m_xi = softplus(perceptron(X_n)) * y, one entry per click.

    The sign of each entry always matches its label because the softplus
    factor is strictly positive.  Tape-aware in the head weights.
    """
    X_n = np.asarray(X_n, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X_n.ndim != 2 or X_n.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise InvalidInputError("need one feature row per click label")
    h = ad.relu(ad.matmul(X_n, ad.transpose(ad.as_node(head.W1))) + head.b1)
    raw = ad.matmul(h, ad.transpose(ad.as_node(head.W2))) + head.b2
    raw = ad.reshape(raw, (X_n.shape[0],))
    return ad.softplus(raw) * y


def sample_f_n(m_xi, sigma2: float, seed: int):
    """One reparameterized draw f_n = m_xi + sqrt(sigma2) * z.

    Tape-aware in m_xi; sigma2 = 0 returns m_xi plus a zero noise term.
    """
    if sigma2 < 0:
        raise InvalidInputError("sigma2 must be nonnegative")
    n = int(ad.value_of(m_xi).shape[0])
    z = rng.stream(seed, "f-draw").standard_normal(n)
    return ad.as_node(m_xi) + np.sqrt(sigma2) * z


# -- clicks ------------------------------------------------------------------


@dataclass(frozen=True)
class Click:
    """One interaction: a flat row-major pixel index and a ±1 label."""

    index: int
    label: int

    def __post_init__(self):
        if self.label not in (1, -1):
            raise InvalidInputError(f"click label must be +1 or -1, got {self.label}")
        if self.index < 0:
            raise InvalidInputError(f"click index must be nonnegative, got {self.index}")


@dataclass(frozen=True)
class ClickSet:
    """An ordered, duplicate-free sequence of clicks.

    Empty sets are legal as session state; posterior queries require n >= 1.
    """

    clicks: tuple = ()

    def __post_init__(self):
        seen = set()
        for c in self.clicks:
            if c.index in seen:
                raise InvalidInputError(f"pixel {c.index} clicked more than once")
            seen.add(c.index)

    @property
    def n(self) -> int:
        return len(self.clicks)

    @property
    def indices(self) -> np.ndarray:
        return np.array([c.index for c in self.clicks], dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clicks], dtype=np.float64)

    def with_click(self, index: int, label: int) -> "ClickSet":
        return ClickSet(self.clicks + (Click(int(index), int(label)),))

    def without_last(self) -> "ClickSet":
        if not self.clicks:
            raise InvalidInputError("no clicks to remove")
        return ClickSet(self.clicks[:-1])


# -- posterior sample --------------------------------------------------------


@dataclass(frozen=True)
class PosteriorSample:
    """One latent draw split into its two constituent maps.

    By construction f = prior_map + update_map entrywise and
    prob = sigmoid(f).
    """

    f: np.ndarray
    prior_map: np.ndarray
    update_map: np.ndarray
    prob: np.ndarray


def decompose(sample: PosteriorSample) -> tuple[np.ndarray, np.ndarray]:
    """The two panel maps: sigmoid of the prior and of the update term."""
    return ad.sigmoid(sample.prior_map), ad.sigmoid(sample.update_map)


# -- model container ----------------------------------------------------------


@dataclass
class GpModel:
    """Everything needed to answer posterior queries on a new image."""

    head: VariationalHead
    kp: KernelParams
    ws: rff.WeightSpaceParams
    jitter: JitterConfig = field(default_factory=JitterConfig)
    concat_image: bool = True
    feature_recipe: str = features_mod.FEATURE_RECIPE

    def __post_init__(self):
        if self.kp.d != self.head.d:
            raise InvalidInputError(
                f"kernel dimension {self.kp.d} != head dimension {self.head.d}"
            )
        expect = self.head.d + (3 if self.concat_image else 0)
        if self.ws.dim != expect:
            raise InvalidInputError(
                f"basis dimension {self.ws.dim} != expected {expect}"
            )
        if self.kp.use_color != self.concat_image:
            raise InvalidInputError(
                "kernel color term and image concatenation must agree"
            )


def build_model(
    d: int = features_mod.BASE_FEATURE_DIM,
    l: int = rff.DEFAULT_BASIS_COUNT,  # noqa: E741 - basis-count naming
    seed: int = 0,
    *,
    kernel_mode: str = "learned",
    ws_mode: str = "learned",
    concat_image: bool = True,
    jitter: JitterConfig | None = None,
    hidden: int = HIDDEN_UNITS,
    head_scheme: str = "he",
    sigma2: float = FIXED_SIGMA2,
) -> GpModel:
    """Assemble a fresh model with seeded initial parameters."""
    dim = d + (3 if concat_image else 0)
    head = init_head(d, seed=seed, hidden=hidden, scheme=head_scheme)
    head.sigma2 = sigma2
    return GpModel(
        head=head,
        kp=default_kernel_params(d, learn_mode=kernel_mode, use_color=concat_image),
        ws=rff.init_weight_space(l, dim, mode=ws_mode, seed=seed),
        jitter=jitter if jitter is not None else JitterConfig(),
        concat_image=concat_image,
    )


# -- pathwise sampling ---------------------------------------------------------


def sample_seed(seed: int, index: int) -> int:
    """The derived stream seed for posterior sample number ``index``."""
    return rng.derive_seed(seed, "sample", index)


def pathwise_terms(kp: KernelParams, ws, eps2: float, Xbar_all, Xbar_n, f_n, w,
                   Phi_all=None):
    """The shared sampling graph: returns (f, prior, update).

    Tape-aware in every parameter group, so the training loss and the
    inference path run literally the same code.  ``Phi_all`` may be passed
    in when the basis matrix for the full image is already known (and the
    weight-space parameters are plain arrays).
    """
    if Phi_all is None:
        Phi_all = rff.phi(ws, Xbar_all)
    Phi_n = rff.phi(ws, Xbar_n)
    prior = ad.matmul(Phi_all, w)
    resid = ad.sub(ad.as_node(f_n), ad.matmul(Phi_n, w))
    K_nn = kernel_matrix(kp, Xbar_n, Xbar_n)
    K_mn = kernel_matrix(kp, Xbar_all, Xbar_n)
    v = ad.spd_solve(K_nn, eps2, resid)
    update = ad.matmul(K_mn, v)
    return ad.add(prior, update), prior, update


def _click_inputs(fm: FeatureMap, clicks: ClickSet, concat_image: bool):
    if clicks.n < 1:
        raise InvalidInputError("posterior queries need at least one click")
    idx = clicks.indices
    if idx.max() >= fm.m:
        raise InvalidInputError(
            f"click index {int(idx.max())} out of range for {fm.m} pixels"
        )
    Xbar = fm.xbar(concat_image)
    return Xbar, Xbar[idx], fm.X[idx], clicks.labels


def pathwise_sample(
    fm: FeatureMap,
    clicks: ClickSet,
    head: VariationalHead,
    kp: KernelParams,
    ws,
    eps2: float,
    sigma2: float | None = None,
    seed: int = 0,
    *,
    sample_index: int = 0,
    concat_image: bool = True,
    Phi_all=None,
) -> PosteriorSample:
    """Draw one posterior sample over every pixel of the image.

    ``sigma2=None`` uses the head's trained variance; passing 0.0 makes the
    draw deterministic given the weight draw (used by the jitter sweep).
    ``(seed, sample_index)`` fully determines the two noise draws.
    """
    Xbar, Xbar_n, X_n, y = _click_inputs(fm, clicks, concat_image)
    if ws.dim != Xbar.shape[1]:
        raise InvalidInputError(
            f"basis dimension {ws.dim} does not match kernel rows ({Xbar.shape[1]})"
        )
    s2 = head.sigma2 if sigma2 is None else float(sigma2)
    sseed = sample_seed(seed, sample_index)
    m_xi = variational_mean(head, X_n, y)
    f_n = sample_f_n(m_xi, s2, sseed)
    w = rff.w_from_noise(ws, rff.draw_w_noise(ws, sseed))
    f, prior, update = pathwise_terms(kp, ws, eps2, Xbar, Xbar_n, f_n, w, Phi_all)
    f = ad.value_of(f)
    return PosteriorSample(
        f=f,
        prior_map=ad.value_of(prior),
        update_map=ad.value_of(update),
        prob=ad.sigmoid(f),
    )


def predict(
    fm: FeatureMap,
    clicks: ClickSet,
    head: VariationalHead,
    kp: KernelParams,
    ws,
    eps2: float,
    sigma2: float | None = None,
    seed: int = 0,
    samples: int = 1,
    *,
    concat_image: bool = True,
    Phi_all=None,
) -> np.ndarray:
    """Foreground probability per pixel, averaged over posterior samples.

    With samples = 1 this equals pathwise_sample(...).prob exactly.
    """
    if samples < 1:
        raise InvalidInputError("need at least one posterior sample")
    acc = None
    for s in range(samples):
        p = pathwise_sample(
            fm, clicks, head, kp, ws, eps2, sigma2, seed,
            sample_index=s, concat_image=concat_image, Phi_all=Phi_all,
        ).prob
        acc = p if acc is None else acc + p
    return acc / samples


def pathwise_sample_many(
    fm: FeatureMap,
    clicks: ClickSet,
    head: VariationalHead,
    kp: KernelParams,
    ws,
    eps2: float,
    sigma2: float | None = None,
    n_samples: int = 1,
    seed: int = 0,
    *,
    concat_image: bool = True,
    Phi_all=None,
) -> np.ndarray:
    """Vectorized sampler returning an (m, n_samples) matrix of latent draws.

    All draws share the factorization and the two Gram matrices, so large
    Monte Carlo moment checks stay cheap.  Uses its own noise streams; the
    per-sample path above is for interactive use.
    """
    if n_samples < 1:
        raise InvalidInputError("need at least one posterior sample")
    Xbar, Xbar_n, X_n, y = _click_inputs(fm, clicks, concat_image)
    s2 = head.sigma2 if sigma2 is None else float(sigma2)
    m_xi = ad.value_of(variational_mean(head, X_n, y))
    if Phi_all is None:
        Phi_all = rff.phi(ws, Xbar)
    Phi_n = rff.phi(ws, Xbar_n)
    mu_w = ad.value_of(ws.mu_w)
    sigma_w = np.sqrt(ws.sigma2_w)
    Zw = rng.stream(seed, "w-draw-batch").standard_normal((ws.l, n_samples))
    Zf = rng.stream(seed, "f-draw-batch").standard_normal((clicks.n, n_samples))
    W = mu_w[:, None] + sigma_w * Zw
    Fn = m_xi[:, None] + np.sqrt(s2) * Zf
    factor = spd_factor(ad.value_of(kernel_matrix(kp, Xbar_n, Xbar_n)), eps2)
    V = factor_solve(factor, Fn - Phi_n @ W)
    K_mn = ad.value_of(kernel_matrix(kp, Xbar, Xbar_n))
    return Phi_all @ W + K_mn @ V


# -- exact corrected posterior (oracle) ---------------------------------------


def exact_posterior(
    fm: FeatureMap,
    clicks: ClickSet,
    head: VariationalHead,
    kp: KernelParams,
    eps2: float,
    test_indices,
    sigma2: float | None = None,
    *,
    concat_image: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the corrected posterior at selected pixels.

    Computed via the rearrangement

        cov = K_ss - K_sn A + sigma2 * A^T A,   A = (K_nn + eps2 I)^-1 K_ns,

    which is a difference of the standard posterior shrinkage plus an
    explicitly PSD correction, keeping the result PSD regardless of how
    sigma2 compares with the smallest eigenvalue of the jittered Gram.
    Quadratic in the number of test pixels; intended as a test oracle.
    """
    Xbar, Xbar_n, X_n, y = _click_inputs(fm, clicks, concat_image)
    idx = np.asarray(test_indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise InvalidInputError("test_indices must be non-empty")
    if idx.min() < 0 or idx.max() >= fm.m:
        raise InvalidInputError("test index out of pixel range")
    Xbar_s = Xbar[idx]
    s2 = head.sigma2 if sigma2 is None else float(sigma2)
    m_xi = ad.value_of(variational_mean(head, X_n, y))
    K_nn = ad.value_of(kernel_matrix(kp, Xbar_n, Xbar_n))
    K_sn = ad.value_of(kernel_matrix(kp, Xbar_s, Xbar_n))
    K_ss = ad.value_of(kernel_matrix(kp, Xbar_s, Xbar_s))
    factor = spd_factor(K_nn, eps2)
    mu = K_sn @ factor_solve(factor, m_xi)
    A = factor_solve(factor, K_sn.T)
    cov = K_ss - K_sn @ A + s2 * (A.T @ A)
    return mu, 0.5 * (cov + cov.T)


# -- cached per-image predictor ------------------------------------------------


class Predictor:
    """Binds a model to one image and caches what repeated queries share.

    The cached quantities (kernel input rows, optionally the basis matrix)
    are exactly what the module-level functions would recompute, so results
    are bit-identical to the uncached path.
    """

    def __init__(self, model: GpModel, image, *, cache_phi: bool = True):
        self.model = model
        self.fm = extract_features(image) if isinstance(image, Image) else image
        if self.fm.d != model.head.d:
            raise InvalidInputError(
                f"feature dimension {self.fm.d} != model dimension {model.head.d}"
            )
        self.xbar = self.fm.xbar(model.concat_image)
        self._phi = rff.phi(model.ws, self.xbar) if cache_phi else None

    @property
    def height(self) -> int:
        return self.fm.height

    @property
    def width(self) -> int:
        return self.fm.width

    def grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape a flat per-pixel vector to (height, width)."""
        return np.asarray(values).reshape(self.fm.height, self.fm.width)

    def _eps2(self, eps2: float | None) -> float:
        return self.model.jitter.eps2_test if eps2 is None else float(eps2)

    def sample(self, clicks: ClickSet, seed: int = 0, *, sample_index: int = 0,
               sigma2: float | None = None, eps2: float | None = None) -> PosteriorSample:
        m = self.model
        return pathwise_sample(
            self.fm, clicks, m.head, m.kp, m.ws, self._eps2(eps2), sigma2, seed,
            sample_index=sample_index, concat_image=m.concat_image,
            Phi_all=self._phi,
        )

    def predict(self, clicks: ClickSet, seed: int = 0, samples: int = 1, *,
                sigma2: float | None = None, eps2: float | None = None) -> np.ndarray:
        m = self.model
        return predict(
            self.fm, clicks, m.head, m.kp, m.ws, self._eps2(eps2), sigma2, seed,
            samples, concat_image=m.concat_image, Phi_all=self._phi,
        )
