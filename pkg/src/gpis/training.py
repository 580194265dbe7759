"""End-to-end learning of the head, kernel and weight-space parameters.

The composite objective is a normalized focal loss over the full predicted
probability map plus a weighted variational term,

    L = L_NFL + alpha * L_VI,

where L_VI is a one-draw estimate of the click cross-entropy under the
variational Gaussian plus the quadratic penalty 0.5 * m^T (K+eps2 I)^-1 m.
Optimization is plain Adam over float64 parameters; checkpoints store
float32, and the returned model is rounded through float32 first so that
what you trained and what you load predict bit-identically.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import features as features_mod
from . import rff, rng
from .exceptions import CheckpointFormatError, InvalidInputError, NumericalError
from .features import FeatureMap, extract_features
from .image_io import Image
from .kernel import JitterConfig, KernelParams, kernel_matrix
from .posterior import (
    ClickSet,
    GpModel,
    VariationalHead,
    build_model,
    pathwise_terms,
    sample_f_n,
    variational_mean,
)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GPIS"
CHECKPOINT_VERSION = 1

PARAM_KEYS = (
    "head.W1",
    "head.b1",
    "head.W2",
    "head.b2",
    "kernel.log_eta0",
    "kernel.log_eta",
    "ws.theta",
    "ws.tau",
    "ws.mu_w",
    "ws.log_sigma2_w",
)


# -- configuration -------------------------------------------------------------


@dataclass
class TrainConfig:
    """Knobs for one training run.

    The four ablation switches: ``alpha=0`` drops the variational term,
    ``fixed_kernel`` freezes eta0/eta at their init constants,
    ``fixed_weightspace`` freezes theta/tau/mu_w/sigma2_w, and
    ``concat_image=False`` runs the kernel and bases on X alone.
    """

    alpha: float = 1e-3
    lr: float = 1e-3
    epochs: int = 60
    batch: int = 4
    gamma: float = 2.0
    seed: int = 0
    click_sampler: str = "random"
    eps2: float = 1e-2
    sigma2: float = 0.01
    basis_count: int = rff.DEFAULT_BASIS_COUNT
    hidden: int = 96
    fixed_kernel: bool = False
    fixed_weightspace: bool = False
    concat_image: bool = True
    hflip: bool = False
    vi_samples: int = 1

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidInputError("alpha must be nonnegative")
        if self.lr <= 0:
            raise InvalidInputError("learning rate must be positive")
        if self.epochs < 1 or self.batch < 1:
            raise InvalidInputError("epochs and batch must be at least 1")
        if self.gamma < 0:
            raise InvalidInputError("gamma must be nonnegative")
        if self.eps2 <= 0:
            raise InvalidInputError("training jitter must be positive")
        if self.click_sampler not in ("random", "iterative"):
            raise InvalidInputError(
                f"unknown click sampler {self.click_sampler!r}"
            )
        if self.vi_samples < 1:
            raise InvalidInputError("need at least one variational draw")


# -- losses --------------------------------------------------------------------


def nfl_loss(prob, gt, gamma: float = 2.0):
    """Normalized focal loss over a probability map.

    p_t is the probability assigned to the true class; each pixel's
    cross-entropy is weighted by (1 - p_t)^gamma and the sum is divided by
    the total weight (floored at 1e-8).  gamma = 0 recovers mean binary
    cross-entropy.  Tape-aware in ``prob``.
    """
    gt = np.asarray(gt)
    gtf = gt.astype(np.float64).reshape(-1)
    if not np.all((gtf == 0.0) | (gtf == 1.0)):
        raise InvalidInputError("ground truth must be binary")
    if ad.value_of(prob).shape != gtf.shape:
        raise InvalidInputError("probability map and ground truth differ in size")
    sign = 2.0 * gtf - 1.0
    p_t = ad.add(ad.mul(prob, sign), 1.0 - gtf)
    wt = ad.power(ad.sub(1.0, p_t), gamma) if gamma != 0.0 else (
        np.ones_like(gtf) if not ad.is_tensor(p_t) else ad.power(p_t, 0.0)
    )
    num = -1.0 * ad.sum(ad.mul(wt, ad.log(p_t)))
    den = ad.maximum(ad.sum(wt), 1e-8)
    return ad.div(num, den)


def vi_loss(head, X_n, y, K_nn, eps2: float, sigma2: float, seed: int,
            samples: int = 1):
    """Variational objective at the clicks.

    One (by default) reparameterized draw f = m + sigma*z scores the click
    cross-entropy, and the quadratic term 0.5 * m^T (K_nn + eps2 I)^-1 m
    regularizes the mean toward the prior.  Draw 0 reuses the base seed, so
    it coincides with the draw the sampling path makes for the same seed.
    """
    if samples < 1:
        raise InvalidInputError("need at least one variational draw")
    y = np.asarray(y, dtype=np.float64)
    m_xi = variational_mean(head, X_n, y)
    y01 = (y + 1.0) / 2.0
    ce = None
    for s in range(samples):
        sseed = seed if s == 0 else rng.derive_seed(seed, "vi-extra", s)
        f_c = sample_f_n(m_xi, sigma2, sseed)
        # -log s(f) = softplus(-f) and -log(1 - s(f)) = softplus(f)
        term = ad.sum(
            ad.add(
                ad.mul(ad.softplus(-1.0 * f_c), y01),
                ad.mul(ad.softplus(f_c), 1.0 - y01),
            )
        )
        ce = term if ce is None else ad.add(ce, term)
    ce = ad.div(ce, float(samples))
    v = ad.spd_solve(K_nn, eps2, m_xi)
    quad = 0.5 * ad.sum(ad.mul(m_xi, v))
    return ad.add(ce, quad)


# -- parameter plumbing ---------------------------------------------------------


def model_params(model: GpModel) -> dict:
    """Flat name -> float64 ndarray view of every trainable group."""
    return {
        "head.W1": np.array(ad.value_of(model.head.W1), dtype=np.float64),
        "head.b1": np.array(ad.value_of(model.head.b1), dtype=np.float64),
        "head.W2": np.array(ad.value_of(model.head.W2), dtype=np.float64),
        "head.b2": np.array(ad.value_of(model.head.b2), dtype=np.float64),
        "kernel.log_eta0": np.array(ad.value_of(model.kp.log_eta0), dtype=np.float64),
        "kernel.log_eta": np.array(ad.value_of(model.kp.log_eta), dtype=np.float64),
        "ws.theta": np.array(ad.value_of(model.ws.theta), dtype=np.float64),
        "ws.tau": np.array(ad.value_of(model.ws.tau), dtype=np.float64),
        "ws.mu_w": np.array(ad.value_of(model.ws.mu_w), dtype=np.float64),
        "ws.log_sigma2_w": np.array(
            ad.value_of(model.ws.log_sigma2_w), dtype=np.float64
        ),
    }


def assemble(template: GpModel, params: dict):
    """Rebuild (head, kp, ws) from a parameter dict.

    Values may be Tensors (training) or ndarrays (evaluation); structural
    attributes come from the template model.
    """
    head = VariationalHead(
        W1=params["head.W1"], b1=params["head.b1"],
        W2=params["head.W2"], b2=params["head.b2"],
        sigma2=template.head.sigma2,
    )
    kp = KernelParams(
        log_eta0=params["kernel.log_eta0"],
        log_eta=params["kernel.log_eta"],
        learn_mode=template.kp.learn_mode,
        use_color=template.kp.use_color,
    )
    ws = rff.WeightSpaceParams(
        theta=params["ws.theta"], tau=params["ws.tau"],
        mu_w=params["ws.mu_w"], log_sigma2_w=params["ws.log_sigma2_w"],
        learn_mode=template.ws.learn_mode,
    )
    return head, kp, ws


def grad(params: dict, loss_fn) -> tuple[dict, float]:
    """Reverse-mode gradients of a scalar loss closure.

    ``loss_fn`` receives {name: Tensor} and must return a scalar built from
    this package's operations.  A non-finite loss or gradient aborts with
    the offending parameter named.
    """
    tensors = {
        k: ad.Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
        for k, v in params.items()
    }
    loss = loss_fn(tensors)
    if not ad.is_tensor(loss):
        raise InvalidInputError("loss closure must return a Tensor scalar")
    value = loss.item()
    if not np.isfinite(value):
        raise NumericalError("loss is not finite")
    loss.backward()
    grads = {}
    for k, t in tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.value)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {k}")
        grads[k] = g
    return grads, value


def image_loss(params: dict, template: GpModel, fm: FeatureMap, gt,
               clicks: ClickSet, cfg: TrainConfig, seed: int):
    """The per-image composite objective, tape-aware in ``params``.

    Returns (loss node, float nfl, float vi).  The same seed drives the
    weight draw, the map-level f_n draw, and the variational draw.
    """
    head, kp, ws = assemble(template, params)
    idx = clicks.indices
    y = clicks.labels
    Xbar = fm.xbar(template.concat_image)
    X_n = fm.X[idx]
    m_xi = variational_mean(head, X_n, y)
    f_n = sample_f_n(m_xi, cfg.sigma2, seed)
    w = rff.w_from_noise(ws, rff.draw_w_noise(ws, seed))
    f, _, _ = pathwise_terms(kp, ws, cfg.eps2, Xbar, Xbar[idx], f_n, w)
    prob = ad.sigmoid(f)
    nfl = nfl_loss(prob, gt, cfg.gamma)
    if cfg.alpha > 0:
        K_nn = kernel_matrix(kp, Xbar[idx], Xbar[idx])
        vi = vi_loss(head, X_n, y, K_nn, cfg.eps2, cfg.sigma2, seed,
                     cfg.vi_samples)
        total = ad.add(nfl, cfg.alpha * vi)
        return total, float(ad.value_of(nfl)), float(ad.value_of(vi))
    return nfl, float(ad.value_of(nfl)), 0.0


# -- click sampling --------------------------------------------------------------


def _random_clicks(mask_flat: np.ndarray, seed: int) -> ClickSet:
    g = rng.stream(seed, "train-clicks")
    k_pos = int(g.integers(1, 6))
    k_neg = int(g.integers(0, 6))
    fg = np.flatnonzero(mask_flat)
    bg = np.flatnonzero(~mask_flat)
    k_pos = min(k_pos, fg.size)
    k_neg = min(k_neg, bg.size)
    clicks = ClickSet()
    for i in g.choice(fg, size=k_pos, replace=False):
        clicks = clicks.with_click(int(i), +1)
    for i in g.choice(bg, size=k_neg, replace=False):
        clicks = clicks.with_click(int(i), -1)
    return clicks


def _iterative_clicks(mask_flat, seed, template, params, fm, cfg) -> ClickSet:
    """Protocol-style clicks against the current model's own errors."""
    from . import clicksim  # deferred: clicksim sits above posterior only

    g = rng.stream(seed, "train-clicks-iter")
    fg = np.flatnonzero(mask_flat)
    clicks = ClickSet().with_click(int(g.choice(fg)), +1)
    rounds = int(g.integers(0, 4))
    if rounds == 0:
        return clicks
    frozen = {k: ad.value_of(v) for k, v in params.items()}
    head, kp, ws = assemble(template, frozen)
    gt_grid = mask_flat.reshape(fm.height, fm.width)
    from .posterior import predict as _predict

    for _ in range(rounds):
        prob = _predict(fm, clicks, head, kp, ws, cfg.eps2, cfg.sigma2,
                        seed, concat_image=template.concat_image)
        pred = prob.reshape(fm.height, fm.width) >= 0.5
        nxt = clicksim.next_click(pred, gt_grid, clicks)
        if nxt is None:
            break
        clicks = clicks.with_click(nxt[0], nxt[1])
    return clicks


# -- optimizer --------------------------------------------------------------------


class Adam:
    """Standard adaptive-moment estimation on a flat parameter dict."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            self.params[k] = self.params[k] - lr * m_hat / (
                np.sqrt(v_hat) + self.eps
            )


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: divide by 10 at 80% of the run and again at 95%."""
    e1 = int(round(0.8 * cfg.epochs))
    e2 = int(round(0.95 * cfg.epochs))
    lr = cfg.lr
    if epoch >= e1:
        lr /= 10.0
    if epoch >= e2:
        lr /= 10.0
    return lr


# -- checkpoints ------------------------------------------------------------------


@dataclass
class ModelCheckpoint:
    """A trained model plus the configuration and trace that produced it."""

    model: GpModel
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def head(self) -> VariationalHead:
        return self.model.head

    @property
    def kp(self) -> KernelParams:
        return self.model.kp

    @property
    def ws(self) -> rff.WeightSpaceParams:
        return self.model.ws


def _round_f32(params: dict) -> dict:
    return {
        k: np.asarray(v, dtype=np.float64).astype(np.float32).astype(np.float64)
        for k, v in params.items()
    }


def _rebuild_model(template: GpModel, params: dict) -> GpModel:
    head, kp, ws = assemble(template, params)
    return GpModel(
        head=head, kp=kp, ws=ws, jitter=template.jitter,
        concat_image=template.concat_image,
        feature_recipe=template.feature_recipe,
    )


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    """Binary layout: magic, u32 version, u32 header length, JSON header,
    then the float32 little-endian tensor payloads at the header's offsets."""
    params = model_params(ckpt.model)
    tensors, payload, offset = [], [], 0
    for name in PARAM_KEYS:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        tensors.append(
            {"name": name, "shape": list(arr.shape), "offset": offset}
        )
        payload.append(arr.tobytes())
        offset += arr.nbytes
    m = ckpt.model
    header = {
        "tensors": tensors,
        "feature_recipe": m.feature_recipe,
        "model": {
            "d": m.head.d,
            "hidden": m.head.hidden,
            "l": m.ws.l,
            "sigma2": m.head.sigma2,
            "concat_image": m.concat_image,
            "kernel_mode": m.kp.learn_mode,
            "ws_mode": m.ws.learn_mode,
            "eps2_train": m.jitter.eps2_train,
            "eps2_test": m.jitter.eps2_test,
        },
        "config": ckpt.config,
        "metadata": ckpt.metadata,
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + struct.pack("<I", len(hjson))
        + hjson
        + b"".join(payload)
    )
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> ModelCheckpoint:
    """Inverse of save_checkpoint; rejects bad magic, version or truncation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise CheckpointFormatError("file too short to be a checkpoint")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic bytes")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise CheckpointFormatError("truncated header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}") from exc
    payload = blob[12 + hlen :]
    try:
        tensors = header["tensors"]
        mcfg = header["model"]
    except KeyError as exc:
        raise CheckpointFormatError(f"header missing section {exc}") from exc
    expected = sum(
        4 * int(np.prod(t["shape"], dtype=np.int64)) for t in tensors
    )
    if len(payload) != expected:
        raise CheckpointFormatError(
            f"payload is {len(payload)} bytes, header expects {expected}"
        )
    params = {}
    for t in tensors:
        size = int(np.prod(t["shape"], dtype=np.int64))
        start = int(t["offset"])
        arr = np.frombuffer(payload, dtype="<f4", count=size, offset=start)
        params[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    missing = [k for k in PARAM_KEYS if k not in params]
    if missing:
        raise CheckpointFormatError(f"missing tensors: {', '.join(missing)}")
    template = build_model(
        d=mcfg["d"], l=mcfg["l"], seed=0,
        kernel_mode=mcfg["kernel_mode"], ws_mode=mcfg["ws_mode"],
        concat_image=mcfg["concat_image"],
        jitter=JitterConfig(mcfg["eps2_train"], mcfg["eps2_test"]),
        hidden=mcfg["hidden"], sigma2=mcfg["sigma2"],
    )
    model = _rebuild_model(template, params)
    model.feature_recipe = header.get("feature_recipe", model.feature_recipe)
    return ModelCheckpoint(
        model=model,
        config=header.get("config", {}),
        metadata=header.get("metadata", {}),
    )


def write_loss_csv(trace, path) -> None:
    """Loss trace as CSV with columns epoch,nfl,vi,total."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "nfl", "vi", "total"])
        for row in trace:
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


# -- training loop ------------------------------------------------------------------


def _prepare_dataset(dataset, cfg: TrainConfig):
    usable, skipped = [], 0
    for image, mask in dataset:
        if not isinstance(image, Image):
            raise InvalidInputError("dataset entries must pair an Image with a mask")
        mask = np.asarray(mask).astype(bool)
        if mask.shape != (image.height, image.width):
            raise InvalidInputError(
                f"mask shape {mask.shape} does not match image "
                f"({image.height}, {image.width})"
            )
        flat = mask.reshape(-1)
        if flat.all() or not flat.any():
            skipped += 1
            continue
        usable.append((extract_features(image), flat))
    if skipped:
        logger.warning("skipped %d degenerate mask(s)", skipped)
    if not usable:
        raise InvalidInputError("no usable training images")
    return usable, skipped


def train(dataset, cfg: TrainConfig | None = None) -> ModelCheckpoint:
    """Fit all parameter groups on (image, binary mask) pairs.

    Returns a checkpoint whose model is already rounded through float32, so
    its predictions match a saved-and-reloaded copy bitwise.
    """
    cfg = cfg if cfg is not None else TrainConfig()
    usable, skipped = _prepare_dataset(dataset, cfg)
    if cfg.hflip:
        flipped = []
        for fm, flat in usable:
            grid = flat.reshape(fm.height, fm.width)
            img = Image.from_array(
                np.ascontiguousarray(
                    fm.I.reshape(fm.height, fm.width, 3)[:, ::-1]
                )
            )
            flipped.append(
                (extract_features(img), np.ascontiguousarray(grid[:, ::-1]).reshape(-1))
            )
        mirror = flipped
    else:
        mirror = None

    d = usable[0][0].d
    template = build_model(
        d=d, l=cfg.basis_count, seed=cfg.seed,
        kernel_mode="fixed" if cfg.fixed_kernel else "learned",
        ws_mode="fixed" if cfg.fixed_weightspace else "learned",
        concat_image=cfg.concat_image,
        jitter=JitterConfig(eps2_train=cfg.eps2),
        hidden=cfg.hidden, sigma2=cfg.sigma2,
    )
    params = model_params(template)

    trainable = ["head.W1", "head.b1", "head.W2", "head.b2"]
    if not cfg.fixed_kernel:
        trainable.append("kernel.log_eta")
        if cfg.concat_image:
            trainable.append("kernel.log_eta0")
    if not cfg.fixed_weightspace:
        trainable += ["ws.theta", "ws.tau", "ws.mu_w", "ws.log_sigma2_w"]

    opt = Adam({k: params[k] for k in trainable})
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.stream(cfg.seed, "train-order", epoch).permutation(len(usable))
        lr = lr_at(cfg, epoch)
        sums = np.zeros(3)
        batches = 0
        for lo in range(0, len(order), cfg.batch):
            batch = order[lo : lo + cfg.batch]
            nfl_acc = vi_acc = 0.0

            def batch_loss(tensors, batch=batch, epoch=epoch, step=step):
                nonlocal nfl_acc, vi_acc
                nfl_acc = vi_acc = 0.0
                full = dict(params)
                full.update(tensors)
                acc = None
                for j in batch:
                    fm, flat = usable[j]
                    seed_j = rng.derive_seed(cfg.seed, "step", epoch, step, int(j))
                    if cfg.hflip and rng.stream(seed_j, "hflip").random() < 0.5:
                        fm, flat = mirror[j]
                    if cfg.click_sampler == "iterative":
                        clicks = _iterative_clicks(
                            flat, seed_j, template, full, fm, cfg
                        )
                    else:
                        clicks = _random_clicks(flat, seed_j)
                    loss_j, nfl_j, vi_j = image_loss(
                        full, template, fm, flat, clicks, cfg, seed_j
                    )
                    nfl_acc += nfl_j
                    vi_acc += vi_j
                    acc = loss_j if acc is None else ad.add(acc, loss_j)
                return ad.div(acc, float(len(batch)))

            grads, value = grad({k: opt.params[k] for k in trainable}, batch_loss)
            opt.step(grads, lr)
            for k in trainable:
                params[k] = opt.params[k]
            sums += (nfl_acc / len(batch), vi_acc / len(batch), value)
            batches += 1
            step += 1
        mean = sums / batches
        trace.append([epoch, float(mean[0]), float(mean[1]), float(mean[2])])
        logger.info(
            "epoch %d: nfl=%.6f vi=%.6f total=%.6f lr=%g",
            epoch, mean[0], mean[1], mean[2], lr,
        )

    final = _round_f32(params)
    model = _rebuild_model(template, final)
    return ModelCheckpoint(
        model=model,
        config=asdict(cfg),
        metadata={
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "skipped_degenerate": skipped,
            "loss_trace": trace,
        },
    )
