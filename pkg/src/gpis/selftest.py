"""Machine-checked validation of the numerics against the slow oracles.

Each check pits a production code path against its independent reference
from the oracles module.  The last check is a negative control: it corrupts
one analytic gradient entry and demands that the comparison notices, which
guards the checker itself against silent vacuity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from . import oracles, rff, rng
from .features import BLUR_SIGMAS, BLUR_TRUNCATE, extract_features
from .image_io import Image
from .kernel import kernel_eval, kernel_matrix
from .posterior import (
    ClickSet,
    build_model,
    exact_posterior,
    pathwise_sample_many,
)
from .training import TrainConfig, grad, image_loss


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _random_scene(seed: int, h: int = 8, w: int = 9):
    g = rng.stream(seed, "selftest-scene")
    return Image.from_array(g.random((h, w, 3)))


def check_blur(seed: int = 0) -> CheckResult:
    g = rng.stream(seed, "selftest-blur")
    channel = g.random((12, 10))
    worst = 0.0
    for sigma in BLUR_SIGMAS:
        ours = ndimage.gaussian_filter(
            channel, sigma=sigma, mode="reflect", truncate=BLUR_TRUNCATE
        )
        ref = oracles.dense_blur(channel, sigma, BLUR_TRUNCATE)
        worst = max(worst, float(np.max(np.abs(ours - ref))))
    return CheckResult(
        "gaussian blur vs dense convolution", worst < 1e-12,
        f"max abs diff {worst:.3e}",
    )


def check_kernel(seed: int = 0) -> CheckResult:
    g = rng.stream(seed, "selftest-kernel")
    model = build_model(d=6, l=8, seed=seed)
    kp = model.kp
    rows = g.random((7, kp.input_dim))
    K = ad.value_of(kernel_matrix(kp, rows, rows))
    worst = 0.0
    for i in range(rows.shape[0]):
        for j in range(rows.shape[0]):
            ref = oracles.kernel_scalar(rows[i], rows[j], kp.eta0, kp.eta)
            direct = kernel_eval(kp, rows[i], rows[j])
            worst = max(worst, abs(K[i, j] - ref), abs(direct - ref))
    return CheckResult(
        "kernel matrix vs scalar oracle", worst < 1e-10,
        f"max abs diff {worst:.3e}",
    )


def check_exact_posterior(seed: int = 0) -> CheckResult:
    worst = 0.0
    for rep in range(5):
        image = _random_scene(rng.derive_seed(seed, "ep", rep))
        fm = extract_features(image)
        model = build_model(seed=rep, l=8)
        g = rng.stream(seed, "selftest-ep", rep)
        idx = g.choice(fm.m, size=3, replace=False)
        clicks = ClickSet()
        for k, i in enumerate(idx):
            clicks = clicks.with_click(int(i), 1 if k % 2 == 0 else -1)
        test_idx = g.choice(fm.m, size=7, replace=False)
        mu, cov = exact_posterior(
            fm, clicks, model.head, model.kp, 1e-4, test_idx
        )
        Xbar = fm.xbar(True)
        from .posterior import variational_mean

        m_xi = ad.value_of(
            variational_mean(model.head, fm.X[clicks.indices], clicks.labels)
        )
        Xn = Xbar[clicks.indices]
        Xs = Xbar[test_idx]
        K_nn = ad.value_of(kernel_matrix(model.kp, Xn, Xn))
        K_sn = ad.value_of(kernel_matrix(model.kp, Xs, Xn))
        K_ss = ad.value_of(kernel_matrix(model.kp, Xs, Xs))
        mu_ref, cov_ref = oracles.dense_posterior(
            K_nn, K_sn, K_ss, m_xi, 1e-4, model.head.sigma2
        )
        scale = max(1.0, float(np.max(np.abs(mu_ref))))
        worst = max(worst, float(np.max(np.abs(mu - mu_ref))) / scale)
        cscale = max(1.0, float(np.max(np.abs(cov_ref))))
        worst = max(worst, float(np.max(np.abs(cov - cov_ref))) / cscale)
    return CheckResult(
        "exact posterior vs dense-inverse oracle", worst < 1e-8,
        f"worst relative diff {worst:.3e}",
    )


def check_moments(seed: int = 0) -> CheckResult:
    image = _random_scene(seed, h=5, w=8)
    fm = extract_features(image)
    model = build_model(
        d=fm.d, l=4096, seed=seed, ws_mode="fixed", concat_image=False,
        head_scheme="zero",
    )
    model.kp.log_eta = np.zeros(fm.d)
    model.ws = rff.unit_rbf_weight_space(4096, fm.d, seed=seed)
    g = rng.stream(seed, "selftest-moments")
    idx = g.choice(fm.m, size=4, replace=False)
    clicks = ClickSet()
    for k, i in enumerate(idx):
        clicks = clicks.with_click(int(i), 1 if k % 2 == 0 else -1)
    eps2 = 1e-4
    F = pathwise_sample_many(
        fm, clicks, model.head, model.kp, model.ws, eps2,
        n_samples=8000, seed=seed, concat_image=False,
    )
    mu, cov = exact_posterior(
        fm, clicks, model.head, model.kp, eps2, np.arange(fm.m),
        concat_image=False,
    )
    mean_err = float(np.max(np.abs(F.mean(axis=1) - mu)))
    cov_err = float(np.max(np.abs(np.cov(F) - cov)))
    return CheckResult(
        "pathwise sampler moments vs exact posterior",
        mean_err < 8e-2 and cov_err < 1.5e-1,
        f"mean err {mean_err:.3f}, cov err {cov_err:.3f}",
    )


def _gradient_fixture(seed: int):
    image = _random_scene(seed, h=8, w=9)
    fm = extract_features(image)
    g = rng.stream(seed, "selftest-grad")
    mask = np.zeros(fm.m, dtype=bool)
    mask[g.choice(fm.m, size=fm.m // 3, replace=False)] = True
    idx = g.choice(fm.m, size=4, replace=False)
    clicks = ClickSet()
    for k, i in enumerate(idx):
        clicks = clicks.with_click(int(i), 1 if mask[i] else -1)
    model = build_model(d=fm.d, l=12, seed=seed)
    cfg = TrainConfig(epochs=1, batch=1, seed=seed)
    from .training import model_params

    params = model_params(model)

    def loss_tensor(tensors):
        full = dict(params)
        full.update(tensors)
        value, _, _ = image_loss(full, model, fm, mask, clicks, cfg, seed)
        return value

    def loss_float(arrays):
        value, _, _ = image_loss(arrays, model, fm, mask, clicks, cfg, seed)
        return float(ad.value_of(value))

    return params, loss_tensor, loss_float


def check_gradients(seed: int = 0) -> CheckResult:
    params, loss_tensor, loss_float = _gradient_fixture(seed)
    analytic, _ = grad(params, loss_tensor)
    numeric = oracles.fd_gradient(params, loss_float, step=1e-4)
    bad = oracles.compare_gradients(analytic, numeric)
    return CheckResult(
        "full-pipeline gradients vs finite differences", not bad,
        "all coordinates within contract" if not bad else
        f"{len(bad)} coordinate(s) off, first: {bad[0]}",
    )


def check_gradient_negative_control(seed: int = 0) -> CheckResult:
    params, loss_tensor, loss_float = _gradient_fixture(seed)
    analytic, _ = grad(params, loss_tensor)
    numeric = oracles.fd_gradient(params, loss_float, step=1e-4)
    corrupted = {k: np.array(v) for k, v in analytic.items()}
    w1 = corrupted["head.W1"]
    w1.flat[0] += 0.05 + abs(w1.flat[0])
    bad = oracles.compare_gradients(corrupted, numeric)
    return CheckResult(
        "gradient checker negative control", bool(bad),
        "perturbed gradient correctly rejected" if bad else
        "checker failed to flag a corrupted gradient",
    )


def check_distance_transform(seed: int = 0) -> CheckResult:
    from .clicksim import _component_distances

    g = rng.stream(seed, "selftest-dt")
    worst = 0.0
    for rep in range(6):
        comp = g.random((9, 11)) < 0.45
        if rep == 5:
            comp[:] = True
        ours = _component_distances(comp)
        ref = oracles.brute_force_distances(comp)
        worst = max(worst, float(np.max(np.abs(ours[comp] - ref[comp]))))
    return CheckResult(
        "distance transform vs brute force", worst < 1e-12,
        f"max abs diff {worst:.3e}",
    )


def run_selftest(seed: int = 0) -> list[CheckResult]:
    return [
        check_blur(seed),
        check_kernel(seed),
        check_exact_posterior(seed),
        check_moments(seed),
        check_gradients(seed),
        check_gradient_negative_control(seed),
        check_distance_transform(seed),
    ]
