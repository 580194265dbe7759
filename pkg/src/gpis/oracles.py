"""Independent reference implementations used only for validation.

Everything here is written the slow, obvious way: python loops, dense
inverses, O(p^2) distance scans, explicit padding.  None of it shares code
with the production modules, so agreement between the two is evidence, not
tautology.  The test suite and the selftest subcommand are the only
consumers.
"""

from __future__ import annotations

import math

import numpy as np


def dense_blur(channel: np.ndarray, sigma: float, truncate: float = 3.0) -> np.ndarray:
    """Separable Gaussian blur with mirrored edges, from first principles."""
    channel = np.asarray(channel, dtype=np.float64)
    radius = int(truncate * sigma + 0.5)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    k /= k.sum()

    def blur_rows(a: np.ndarray) -> np.ndarray:
        padded = np.pad(a, ((0, 0), (radius, radius)), mode="symmetric")
        out = np.empty_like(a)
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                out[i, j] = float(np.dot(padded[i, j : j + 2 * radius + 1], k))
        return out

    return blur_rows(blur_rows(channel).T).T


def kernel_scalar(a, b, eta0: float, eta, color_dims: int = 3,
                  use_color: bool = True) -> float:
    """The modified-RBF kernel between two concatenated rows, term by term."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    eta = np.asarray(eta, dtype=np.float64).reshape(-1)
    d = eta.shape[0]
    feat = 0.0
    for t in range(d):
        feat += (a[t] - b[t]) ** 2 / (2.0 * eta[t])
    value = math.exp(-feat)
    if use_color:
        color = 0.0
        for t in range(color_dims):
            color += (a[d + t] - b[d + t]) ** 2
        value += eta0 * math.exp(-0.5 * color)
    return value


def dense_posterior(K_nn, K_sn, K_ss, m_xi, eps2: float, sigma2: float):
    """The corrected posterior evaluated literally with a dense inverse."""
    K_nn = np.asarray(K_nn, dtype=np.float64)
    K_sn = np.asarray(K_sn, dtype=np.float64)
    K_ss = np.asarray(K_ss, dtype=np.float64)
    m_xi = np.asarray(m_xi, dtype=np.float64)
    n = K_nn.shape[0]
    Kinv = np.linalg.inv(K_nn + eps2 * np.eye(n))
    mu = K_sn @ Kinv @ m_xi
    cov = K_ss - K_sn @ Kinv @ (np.eye(n) - sigma2 * Kinv) @ K_sn.T
    return mu, cov


def brute_force_distances(comp: np.ndarray) -> np.ndarray:
    """Distance of each in-component pixel to the nearest outside pixel.

    O(p^2) pairwise scan.  A component covering the whole frame measures
    against a virtual one-pixel border instead, matching the padded-frame
    convention of the click protocol.
    """
    comp = np.asarray(comp, dtype=bool)
    if comp.all():
        padded = np.zeros((comp.shape[0] + 2, comp.shape[1] + 2), dtype=bool)
        padded[1:-1, 1:-1] = comp
        return brute_force_distances(padded)[1:-1, 1:-1]
    ins = np.argwhere(comp)
    outs = np.argwhere(~comp)
    dist = np.zeros(comp.shape, dtype=np.float64)
    for r, c in ins:
        best = math.inf
        for orow, ocol in outs:
            d2 = (r - orow) ** 2 + (c - ocol) ** 2
            if d2 < best:
                best = d2
        dist[r, c] = math.sqrt(best)
    return dist


def nfl_scalar(prob, gt, gamma: float) -> float:
    """Normalized focal loss by direct summation."""
    prob = np.asarray(prob, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    num = 0.0
    den = 0.0
    for p, g in zip(prob, gt):
        p_t = p if g else 1.0 - p
        w = (1.0 - p_t) ** gamma
        num -= w * math.log(p_t)
        den += w
    return num / max(den, 1e-8)


def vi_scalar(m_xi, y, K_nn, eps2: float, sigma2: float, z) -> float:
    """The variational objective for one explicit noise vector z."""
    m_xi = np.asarray(m_xi, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    K_nn = np.asarray(K_nn, dtype=np.float64)
    ce = 0.0
    for m, lbl, noise in zip(m_xi, y, z):
        f = m + math.sqrt(sigma2) * noise
        s = 1.0 / (1.0 + math.exp(-f))
        y01 = (lbl + 1.0) / 2.0
        ce -= y01 * math.log(s) + (1.0 - y01) * math.log(1.0 - s)
    Kinv = np.linalg.inv(K_nn + eps2 * np.eye(K_nn.shape[0]))
    quad = 0.5 * float(m_xi @ Kinv @ m_xi)
    return ce + quad


def fd_gradient(params: dict, loss_fn, step: float = 1e-4) -> dict:
    """Central finite differences of a scalar loss over a parameter dict.

    ``loss_fn`` takes {name: ndarray} and returns a float; parameters are
    perturbed in place one scalar at a time and restored afterwards.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn(base))
            flat[i] = orig - step
            down = float(loss_fn(base))
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def compare_gradients(analytic: dict, numeric: dict, rel_tol: float = 1e-4,
                      grad_floor: float = 1e-6) -> list:
    """All coordinates violating the finite-difference contract.

    Coordinates where both gradients sit below ``grad_floor`` are skipped;
    elsewhere the relative error against the larger magnitude must stay
    within ``rel_tol``.  Returns [(name, index, analytic, numeric), ...].
    """
    bad = []
    for name in sorted(analytic):
        a = np.asarray(analytic[name]).reshape(-1)
        n = np.asarray(numeric[name]).reshape(-1)
        for i in range(a.size):
            scale = max(abs(a[i]), abs(n[i]))
            if scale <= grad_floor:
                continue
            if abs(a[i] - n[i]) / scale > rel_tol:
                bad.append((name, int(i), float(a[i]), float(n[i])))
    return bad
