"""Tape correctness: every op against central finite differences."""

import numpy as np
import pytest

from gpis import autodiff as ad
from gpis.linalg import spd_factor


def fd(fn, x, step=1e-6):
    """Central-difference gradient of a scalar fn over a flat copy of x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        x[i] += step
        hi = fn(x)
        x[i] -= 2 * step
        lo = fn(x)
        x[i] += step
        g[i] = (hi - lo) / (2 * step)
        it.iternext()
    return g


def check_grad(build, x0, step=1e-6, tol=1e-6):
    t = ad.Tensor(np.array(x0, dtype=np.float64), requires_grad=True)
    loss = build(t)
    loss.backward()
    num = fd(lambda x: float(ad.value_of(build(ad.Tensor(x, requires_grad=True)))), x0, step)
    np.testing.assert_allclose(t.grad, num, rtol=tol, atol=tol)


def test_add_mul_broadcast_grad():
    y = np.array([2.0, -1.0, 0.5])
    check_grad(lambda t: ad.sum(ad.mul(ad.add(t, y), t)), [1.0, 2.0, 3.0])


def test_unbroadcast_scalar_and_row():
    # scalar + matrix and row + matrix both reduce correctly on backward
    M = np.arange(6.0).reshape(2, 3)
    check_grad(lambda t: ad.sum(ad.add(t, M) ** 2), 1.5)
    check_grad(lambda t: ad.sum(ad.add(t, M) ** 2), [1.0, -2.0, 0.5])


def test_matmul_all_dim_cases():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    v = np.array([0.5, -1.0])
    check_grad(lambda t: ad.sum(ad.matmul(t, A)), [[1.0, 0.0], [2.0, 1.0]])
    check_grad(lambda t: ad.sum(ad.matmul(A, t)), [[1.0, 0.0], [2.0, 1.0]])
    check_grad(lambda t: ad.sum(ad.matmul(t, v)), [[1.0, 0.0], [2.0, 1.0]])
    check_grad(lambda t: ad.sum(ad.matmul(v, t)), [[1.0, 0.0], [2.0, 1.0]])
    check_grad(lambda t: ad.matmul(t, v), [1.0, 2.0])  # vec . vec -> scalar


def test_elementwise_ops_grad():
    x0 = [0.3, -0.7, 1.2]
    check_grad(lambda t: ad.sum(ad.exp(t)), x0)
    check_grad(lambda t: ad.sum(ad.log(ad.exp(t) + 2.0)), x0)
    check_grad(lambda t: ad.sum(ad.cos(t)), x0)
    check_grad(lambda t: ad.sum(ad.sigmoid(t)), x0)
    check_grad(lambda t: ad.sum(ad.softplus(t)), x0)
    check_grad(lambda t: ad.sum(ad.div(1.0, ad.exp(t) + 3.0)), x0)
    check_grad(lambda t: ad.sum(t ** 3), x0)


def test_relu_and_maximum_grad_away_from_kink():
    x0 = [0.5, -0.8, 2.0]
    check_grad(lambda t: ad.sum(ad.relu(t)), x0)
    check_grad(lambda t: ad.sum(ad.maximum(t, 0.1)), x0)


def test_getitem_scatter_accumulates():
    # the same index twice must add both contributions
    t = ad.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    loss = ad.sum(t[np.array([0, 0, 2])] ** 2)
    loss.backward()
    np.testing.assert_allclose(t.grad, [4.0, 0.0, 6.0])


def test_take_rows_grad():
    idx = np.array([2, 0])
    check_grad(
        lambda t: ad.sum(ad.take_rows(t, idx) ** 2),
        np.arange(6.0).reshape(3, 2) + 0.5,
    )


def test_reshape_transpose_grad():
    x0 = np.arange(6.0).reshape(2, 3)
    check_grad(lambda t: ad.sum(ad.reshape(t, (3, 2)) ** 2), x0)
    check_grad(lambda t: ad.sum(ad.transpose(t) ** 2), x0)


def test_diamond_graph_topological_order():
    # z = x*x used twice; d/dx (x^2 + x^2) = 4x
    t = ad.Tensor(np.array(3.0), requires_grad=True)
    sq = ad.mul(t, t)
    loss = ad.add(sq, sq)
    loss.backward()
    assert float(t.grad) == pytest.approx(12.0)


def test_sigmoid_grad_at_zero_is_quarter():
    t = ad.Tensor(np.array(0.0), requires_grad=True)
    ad.sigmoid(t).backward()
    assert float(t.grad) == pytest.approx(0.25, abs=1e-12)


def test_half_square_grad_is_identity():
    t = ad.Tensor(np.array(3.0), requires_grad=True)
    (0.5 * t * t).backward()
    assert float(t.grad) == pytest.approx(3.0)


def test_spd_solve_grad_wrt_matrix_and_rhs():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(4, 4))
    K0 = B @ B.T + 4.0 * np.eye(4)
    b = rng.normal(size=4)

    def build_k(t):
        sym = 0.5 * (t + ad.transpose(t))
        return ad.sum(ad.spd_solve(sym, 1e-2, b) ** 2)

    check_grad(build_k, K0, step=1e-5, tol=5e-5)

    def build_b(t):
        return ad.sum(ad.spd_solve(K0, 1e-2, t) ** 2)

    check_grad(build_b, b)


def test_spd_solve_matrix_rhs_grad():
    rng = np.random.default_rng(1)
    B = rng.normal(size=(3, 3))
    K0 = B @ B.T + 3.0 * np.eye(3)
    R = rng.normal(size=(3, 2))
    check_grad(lambda t: ad.sum(ad.spd_solve(K0, 1e-3, t) ** 2), R)


def test_numpy_ufuncs_refuse_tensors():
    t = ad.Tensor(np.array([1.0]))
    with pytest.raises(TypeError):
        np.sin(t)


def test_plain_arrays_fall_through():
    out = ad.add(np.array([1.0]), np.array([2.0]))
    assert isinstance(out, np.ndarray)
    assert not ad.is_tensor(out)


def test_backward_requires_scalar():
    t = ad.Tensor(np.ones(3))
    with pytest.raises(ValueError):
        ad.exp(t).backward()


def test_spd_factor_solve_matches_numpy():
    rng = np.random.default_rng(2)
    B = rng.normal(size=(5, 5))
    K = B @ B.T + 5.0 * np.eye(5)
    f = spd_factor(K, 1e-3)
    assert f.chol.shape == (5, 5)
    b = rng.normal(size=5)
    x = ad.spd_solve(K, 1e-3, b)
    np.testing.assert_allclose(x, np.linalg.solve(K + 1e-3 * np.eye(5), b),
                               rtol=1e-12, atol=1e-12)
