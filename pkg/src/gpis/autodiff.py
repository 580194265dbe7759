"""Minimal reverse-mode automatic differentiation over numpy arrays.

The package's differentiable path is small (a two-layer perceptron, kernel
Gram matrices, Fourier features, jittered Cholesky solves and two losses), so
instead of pulling in a deep-learning framework we record a flat tape of
vectorized numpy operations and replay it backwards.  Every op below also
accepts plain ndarrays and then simply computes the numpy result, which lets
the model code share one implementation between inference and training.

Gradients are validated against central finite differences in the test
suite; the solve op uses the adjoint identity
``d(K^-1 b) = K^-1 (db - dK K^-1 b)``.
"""

from __future__ import annotations

import numpy as np

from . import linalg


class Tensor:
    """A node in the reverse-mode tape.

    ``value`` is always a float64 ndarray.  ``_vjp`` maps the output gradient
    to a tuple of gradients aligned with ``_parents``.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    # Keep numpy from consuming Tensors in mixed expressions so that the
    # reflected operators below run instead.
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def backward(self):
        """Accumulate gradients of this scalar into every upstream Tensor."""
        if self.value.size != 1:
            raise ValueError("backward() is only defined for scalar outputs")
        order = _toposort(self)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                g = _unbroadcast(g, parent.value.shape)
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    @property
    def T(self):
        return transpose(self)


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape of the input it broadcast from."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value_of(x) -> np.ndarray:
    """The plain ndarray behind either a Tensor or an array-like."""
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_node(x):
    """Pass Tensors through; coerce anything else to a float64 ndarray."""
    if isinstance(x, Tensor):
        return x
    return np.asarray(x, dtype=np.float64)


# -- arithmetic -------------------------------------------------------------


def add(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.add(a, b)
    a, b = _wrap(a), _wrap(b)
    return Tensor(
        a.value + b.value, _parents=(a, b), _vjp=lambda g: (g, g)
    )


def sub(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.subtract(a, b)
    a, b = _wrap(a), _wrap(b)
    return Tensor(
        a.value - b.value, _parents=(a, b), _vjp=lambda g: (g, -g)
    )


def mul(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.multiply(a, b)
    a, b = _wrap(a), _wrap(b)
    return Tensor(
        a.value * b.value,
        _parents=(a, b),
        _vjp=lambda g: (g * b.value, g * a.value),
    )


def div(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.divide(a, b)
    a, b = _wrap(a), _wrap(b)
    return Tensor(
        a.value / b.value,
        _parents=(a, b),
        _vjp=lambda g: (g / b.value, -g * a.value / (b.value * b.value)),
    )


def power(a, exponent: float):
    if not is_tensor(a):
        return np.power(a, exponent)
    exponent = float(exponent)
    val = np.power(a.value, exponent)

    def vjp(g):
        return (g * exponent * np.power(a.value, exponent - 1.0),)

    return Tensor(val, _parents=(a,), _vjp=vjp)


def matmul(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.matmul(a, b)
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    val = av @ bv

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av  # 1-D dot product

    return Tensor(val, _parents=(a, b), _vjp=vjp)


# -- elementwise ------------------------------------------------------------


def exp(x):
    if not is_tensor(x):
        return np.exp(x)
    val = np.exp(x.value)
    return Tensor(val, _parents=(x,), _vjp=lambda g: (g * val,))


def log(x):
    if not is_tensor(x):
        return np.log(x)
    return Tensor(np.log(x.value), _parents=(x,), _vjp=lambda g: (g / x.value,))


def cos(x):
    if not is_tensor(x):
        return np.cos(x)
    return Tensor(
        np.cos(x.value), _parents=(x,), _vjp=lambda g: (-g * np.sin(x.value),)
    )


def sigmoid(x):
    xv = value_of(x)
    # Stable on both tails: sigmoid(x) = exp(-softplus(-x)).
    val = np.exp(-_softplus_np(-xv))
    if not is_tensor(x):
        return val
    return Tensor(val, _parents=(x,), _vjp=lambda g: (g * val * (1.0 - val),))


def _softplus_np(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softplus(x):
    if not is_tensor(x):
        return _softplus_np(np.asarray(x, dtype=np.float64))
    val = _softplus_np(x.value)
    sig = np.exp(-_softplus_np(-x.value))
    return Tensor(val, _parents=(x,), _vjp=lambda g: (g * sig,))


def relu(x):
    if not is_tensor(x):
        return np.maximum(x, 0.0)
    mask = x.value > 0.0
    return Tensor(
        np.where(mask, x.value, 0.0), _parents=(x,), _vjp=lambda g: (g * mask,)
    )


def maximum(x, floor: float):
    """Elementwise max with a constant; gradient flows where x wins."""
    if not is_tensor(x):
        return np.maximum(x, floor)
    mask = x.value > floor
    return Tensor(
        np.maximum(x.value, floor), _parents=(x,), _vjp=lambda g: (g * mask,)
    )


# -- shape ------------------------------------------------------------------


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    if not is_tensor(x):
        return np.sum(x, axis=axis, keepdims=keepdims)
    val = np.sum(x.value, axis=axis, keepdims=keepdims)
    shape = x.value.shape

    def vjp(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, shape),)

    return Tensor(val, _parents=(x,), _vjp=vjp)


def reshape(x, shape):
    if not is_tensor(x):
        return np.reshape(x, shape)
    orig = x.value.shape
    return Tensor(
        x.value.reshape(shape),
        _parents=(x,),
        _vjp=lambda g: (np.asarray(g).reshape(orig),),
    )


def transpose(x):
    if not is_tensor(x):
        return np.transpose(x)
    return Tensor(
        x.value.T, _parents=(x,), _vjp=lambda g: (np.asarray(g).T,)
    )


def getitem(x, key):
    if not is_tensor(x):
        return np.asarray(x)[key]
    val = x.value[key]

    def vjp(g):
        out = np.zeros_like(x.value)
        np.add.at(out, key, g)
        return (out,)

    return Tensor(val, _parents=(x,), _vjp=vjp)


def take_rows(x, indices):
    """Row gather; duplicate indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    return getitem(x, idx) if is_tensor(x) else np.asarray(x)[idx]


# -- linear algebra ---------------------------------------------------------


def spd_solve(K, eps2: float, B):
    """(K + eps2*I)^-1 B with reverse-mode support.

    The factorization is shared between the forward solve and the two solves
    in the adjoint, so a backward pass costs two extra triangular solves.
    """
    if not (is_tensor(K) or is_tensor(B)):
        return linalg.spd_solve(value_of(K), eps2, value_of(B))
    Kv, Bv = value_of(K), value_of(B)
    factor = linalg.spd_factor(Kv, eps2)
    X = linalg.factor_solve(factor, Bv)
    K_t, B_t = _wrap(K), _wrap(B)

    def vjp(g):
        S = linalg.factor_solve(factor, np.asarray(g, dtype=np.float64))
        if X.ndim == 1:
            gK = -np.outer(S, X)
        else:
            gK = -(S @ X.T)
        return gK, S

    return Tensor(X, _parents=(K_t, B_t), _vjp=vjp)
