"""Dense linear-algebra kernels.

A ``Matrix`` is a C-contiguous two-dimensional ``float64`` NumPy array.
Nothing broadcasts: every operation checks shapes and raises
:class:`ShapeError` on any mismatch. Reductions accumulate in ascending
index order, so results are reproducible bit for bit.
"""
import numpy as np

from ._backend import kernels as _k

SIGMOID_EPS = 1e-12

ACTIVATIONS = {
    "linear": 0,
    "relu": 1,
    "leaky_relu": 2,
    "tanh": 3,
    "sigmoid": 4,
    "softplus": 5,
    "elu": 6,
    "selu": 7,
    "swish": 8,
}


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's shape rule."""


def as_matrix(a):
    """Return ``a`` as a C-contiguous 2-D float64 array (no copy if already one)."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def zeros(rows, cols):
    return np.zeros((rows, cols))


def ones(rows, cols):
    return np.ones((rows, cols))


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape {a.shape} does not match {b.shape}")


def matmul(a, b):
    """Matrix product, ``c[i][j] = sum_k a[i][k] * b[k][j]``."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _k.matmul(a, b, False)


def matmul_add_one(w, x):
    """``matmul(w, x)`` with 1.0 added to every entry, fused in one pass."""
    w, x = as_matrix(w), as_matrix(x)
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"matmul_add_one: cannot multiply {w.shape} by {x.shape}")
    return _k.matmul(w, x, True)


def hadamard(a, b):
    a, b = as_matrix(a), as_matrix(b)
    _same_shape(a, b, "hadamard")
    return _k.hadamard(a, b)


def transpose(a):
    return np.ascontiguousarray(as_matrix(a).T)


def scale_add(a, alpha, b, beta):
    """Entry-wise ``alpha * a + beta * b``."""
    a, b = as_matrix(a), as_matrix(b)
    _same_shape(a, b, "scale_add")
    return alpha * a + beta * b


def reduce_sum_all(a):
    """Sum of all entries, accumulated in row-major order."""
    return _k.reduce_sum_all(as_matrix(a))


def _code(activation):
    try:
        return ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None


def activate(z, activation):
    return _k.activate(as_matrix(z), _code(activation))


def activate_grad(z, activation):
    """Derivative of ``activation`` evaluated entry-wise at ``z``."""
    return _k.activate_grad(as_matrix(z), _code(activation))


def sigmoid(s):
    """Logistic function clamped into ``[1e-12, 1 - 1e-12]``."""
    # shares the array path so single and batched predictions agree bitwise
    return float(sigmoid_array(np.array([s], dtype=np.float64))[0])


def sigmoid_array(s):
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    pos = s >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    t = np.exp(s[~pos])
    out[~pos] = t / (1.0 + t)
    return np.clip(out, SIGMOID_EPS, 1.0 - SIGMOID_EPS)
