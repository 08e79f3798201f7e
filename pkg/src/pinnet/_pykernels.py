"""NumPy implementations of the compiled kernels.

Used when the extension is not built, or when ``PINNET_BACKEND=python``.
The small dense kernels keep the reference summation order (so they are
bitwise equal to the compiled ones); the batched PIN kernels hand the
aggregation products to BLAS and agree to rounding only.
"""
import numpy as np

LEAKY_SLOPE = 0.2
SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


def _sigm(z):
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    t = np.exp(z[~pos])
    out[~pos] = t / (1.0 + t)
    return out


def _act(code, z):
    if code == 0:
        return z.copy()
    if code == 1:
        return np.where(z > 0.0, z, 0.0)
    if code == 2:
        return np.where(z > 0.0, z, LEAKY_SLOPE * z)
    if code == 3:
        return np.tanh(z)
    if code == 4:
        return _sigm(z)
    if code == 5:
        return np.where(z > 0.0, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(-np.abs(z))))
    if code == 6:
        return np.where(z > 0.0, z, np.exp(np.minimum(z, 0.0)) - 1.0)
    if code == 7:
        neg = SELU_SCALE * SELU_ALPHA * (np.exp(np.minimum(z, 0.0)) - 1.0)
        return np.where(z > 0.0, SELU_SCALE * z, neg)
    return z * _sigm(z)


def _dact(code, z):
    if code == 0:
        return np.ones_like(z)
    if code == 1:
        return np.where(z > 0.0, 1.0, 0.0)
    if code == 2:
        return np.where(z > 0.0, 1.0, LEAKY_SLOPE)
    if code == 3:
        t = np.tanh(z)
        return 1.0 - t * t
    if code == 4:
        s = _sigm(z)
        return s * (1.0 - s)
    if code == 5:
        return _sigm(z)
    if code == 6:
        return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))
    if code == 7:
        return np.where(z > 0.0, SELU_SCALE, SELU_SCALE * SELU_ALPHA * np.exp(np.minimum(z, 0.0)))
    s = _sigm(z)
    return s + z * s * (1.0 - s)


def matmul(a, b, add_one=False):
    # one rank-1 update per inner index: each entry accumulates in k order
    c = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        c += a[:, k:k + 1] * b[k:k + 1, :]
    if add_one:
        c += 1.0
    return c


def hadamard(a, b):
    return a * b


def reduce_sum_all(a):
    if a.size == 0:
        return 0.0
    return float(np.cumsum(a.ravel())[-1])


def activate(z, code):
    return _act(code, z)


def activate_grad(z, code):
    return _dact(code, z)


def _head(x, w_out, bias):
    B, R, C = x.shape
    v = np.zeros((B, C))
    for i in range(R):
        v += w_out[i] * x[:, i, :]
    if C == 0:
        return np.full(B, bias * C)
    return np.cumsum(v, axis=1)[:, -1] + bias * float(C)


def forward_batch(x0, kernels, w_out, bias, code):
    L = kernels.shape[0]
    B, R, C = x0.shape
    xs = np.empty((L + 1, B, R, C))
    zs = np.empty((L, B, R, C))
    xs[0] = x0
    for l in range(L):
        z = np.matmul(kernels[l], x0)
        zs[l] = z
        a = z + 1.0 if code == 0 else _act(code, z) + 1.0
        xs[l + 1] = xs[l] * a
    return xs, zs, _head(xs[L], w_out, bias)


def backward_batch(x0, kernels, w_out, xs, zs, deltas, code):
    L = kernels.shape[0]
    B, R, C = x0.shape
    d = deltas[:, None, None]
    db = float(np.sum(deltas * float(C)))
    dw = np.einsum("b,bi->i", deltas, xs[L].sum(axis=2))
    g = d * w_out[None, :, None]
    dk = np.zeros((L, R, R))
    dx = np.zeros((B, R, C))
    x0_flat = x0.transpose(1, 0, 2).reshape(R, B * C)
    for l in range(L - 1, -1, -1):
        dz = g * xs[l]
        if code != 0:
            dz = dz * _dact(code, zs[l])
        dk[l] = dz.transpose(1, 0, 2).reshape(R, B * C) @ x0_flat.T
        dx += np.matmul(kernels[l].T, dz)
        a = zs[l] + 1.0 if code == 0 else _act(code, zs[l]) + 1.0
        g = g * a
    dx += g
    return dk, dw, db, dx
