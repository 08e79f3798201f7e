# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense kernels.

Every reduction runs with its summation index ascending from a 0.0
accumulator, the same order as the naive reference loops. Built with
``-ffp-contract=off`` so multiply-add pairs are never fused.
"""
import numpy as np

from libc.math cimport exp, tanh, log1p, fabs

cdef double LEAKY_SLOPE = 0.2
cdef double SELU_ALPHA = 1.6732632423543772848170429916717
cdef double SELU_SCALE = 1.0507009873554804934193349852946


cdef inline double _sigm(double z) nogil:
    cdef double t
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    t = exp(z)
    return t / (1.0 + t)


cdef inline void _axpy(double *y, const double *x, double a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t t
    for t in range(n):
        y[t] = y[t] + a * x[t]


cdef inline double _act(int code, double z) nogil:
    if code == 0:
        return z
    elif code == 1:
        return z if z > 0.0 else 0.0
    elif code == 2:
        return z if z > 0.0 else LEAKY_SLOPE * z
    elif code == 3:
        return tanh(z)
    elif code == 4:
        return _sigm(z)
    elif code == 5:
        if z > 0.0:
            return z + log1p(exp(-z))
        return log1p(exp(z))
    elif code == 6:
        return z if z > 0.0 else exp(z) - 1.0
    elif code == 7:
        return SELU_SCALE * z if z > 0.0 else SELU_SCALE * SELU_ALPHA * (exp(z) - 1.0)
    else:
        return z * _sigm(z)


cdef inline double _dact(int code, double z) nogil:
    cdef double s, t
    if code == 0:
        return 1.0
    elif code == 1:
        return 1.0 if z > 0.0 else 0.0
    elif code == 2:
        return 1.0 if z > 0.0 else LEAKY_SLOPE
    elif code == 3:
        t = tanh(z)
        return 1.0 - t * t
    elif code == 4:
        s = _sigm(z)
        return s * (1.0 - s)
    elif code == 5:
        return _sigm(z)
    elif code == 6:
        return 1.0 if z > 0.0 else exp(z)
    elif code == 7:
        return SELU_SCALE if z > 0.0 else SELU_SCALE * SELU_ALPHA * exp(z)
    else:
        s = _sigm(z)
        return s + z * s * (1.0 - s)


def matmul(const double[:, ::1] a, const double[:, ::1] b, bint add_one=False):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], p = b.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    out = np.empty((n, p), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(n):
            for j in range(p):
                acc = 0.0
                for k in range(m):
                    acc = acc + a[i, k] * b[k, j]
                if add_one:
                    c[i, j] = acc + 1.0
                else:
                    c[i, j] = acc
    return out


def hadamard(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(n):
            for j in range(m):
                c[i, j] = a[i, j] * b[i, j]
    return out


def reduce_sum_all(const double[:, ::1] a):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, j
    cdef double acc = 0.0
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = acc + a[i, j]
    return acc


def activate(const double[:, ::1] z, int code):
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(n):
            for j in range(m):
                c[i, j] = _act(code, z[i, j])
    return out


def activate_grad(const double[:, ::1] z, int code):
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(n):
            for j in range(m):
                c[i, j] = _dact(code, z[i, j])
    return out


cdef void _gemm(double *z, const double *w, const double *x, Py_ssize_t M, Py_ssize_t N,
                Py_ssize_t P) noexcept nogil:
    # z (M x P) = w (M x N) x (N x P); every entry sums over its inner index
    # ascending from 0.0. Full 4 x 8 tiles accumulate in a local array so the
    # compiler can keep them in registers.
    cdef double acc[32]
    cdef double a0, a1, a2, a3, s
    cdef const double *xp
    cdef Py_ssize_t i, t, j, u, r
    i = 0
    while i < M:
        t = 0
        while t < P:
            if i + 4 <= M and t + 8 <= P:
                for u in range(32):
                    acc[u] = 0.0
                for j in range(N):
                    xp = x + j * P + t
                    a0 = w[i * N + j]
                    a1 = w[(i + 1) * N + j]
                    a2 = w[(i + 2) * N + j]
                    a3 = w[(i + 3) * N + j]
                    for u in range(8):
                        acc[u] = acc[u] + a0 * xp[u]
                        acc[8 + u] = acc[8 + u] + a1 * xp[u]
                        acc[16 + u] = acc[16 + u] + a2 * xp[u]
                        acc[24 + u] = acc[24 + u] + a3 * xp[u]
                for r in range(4):
                    for u in range(8):
                        z[(i + r) * P + t + u] = acc[r * 8 + u]
                t += 8
            else:
                for r in range(i, min(i + 4, M)):
                    for u in range(t, min(t + 8, P)):
                        s = 0.0
                        for j in range(N):
                            s = s + w[r * N + j] * x[j * P + u]
                        z[r * P + u] = s
                t += 8
        i += 4


def forward_batch(const double[:, :, ::1] x0, const double[:, :, ::1] kernels,
                  const double[::1] w_out, double bias, int code):
    """Batched PIN forward pass plus output head.

    Returns ``(xs, zs, logits)`` with ``xs[l]`` the layer-l feature maps
    (``xs[0]`` is the input) and ``zs[l]`` the pre-activation aggregates.
    """
    cdef Py_ssize_t B = x0.shape[0], R = x0.shape[1], C = x0.shape[2]
    cdef Py_ssize_t L = kernels.shape[0]
    cdef Py_ssize_t b, l, i, k
    cdef double acc, a
    xs_arr = np.empty((L + 1, B, R, C), dtype=np.float64)
    zs_arr = np.empty((L, B, R, C), dtype=np.float64)
    logits_arr = np.empty(B, dtype=np.float64)
    cdef double[:, :, :, ::1] xs = xs_arr
    cdef double[:, :, :, ::1] zs = zs_arr
    cdef double[::1] logits = logits_arr
    cdef double[::1] v = np.empty(max(C, 1), dtype=np.float64)
    if B == 0 or R == 0:
        return xs_arr, zs_arr, np.full(B, bias * <double>C)
    with nogil:
        for b in range(B):
            for i in range(R):
                for k in range(C):
                    xs[0, b, i, k] = x0[b, i, k]
            for l in range(L):
                _gemm(&zs[l, b, 0, 0], &kernels[l, 0, 0], &x0[b, 0, 0], R, R, C)
                for i in range(R):
                    for k in range(C):
                        acc = zs[l, b, i, k]
                        if code == 0:
                            a = acc + 1.0
                        else:
                            a = _act(code, acc) + 1.0
                        xs[l + 1, b, i, k] = xs[l, b, i, k] * a
            for k in range(C):
                v[k] = 0.0
            for i in range(R):
                _axpy(&v[0], &xs[L, b, i, 0], w_out[i], C)
            acc = 0.0
            for k in range(C):
                acc = acc + v[k]
            logits[b] = acc + bias * <double>C
    return xs_arr, zs_arr, logits_arr


def backward_batch(const double[:, :, ::1] x0, const double[:, :, ::1] kernels,
                   const double[::1] w_out, const double[:, :, :, ::1] xs,
                   const double[:, :, :, ::1] zs, const double[::1] deltas, int code):
    """Reverse pass for a batch; ``deltas`` are per-example logit cotangents.

    Returns ``(d_kernels, d_w_out, d_bias, d_x0)``. Parameter gradients are
    per-example gradients summed in example order.
    """
    cdef Py_ssize_t B = x0.shape[0], R = x0.shape[1], C = x0.shape[2]
    cdef Py_ssize_t L = kernels.shape[0]
    cdef Py_ssize_t b, l, i, j, k
    cdef double acc, d, a, z
    dk_arr = np.zeros((L, R, R), dtype=np.float64)
    dw_arr = np.zeros(R, dtype=np.float64)
    dx_arr = np.zeros((B, R, C), dtype=np.float64)
    cdef double[:, :, ::1] dk = dk_arr
    cdef double[::1] dw = dw_arr
    cdef double[:, :, ::1] dx = dx_arr
    n = max(R, 1)
    m = max(C, 1)
    cdef double[:, ::1] g = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] dz = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] x0t = np.empty((m, n), dtype=np.float64)
    cdef double[::1] t = np.empty(n * max(n, m), dtype=np.float64)
    cdef double[:, :, ::1] kt = np.ascontiguousarray(np.transpose(kernels, (0, 2, 1)))
    cdef double db = 0.0
    if R == 0:
        return dk_arr, dw_arr, float(np.sum(np.asarray(deltas) * C)), dx_arr
    with nogil:
        for b in range(B):
            d = deltas[b]
            db = db + d * <double>C
            for j in range(R):
                for k in range(C):
                    x0t[k, j] = x0[b, j, k]
            for i in range(R):
                acc = 0.0
                for k in range(C):
                    acc = acc + xs[L, b, i, k]
                dw[i] = dw[i] + d * acc
                for k in range(C):
                    g[i, k] = d * w_out[i]
            for l in range(L - 1, -1, -1):
                for i in range(R):
                    for k in range(C):
                        z = zs[l, b, i, k]
                        if code == 0:
                            dz[i, k] = g[i, k] * xs[l, b, i, k]
                        else:
                            dz[i, k] = g[i, k] * xs[l, b, i, k] * _dact(code, z)
                # d_kernels[i, :] += sum over k ascending of dz[i, k] * x0[:, k]
                _gemm(&t[0], &dz[0, 0], &x0t[0, 0], R, C, R)
                for i in range(R):
                    for j in range(R):
                        dk[l, i, j] = dk[l, i, j] + t[i * R + j]
                # d_x0[j, :] += sum over i ascending of w[i, j] * dz[i, :]
                _gemm(&t[0], &kt[l, 0, 0], &dz[0, 0], R, R, C)
                for j in range(R):
                    for k in range(C):
                        dx[b, j, k] = dx[b, j, k] + t[j * C + k]
                for i in range(R):
                    for k in range(C):
                        z = zs[l, b, i, k]
                        if code == 0:
                            a = z + 1.0
                        else:
                            a = _act(code, z) + 1.0
                        g[i, k] = g[i, k] * a
            for i in range(R):
                for k in range(C):
                    dx[b, i, k] = dx[b, i, k] + g[i, k]
    return dk_arr, dw_arr, db, dx_arr
