"""Parameter updates: FTRL-Proximal, group-lasso FTRL and Adam.

The FTRL variants are lazy: only coordinates (or embedding rows) with a
nonzero gradient this step are touched, so untouched weights keep their
values. Each ``*_apply`` mutates its state in place and returns the
updated weights; a non-finite gradient raises :class:`NumericError`
before anything is modified.
"""
import math
from dataclasses import dataclass, field

import numpy as np


class NumericError(FloatingPointError):
    pass


def _check_finite(grads, what):
    if not np.all(np.isfinite(grads)):
        raise NumericError(f"non-finite gradient for {what}; step rejected")


@dataclass
class FtrlState:
    z: np.ndarray
    n: np.ndarray
    alpha: float = 0.01
    beta: float = 1.0
    lambda1: float = 0.001
    lambda2: float = 0.001

    @classmethod
    def zeros(cls, shape, **hypers):
        return cls(np.zeros(shape), np.zeros(shape), **hypers)


@dataclass
class GroupFtrlState:
    """FTRL state for an embedding table, thresholded row by row."""

    z: np.ndarray
    n: np.ndarray
    alpha: float = 0.01
    beta: float = 1.0
    lambda1: float = 0.001
    lambda2: float = 0.001

    @classmethod
    def zeros(cls, shape, **hypers):
        return cls(np.zeros(shape), np.zeros(shape), **hypers)

    @property
    def group_threshold(self):
        return self.lambda1 * math.sqrt(self.z.shape[1])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def zeros(cls, shape, **hypers):
        return cls(np.zeros(shape), np.zeros(shape), **hypers)


def ftrl_apply(state, weights, grads):
    """One FTRL-Proximal step on the coordinates with nonzero gradient.

    Per coordinate: ``sigma = (sqrt(n + g^2) - sqrt(n)) / alpha``,
    ``z += g - sigma * w``, ``n += g^2``; then ``w = 0`` when
    ``|z| <= lambda1`` and otherwise
    ``w = -(z - sign(z) * lambda1) / ((beta + sqrt(n)) / alpha + lambda2)``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if weights.shape != grads.shape or state.z.shape != weights.shape:
        raise ValueError(f"shape mismatch: weights {weights.shape}, grads {grads.shape}, "
                         f"state {state.z.shape}")
    _check_finite(grads, "ftrl")
    out = weights.copy()
    mask = grads != 0.0
    if not mask.any():
        return out
    g = grads[mask]
    w = weights[mask]
    n_old = state.n[mask]
    n_new = n_old + g * g
    sigma = (np.sqrt(n_new) - np.sqrt(n_old)) / state.alpha
    z = state.z[mask] + g - sigma * w
    state.z[mask] = z
    state.n[mask] = n_new
    denom = (state.beta + np.sqrt(n_new)) / state.alpha + state.lambda2
    w_new = -(z - np.sign(z) * state.lambda1) / denom
    w_new[np.abs(z) <= state.lambda1] = 0.0
    out[mask] = w_new + 0.0  # no negative zeros
    return out


def group_ftrl_apply(state, table, rows, row_grads):
    """One group-lasso FTRL step on the listed embedding rows.

    Coordinates accumulate ``z`` and ``n`` exactly as in :func:`ftrl_apply`.
    A row whose ``||z||_2 <= lambda1 * sqrt(K)`` becomes all zero; any other
    row is shrunk toward zero as a group,
    ``w_i = -(z_i - z_i/||z|| * lambda1*sqrt(K)) / ((beta + sqrt(n_i)) / alpha + lambda2)``.
    Rows whose gradient is entirely zero are skipped.
    """
    table = np.asarray(table, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    row_grads = np.asarray(row_grads, dtype=np.float64).reshape(len(rows), table.shape[1])
    if state.z.shape != table.shape:
        raise ValueError(f"state shape {state.z.shape} does not match table {table.shape}")
    if len(np.unique(rows)) != len(rows):
        raise ValueError("duplicate rows in sparse gradient")
    _check_finite(row_grads, "group ftrl")
    out = table.copy()
    keep = np.any(row_grads != 0.0, axis=1)
    rows, g = rows[keep], row_grads[keep]
    if len(rows) == 0:
        return out
    w = table[rows]
    n_old = state.n[rows]
    n_new = n_old + g * g
    sigma = (np.sqrt(n_new) - np.sqrt(n_old)) / state.alpha
    z = state.z[rows] + g - sigma * w
    state.z[rows] = z
    state.n[rows] = n_new
    t = state.group_threshold
    norm = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
    active = norm[:, 0] > t
    denom = (state.beta + np.sqrt(n_new)) / state.alpha + state.lambda2
    w_new = np.zeros_like(z)
    za, na = z[active], norm[active]
    w_new[active] = -(za - (za / na) * t) / denom[active]
    out[rows] = w_new + 0.0
    return out


def adam_apply(state, weights, grads):
    """Bias-corrected Adam step."""
    weights = np.asarray(weights, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if weights.shape != grads.shape or state.m.shape != weights.shape:
        raise ValueError(f"shape mismatch: weights {weights.shape}, grads {grads.shape}")
    _check_finite(grads, "adam")
    state.t += 1
    # overflow shows up as a non-finite loss on the next step, where the
    # training loop reports it
    with np.errstate(over="ignore", invalid="ignore"):
        state.m *= state.beta1
        state.m += (1.0 - state.beta1) * grads
        state.v *= state.beta2
        state.v += (1.0 - state.beta2) * grads * grads
        m_hat = state.m / (1.0 - state.beta1 ** state.t)
        v_hat = state.v / (1.0 - state.beta2 ** state.t)
        return weights - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sparsity_report(params, states=None):
    """``(feature_sparse_ratio, weight_sparse_ratio)`` by exact zero counting.

    Feature ratio: all-zero embedding rows over all rows. Weight ratio: zero
    PIN kernel entries over all kernel entries (0.0 when there are no layers).
    ``states`` is accepted for symmetry with the training loop and unused:
    materialized weights already carry every threshold decision.
    """
    total_rows = sum(e.shape[0] for e in params.embeddings)
    zero_rows = sum(int(np.count_nonzero(~np.any(e != 0.0, axis=1))) for e in params.embeddings)
    total_w = sum(w.size for w in params.pin_kernels)
    zero_w = sum(int(np.count_nonzero(w == 0.0)) for w in params.pin_kernels)
    feature = zero_rows / total_rows if total_rows else 0.0
    weight = zero_w / total_w if total_w else 0.0
    return feature, weight


@dataclass
class OptimizerBundle:
    """Optimizer states for every parameter of a model.

    ``kind`` is ``"gftrl_ftrl"`` (group FTRL on embeddings, FTRL elsewhere)
    or ``"adam"`` (Adam everywhere).
    """

    kind: str
    embeddings: list
    pin_kernels: list
    out_weights: object
    bias: object
    hypers: dict = field(default_factory=dict)

    @classmethod
    def create(cls, kind, params, alpha=0.01, beta=1.0, lambda1=0.001, lambda2=0.001,
               adam_lr=0.001, adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8):
        if kind == "gftrl_ftrl":
            hy = dict(alpha=alpha, beta=beta, lambda1=lambda1, lambda2=lambda2)
            return cls(kind,
                       [GroupFtrlState.zeros(e.shape, **hy) for e in params.embeddings],
                       [FtrlState.zeros(w.shape, **hy) for w in params.pin_kernels],
                       FtrlState.zeros(params.out_weights.shape, **hy),
                       FtrlState.zeros((1, 1), **hy), hy)
        if kind == "adam":
            hy = dict(lr=adam_lr, beta1=adam_beta1, beta2=adam_beta2, eps=adam_eps)
            return cls(kind,
                       [AdamState.zeros(e.shape, **hy) for e in params.embeddings],
                       [AdamState.zeros(w.shape, **hy) for w in params.pin_kernels],
                       AdamState.zeros(params.out_weights.shape, **hy),
                       AdamState.zeros((1, 1), **hy), hy)
        raise ValueError(f"unknown optimizer {kind!r}")

    def all_states(self):
        return [*self.embeddings, *self.pin_kernels, self.out_weights, self.bias]

    def step(self, params, grads):
        """Apply one update in place to ``params``.

        Every gradient is checked before any state changes, so a rejected
        step leaves the model and optimizer untouched.
        """
        for part in [*grads.d_pin_kernels, grads.d_out_weights, np.array([grads.d_bias]),
                     *(sr.values for sr in grads.d_embeddings)]:
            _check_finite(part, self.kind)
        if self.kind == "gftrl_ftrl":
            for f, sr in enumerate(grads.d_embeddings):
                params.embeddings[f] = group_ftrl_apply(self.embeddings[f], params.embeddings[f],
                                                        sr.rows, sr.values)
            for l, g in enumerate(grads.d_pin_kernels):
                params.pin_kernels[l] = ftrl_apply(self.pin_kernels[l], params.pin_kernels[l], g)
            params.out_weights = ftrl_apply(self.out_weights, params.out_weights,
                                            grads.d_out_weights)
            params.bias = float(ftrl_apply(self.bias, np.array([[params.bias]]),
                                           np.array([[grads.d_bias]]))[0, 0])
        else:
            for f, sr in enumerate(grads.d_embeddings):
                dense_g = np.zeros_like(params.embeddings[f])
                dense_g[sr.rows] = sr.values
                params.embeddings[f] = adam_apply(self.embeddings[f], params.embeddings[f], dense_g)
            for l, g in enumerate(grads.d_pin_kernels):
                params.pin_kernels[l] = adam_apply(self.pin_kernels[l], params.pin_kernels[l], g)
            params.out_weights = adam_apply(self.out_weights, params.out_weights,
                                            grads.d_out_weights)
            params.bias = float(adam_apply(self.bias, np.array([[params.bias]]),
                                           np.array([[grads.d_bias]]))[0, 0])
