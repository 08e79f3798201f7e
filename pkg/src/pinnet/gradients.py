"""Analytic reverse pass for log loss.

With ``delta = yhat - y`` the logit cotangent, the head seeds
``G_L[i, k] = delta * W_out[i]`` and each layer ``l = L..1`` contributes::

    P       = G_l * X_{l-1} * act'(Z_{l-1})
    dW_{l-1} = P @ X_0.T
    dX_0   += W_{l-1}.T @ P
    G_{l-1} = G_l * A_{l-1}

finishing with ``dX_0 += G_0``. ``dX_0`` is un-stacked and scattered back
into the embedding rows that produced it.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import dense
from ._backend import kernels as _k
from .model import forward_batch, unstack, unstack_batch


class ConsistencyError(ValueError):
    """A trace does not belong to the parameters it is differentiated against."""


@dataclass
class SparseRows:
    """Gradient rows for one embedding table: distinct row ids and their sums."""

    rows: np.ndarray
    values: np.ndarray


@dataclass
class GradientSet:
    d_pin_kernels: list
    d_out_weights: np.ndarray
    d_bias: float
    d_embeddings: list = field(default_factory=list)

    def entries(self):
        """Iterate ``(field, row, vector)`` triples of the sparse embedding part."""
        for f, sr in enumerate(self.d_embeddings):
            for r, v in zip(sr.rows, sr.values):
                yield f, int(r), v

    def dense_embeddings(self, cardinalities):
        out = []
        for sr, c in zip(self.d_embeddings, cardinalities):
            d = np.zeros((int(c), sr.values.shape[1] if sr.values.ndim == 2 else 0))
            d[sr.rows] = sr.values
            out.append(d)
        return out


def loss(y, yhat):
    """Log loss of one prediction, clamped away from 0 and 1."""
    p = min(max(yhat, dense.SIGMOID_EPS), 1.0 - dense.SIGMOID_EPS)
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def mean_loss(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(yhat, dtype=np.float64), dense.SIGMOID_EPS, 1.0 - dense.SIGMOID_EPS)
    # correctly rounded sum: duplicating the data leaves the mean unchanged
    return math.fsum(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))) / len(y)


def _sparse_rows(rows, values):
    uniq, inverse = np.unique(rows, return_inverse=True)
    acc = np.zeros((len(uniq), values.shape[1]))
    np.add.at(acc, inverse, values)  # adds in example order
    return SparseRows(uniq, acc)


def backward(trace, y, params, config, indices=None):
    """Gradient of one example's log loss with respect to every parameter.

    ``indices`` (the example's hot indices) places the embedding gradient;
    without it ``d_embeddings`` is left empty and the stacked input
    cotangent is still available via :func:`input_gradient`.
    """
    L = config.pin_layers
    if (len(trace.layer_outputs) != L or len(params.pin_kernels) != L
            or trace.x0_stacked.shape != (config.stacked_rows, config.stacked_cols)
            or params.out_weights.shape != (1, config.stacked_rows)):
        raise ConsistencyError("trace and parameters disagree on layer count or shapes")
    grads, dx0 = _backward_stacked(trace, y, params, config)
    if indices is not None:
        d_x = unstack(dx0, config.subspaces)
        grads.d_embeddings = [SparseRows(np.array([idx], dtype=np.int64), d_x[f:f + 1].copy())
                              for f, idx in enumerate(indices)]
    return grads


def input_gradient(trace, y, params, config):
    """Cotangent of the loss with respect to the stacked input ``X'_0``."""
    return _backward_stacked(trace, y, params, config)[1]


def _backward_stacked(trace, y, params, config):
    delta = trace.prediction - y
    x0 = trace.x0_stacked
    R, C = x0.shape
    xl = trace.output
    rowsum = dense.matmul(xl, dense.ones(C, 1))
    d_out = delta * dense.transpose(rowsum)
    g = dense.matmul(dense.transpose(params.out_weights), dense.ones(1, C)) * delta
    dx0 = dense.zeros(R, C)
    x0t = dense.transpose(x0)
    d_kernels = [None] * config.pin_layers
    for l in range(config.pin_layers, 0, -1):
        p = dense.hadamard(g, trace.layer(l - 1))
        if config.activation != "linear":
            p = dense.hadamard(p, dense.activate_grad(trace.pre_activations[l - 1],
                                                      config.activation))
        d_kernels[l - 1] = dense.matmul(p, x0t)
        dx0 = dense.scale_add(dx0, 1.0, dense.matmul(dense.transpose(params.pin_kernels[l - 1]), p),
                              1.0)
        g = dense.hadamard(g, trace.aggregates[l - 1])
    dx0 = dense.scale_add(dx0, 1.0, g, 1.0)
    return GradientSet(d_kernels, d_out, delta * float(C)), dx0


def batch_gradients(indices, labels, params, config):
    """Mean log loss and its gradient over a batch.

    Returns ``(loss, grads, predictions)``. Embedding gradients are summed
    per distinct row in example order.
    """
    indices = np.asarray(indices, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty batch")
    x0, xs, zs, logits = forward_batch(indices, params, config)
    preds = dense.sigmoid_array(logits)
    deltas = (preds - labels) / float(n)
    kernels = params.stacked_kernels(config)
    dk, dw, db, dx = _k.backward_batch(x0, kernels, np.ascontiguousarray(params.out_weights[0]),
                                       xs, zs, deltas, config.act_code)
    d_x = unstack_batch(dx, config.subspaces)
    d_emb = [_sparse_rows(indices[:, f], d_x[:, f, :]) for f in range(config.field_count)]
    grads = GradientSet([dk[l].copy() for l in range(config.pin_layers)],
                        dw.reshape(1, -1).copy(), float(db), d_emb)
    return mean_loss(labels, preds), grads, preds
