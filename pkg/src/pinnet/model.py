"""Forward computation: embedding lookup, subspace restack, PIN layers, output head.

Each PIN layer computes ``X_l = X_{l-1} * (act(W_{l-1} X_0) + 1)`` on the
stacked ``(F*h) x (K/h)`` feature map, so the residual connection is folded
into the ``+ 1``. The head is ``sigmoid(sum(W_out X_L) + b*K/h)``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import dense
from ._backend import kernels as _k


class ConfigError(ValueError):
    pass


class EmbeddingLookupError(IndexError):
    """Embedding index outside its field's table."""


@dataclass(frozen=True)
class ModelConfig:
    field_count: int
    embedding_dim: int = 16
    pin_layers: int = 3
    subspaces: int = 1
    activation: str = "linear"

    def __post_init__(self):
        if self.field_count < 1 or self.embedding_dim < 1:
            raise ConfigError("field_count and embedding_dim must be positive")
        if self.pin_layers < 0:
            raise ConfigError("pin_layers must be >= 0")
        if self.subspaces < 1 or self.embedding_dim % self.subspaces:
            raise ConfigError(f"subspaces={self.subspaces} must divide "
                              f"embedding_dim={self.embedding_dim}")
        if self.activation not in dense.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def stacked_rows(self):
        return self.field_count * self.subspaces

    @property
    def stacked_cols(self):
        return self.embedding_dim // self.subspaces

    @property
    def act_code(self):
        return dense.ACTIVATIONS[self.activation]


@dataclass
class ModelParams:
    embeddings: list
    pin_kernels: list
    out_weights: np.ndarray
    bias: float = 0.0

    def copy(self):
        return ModelParams([e.copy() for e in self.embeddings],
                           [w.copy() for w in self.pin_kernels],
                           self.out_weights.copy(), float(self.bias))

    def check(self, config):
        R = config.stacked_rows
        if len(self.embeddings) != config.field_count:
            raise ConfigError(f"{len(self.embeddings)} embedding tables for "
                              f"{config.field_count} fields")
        for f, e in enumerate(self.embeddings):
            if e.ndim != 2 or e.shape[1] != config.embedding_dim:
                raise ConfigError(f"embedding table {f} has shape {e.shape}")
        if len(self.pin_kernels) != config.pin_layers:
            raise ConfigError(f"{len(self.pin_kernels)} kernels for {config.pin_layers} layers")
        for l, w in enumerate(self.pin_kernels):
            if w.shape != (R, R):
                raise ConfigError(f"kernel {l} has shape {w.shape}, expected {(R, R)}")
        if self.out_weights.shape != (1, R):
            raise ConfigError(f"out_weights has shape {self.out_weights.shape}, expected {(1, R)}")

    def stacked_kernels(self, config):
        R = config.stacked_rows
        if not self.pin_kernels:
            return np.zeros((0, R, R))
        return np.ascontiguousarray(np.stack(self.pin_kernels))


def init_params(config, cardinalities, seed=0):
    """Embeddings uniform in ``+-1/sqrt(K)``; kernels, head and bias zero.

    Zero kernels make the fresh model exactly the logistic-regression
    baseline (every layer passes ``X_0`` through unchanged).
    """
    if len(cardinalities) != config.field_count:
        raise ConfigError(f"{len(cardinalities)} cardinalities for {config.field_count} fields")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(config.embedding_dim)
    emb = [rng.uniform(-bound, bound, size=(int(c), config.embedding_dim)) for c in cardinalities]
    R = config.stacked_rows
    kernels = [np.zeros((R, R)) for _ in range(config.pin_layers)]
    return ModelParams(emb, kernels, np.zeros((1, R)), 0.0)


@dataclass
class ForwardTrace:
    x0_stacked: np.ndarray
    layer_outputs: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)
    logit: float = 0.0
    prediction: float = 0.5

    @property
    def output(self):
        return self.layer_outputs[-1] if self.layer_outputs else self.x0_stacked

    def layer(self, l):
        """Feature map after ``l`` layers, ``layer(0)`` being the input."""
        return self.x0_stacked if l == 0 else self.layer_outputs[l - 1]


def embed(indices, params, config):
    """Gather one embedding row per field into an ``F x K`` matrix."""
    if len(indices) != config.field_count:
        raise ConfigError(f"expected {config.field_count} indices, got {len(indices)}")
    rows = []
    for f, (idx, table) in enumerate(zip(indices, params.embeddings)):
        if not 0 <= idx < table.shape[0]:
            raise EmbeddingLookupError(f"field {f}: index {idx} outside table of {table.shape[0]} rows")
        rows.append(table[idx])
    return np.ascontiguousarray(np.stack(rows))


def restack(x0, h):
    """Split columns into ``h`` blocks and stack them vertically.

    Block ``j`` of the output (rows ``j*F .. j*F+F-1``) holds columns
    ``j*K/h .. (j+1)*K/h - 1`` of ``x0``, field order preserved.
    """
    F, K = x0.shape
    if h < 1 or K % h:
        raise ConfigError(f"subspaces={h} must divide embedding_dim={K}")
    c = K // h
    return np.ascontiguousarray(x0.reshape(F, h, c).transpose(1, 0, 2).reshape(F * h, c))


def unstack(xs, h):
    """Inverse of :func:`restack`."""
    R, c = xs.shape
    if h < 1 or R % h:
        raise ConfigError(f"subspaces={h} must divide stacked rows={R}")
    F = R // h
    return np.ascontiguousarray(xs.reshape(h, F, c).transpose(1, 0, 2).reshape(F, h * c))


def restack_batch(x, h):
    B, F, K = x.shape
    c = K // h
    return np.ascontiguousarray(x.reshape(B, F, h, c).transpose(0, 2, 1, 3).reshape(B, F * h, c))


def unstack_batch(xs, h):
    B, R, c = xs.shape
    F = R // h
    return np.ascontiguousarray(xs.reshape(B, h, F, c).transpose(0, 2, 1, 3).reshape(B, F, h * c))


def output_head(xl, params):
    """Return ``(logit, prediction)`` for a stacked feature map."""
    cols = xl.shape[1]
    s = dense.reduce_sum_all(dense.matmul(params.out_weights, xl)) + params.bias * float(cols)
    return s, dense.sigmoid(s)


def pin_forward(x0_stacked, params, config):
    """Run the PIN layers and the head on one stacked input, keeping intermediates."""
    x0 = dense.as_matrix(x0_stacked)
    if x0.shape != (config.stacked_rows, config.stacked_cols):
        raise dense.ShapeError(f"stacked input has shape {x0.shape}, expected "
                               f"{(config.stacked_rows, config.stacked_cols)}")
    trace = ForwardTrace(x0)
    x = x0
    for w in params.pin_kernels:
        if config.activation == "linear":
            z = dense.matmul(w, x0)
            a = dense.matmul_add_one(w, x0)
        else:
            z = dense.matmul(w, x0)
            a = dense.activate(z, config.activation) + 1.0
        x = dense.hadamard(x, a)
        trace.pre_activations.append(z)
        trace.aggregates.append(a)
        trace.layer_outputs.append(x)
    trace.logit, trace.prediction = output_head(x, params)
    return trace


def forward_example(indices, params, config):
    x0 = restack(embed(indices, params, config), config.subspaces)
    return pin_forward(x0, params, config)


def check_indices(indices, params):
    for f, table in enumerate(params.embeddings):
        col = indices[:, f]
        bad = np.flatnonzero((col < 0) | (col >= table.shape[0]))
        if bad.size:
            raise EmbeddingLookupError(
                f"example {int(bad[0])}: field {f}: index {int(col[bad[0]])} "
                f"outside table of {table.shape[0]} rows")


def gather_batch(indices, params, config):
    """Embed and restack a batch of index rows into ``(B, F*h, K/h)``."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 2 or indices.shape[1] != config.field_count:
        raise ConfigError(f"index batch has shape {indices.shape}")
    check_indices(indices, params)
    x = np.stack([table[indices[:, f]] for f, table in enumerate(params.embeddings)], axis=1)
    return restack_batch(x, config.subspaces)


def forward_batch(indices, params, config):
    """Batched forward pass; returns ``(x0, xs, zs, logits)``."""
    x0 = gather_batch(indices, params, config)
    xs, zs, logits = _k.forward_batch(x0, params.stacked_kernels(config),
                                      np.ascontiguousarray(params.out_weights[0]),
                                      float(params.bias), config.act_code)
    return x0, xs, zs, logits


def predict_batch(indices, params, config, chunk=4096):
    """Predicted click probabilities for a batch of index rows."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 2 or indices.shape[1] != config.field_count:
        raise ConfigError(f"index batch has shape {indices.shape}")
    check_indices(indices, params)
    out = np.empty(len(indices))
    for start in range(0, len(indices), chunk):
        _, _, _, logits = forward_batch(indices[start:start + chunk], params, config)
        out[start:start + chunk] = dense.sigmoid_array(logits)
    return out
