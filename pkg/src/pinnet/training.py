"""Mini-batch training with periodic validation, early stopping and checkpoints.

Checkpoint layout (little-endian)::

    b"XDPI"  u32 version
    config     str activation, u64 F K L h, str training-config text
    embeddings u64 F, then per field a matrix
    kernels    u64 L, then per layer a matrix
    head       matrix W_out, f64 bias
    optimizer  str kind, u64 count, then per state: matrix, matrix, u64 step
    metadata   str vocabulary hash, u64 step, f64 best auc, f64 best logloss,
               u64 best step, u64 evaluations since best

A matrix is ``u64 rows, u64 cols`` followed by ``rows*cols`` f64 in
row-major order; a string is ``u64 length`` followed by UTF-8 bytes.
"""
import copy
import io
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .gradients import batch_gradients
from .metrics import evaluate
from .model import ModelConfig, ModelParams, init_params
from .optimizers import AdamState, FtrlState, GroupFtrlState, OptimizerBundle

MAGIC = b"XDPI"
VERSION = 1


class TrainingDivergence(ArithmeticError):
    def __init__(self, step, batch_index, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step} (batch {batch_index} of epoch)")
        self.step = step
        self.batch_index = batch_index


class CheckpointFormatError(ValueError):
    pass


class VocabularyMismatchWarning(UserWarning):
    pass


@dataclass
class TrainConfig:
    embedding_dim: int = 16
    pin_layers: int = 3
    subspaces: int = 1
    activation: str = "linear"
    batch_size: int = 4096
    eval_every_steps: int = 2000
    early_stop_patience: int = 3
    max_steps: int = 100_000
    seed: int = 0
    optimizer: str = "gftrl_ftrl"
    alpha: float = 0.01
    beta: float = 1.0
    lambda1: float = 0.001
    lambda2: float = 0.001
    adam_lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.eval_every_steps < 1:
            raise ValueError("eval_every_steps must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.optimizer not in ("gftrl_ftrl", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def model_config(self, field_count):
        return ModelConfig(field_count, self.embedding_dim, self.pin_layers, self.subspaces,
                           self.activation)

    def optimizer_hypers(self):
        return dict(alpha=self.alpha, beta=self.beta, lambda1=self.lambda1, lambda2=self.lambda2,
                    adam_lr=self.adam_lr, adam_beta1=self.adam_beta1,
                    adam_beta2=self.adam_beta2, adam_eps=self.adam_eps)

    def to_text(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name}={format(v, '.17g') if isinstance(v, float) else v}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text):
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line:
                continue
            k, _, v = line.partition("=")
            if k not in types:
                raise ValueError(f"unknown training key {k!r}")
            t = types[k]
            kw[k] = int(v) if t in (int, "int") else float(v) if t in (float, "float") else v
        return cls(**kw)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: ModelParams
    optimizer: OptimizerBundle
    vocab_hash: str = ""
    step: int = 0
    best_auc: float = float("nan")
    best_logloss: float = float("nan")
    best_step: int = 0
    evals_since_best: int = 0
    version: int = VERSION

    def copy(self):
        return Checkpoint(self.model_config, self.train_config, self.params.copy(),
                          copy.deepcopy(self.optimizer), self.vocab_hash, self.step,
                          self.best_auc, self.best_logloss, self.best_step, self.evals_since_best)


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list = field(default_factory=list)
    stopped_early: bool = False

    def history_csv(self):
        return history_to_csv(self.history)


def history_to_csv(history):
    lines = ["step,split,auc,logloss"]
    for step, split, auc, ll in history:
        lines.append(f"{step},{split},{format(auc, '.17g')},{format(ll, '.17g')}")
    return "\n".join(lines) + "\n"


def epoch_permutation(seed, epoch, n):
    """Example order for one epoch, seeded from ``(seed, epoch)``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch)]))
    return rng.permutation(n)


def _improves(auc, logloss, best_auc, best_logloss):
    if math.isnan(best_auc):
        return True
    return auc > best_auc or (auc == best_auc and logloss < best_logloss)


def train(train_ds, valid_ds, config, vocab_hash="", resume=None, log=None):
    """Train until ``max_steps`` or early stop; keep the best-validation checkpoint.

    Validation runs at step 0, every ``eval_every_steps`` steps and at the
    final step. Returns a :class:`TrainResult` whose ``history`` rows are
    ``(step, "valid", auc, logloss)``.
    """
    if len(train_ds) == 0 or len(valid_ds) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if train_ds.cardinalities != valid_ds.cardinalities:
        raise ValueError("training and validation sets use different vocabularies")
    mcfg = config.model_config(train_ds.field_count)

    if resume is None:
        params = init_params(mcfg, train_ds.cardinalities, seed=config.seed)
        opt = OptimizerBundle.create(config.optimizer, params, **config.optimizer_hypers())
        state = Checkpoint(mcfg, config, params, opt, vocab_hash)
    else:
        if resume.model_config != mcfg:
            raise ValueError("checkpoint model configuration does not match")
        state = resume.copy()
        state.train_config = config
    params, opt = state.params, state.optimizer
    history = []
    best = None

    def run_eval(counts_for_patience=True):
        nonlocal best
        res = evaluate(params, mcfg, valid_ds)
        history.append((state.step, "valid", res.auc, res.logloss))
        if log:
            log(state.step, res)
        if _improves(res.auc, res.logloss, state.best_auc, state.best_logloss):
            state.best_auc, state.best_logloss = res.auc, res.logloss
            state.best_step = state.step
            state.evals_since_best = 0
            best = state.copy()
        elif counts_for_patience:
            state.evals_since_best += 1

    if resume is None:
        run_eval()
    n = len(train_ds)
    bs = config.batch_size
    per_epoch = -(-n // bs)
    perm_epoch, perm = None, None
    stopped = False
    while state.step < config.max_steps:
        epoch, pos = divmod(state.step, per_epoch)
        if epoch != perm_epoch:
            perm_epoch, perm = epoch, epoch_permutation(config.seed, epoch, n)
        batch = perm[pos * bs:(pos + 1) * bs]
        loss, grads, _ = batch_gradients(train_ds.indices[batch], train_ds.labels[batch],
                                         params, mcfg)
        if not math.isfinite(loss):
            raise TrainingDivergence(state.step, pos, loss)
        opt.step(params, grads)
        state.step += 1
        if state.step % config.eval_every_steps == 0:
            run_eval()
            if state.evals_since_best >= config.early_stop_patience:
                stopped = True
                break
        elif state.step == config.max_steps:
            run_eval(counts_for_patience=False)
    if best is None:
        # resumed run that never beat the stored best: the resume point stands
        best = resume.copy() if resume is not None else state.copy()
    return TrainResult(best, state.copy(), history, stopped)


# -- binary checkpoint format -------------------------------------------------

class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def u32(self, v):
        self.buf.write(struct.pack("<I", v))

    def u64(self, v):
        self.buf.write(struct.pack("<Q", int(v)))

    def f64(self, v):
        self.buf.write(struct.pack("<d", float(v)))

    def text(self, s):
        b = s.encode("utf-8")
        self.u64(len(b))
        self.buf.write(b)

    def matrix(self, m):
        m = np.ascontiguousarray(m, dtype="<f8")
        if m.ndim != 2:
            raise ValueError("checkpoint matrices must be 2-D")
        self.u64(m.shape[0])
        self.u64(m.shape[1])
        self.buf.write(m.tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.off = 0

    def _take(self, n, what):
        if self.off + n > len(self.data):
            raise CheckpointFormatError(f"truncated checkpoint: {what} at offset {self.off} "
                                        f"needs {n} bytes, {len(self.data) - self.off} left")
        b = self.data[self.off:self.off + n]
        self.off += n
        return b

    def u32(self, what):
        return struct.unpack("<I", self._take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self._take(8, what))[0]

    def f64(self, what):
        return struct.unpack("<d", self._take(8, what))[0]

    def text(self, what):
        n = self.u64(what)
        start = self.off
        try:
            return self._take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError(f"invalid UTF-8 in {what} at offset {start}") from None

    def matrix(self, what, shape=None):
        start = self.off
        r, c = self.u64(what), self.u64(what)
        if shape is not None and (r, c) != tuple(shape):
            raise CheckpointFormatError(f"{what} at offset {start} has shape {(r, c)}, "
                                        f"expected {tuple(shape)}")
        raw = self._take(8 * r * c, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(r, c)


_OPT_KINDS = {"gftrl_ftrl", "adam"}


def checkpoint_bytes(ckpt):
    w = _Writer()
    w.buf.write(MAGIC)
    w.u32(VERSION)
    mc = ckpt.model_config
    w.text(mc.activation)
    for v in (mc.field_count, mc.embedding_dim, mc.pin_layers, mc.subspaces):
        w.u64(v)
    w.text(ckpt.train_config.to_text())
    p = ckpt.params
    w.u64(len(p.embeddings))
    for e in p.embeddings:
        w.matrix(e)
    w.u64(len(p.pin_kernels))
    for k in p.pin_kernels:
        w.matrix(k)
    w.matrix(p.out_weights)
    w.f64(p.bias)
    opt = ckpt.optimizer
    w.text(opt.kind)
    states = opt.all_states()
    w.u64(len(states))
    for s in states:
        if opt.kind == "adam":
            w.matrix(s.m)
            w.matrix(s.v)
            w.u64(s.t)
        else:
            w.matrix(s.z)
            w.matrix(s.n)
            w.u64(0)
    w.text(ckpt.vocab_hash)
    w.u64(ckpt.step)
    w.f64(ckpt.best_auc)
    w.f64(ckpt.best_logloss)
    w.u64(ckpt.best_step)
    w.u64(ckpt.evals_since_best)
    return w.buf.getvalue()


def save_checkpoint(ckpt, path):
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


def parse_checkpoint(data, expected_vocab_hash=None):
    r = _Reader(bytes(data))
    magic = r._take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r} at offset 0")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version} at offset 4")
    activation = r.text("activation")
    dims = [r.u64("model dimensions") for _ in range(4)]
    try:
        mc = ModelConfig(dims[0], dims[1], dims[2], dims[3], activation)
        tc = TrainConfig.from_text(r.text("training config"))
    except ValueError as exc:
        raise CheckpointFormatError(f"invalid configuration section: {exc}") from None
    R = mc.stacked_rows
    nf = r.u64("field count")
    if nf != mc.field_count:
        raise CheckpointFormatError(f"{nf} embedding tables for {mc.field_count} fields "
                                    f"at offset {r.off - 8}")
    emb = []
    for f in range(nf):
        e = r.matrix(f"embedding {f}")
        if e.shape[1] != mc.embedding_dim:
            raise CheckpointFormatError(f"embedding {f} width {e.shape[1]} != {mc.embedding_dim}")
        emb.append(e)
    nl = r.u64("layer count")
    if nl != mc.pin_layers:
        raise CheckpointFormatError(f"{nl} kernels for {mc.pin_layers} layers at offset {r.off - 8}")
    kernels = [r.matrix(f"kernel {l}", (R, R)) for l in range(nl)]
    w_out = r.matrix("output weights", (1, R))
    bias = r.f64("bias")
    params = ModelParams(emb, kernels, w_out, bias)

    kind = r.text("optimizer kind")
    if kind not in _OPT_KINDS:
        raise CheckpointFormatError(f"unknown optimizer kind {kind!r}")
    count = r.u64("optimizer state count")
    shapes = [e.shape for e in emb] + [k.shape for k in kernels] + [w_out.shape, (1, 1)]
    if count != len(shapes):
        raise CheckpointFormatError(f"{count} optimizer states for {len(shapes)} parameters")
    hy = tc.optimizer_hypers()
    states = []
    for i, shape in enumerate(shapes):
        a = r.matrix(f"optimizer state {i}", shape)
        b = r.matrix(f"optimizer state {i}", shape)
        t = r.u64(f"optimizer state {i} step")
        if kind == "adam":
            states.append(AdamState(a, b, hy["adam_lr"], hy["adam_beta1"], hy["adam_beta2"],
                                    hy["adam_eps"], t))
        else:
            cls = GroupFtrlState if i < nf else FtrlState
            states.append(cls(a, b, hy["alpha"], hy["beta"], hy["lambda1"], hy["lambda2"]))
    opt =OptimizerBundle(kind, states[:nf], states[nf:nf + nl], states[nf + nl],
                          states[nf + nl + 1], _bundle_hypers(kind, hy))

    vh = r.text("vocabulary hash")
    step = r.u64("step")
    best_auc = r.f64("best auc")
    best_ll = r.f64("best logloss")
    best_step = r.u64("best step")
    since = r.u64("evaluations since best")
    if r.off != len(r.data):
        raise CheckpointFormatError(f"{len(r.data) - r.off} trailing bytes at offset {r.off}")
    ckpt = Checkpoint(mc, tc, params, opt, vh, step, best_auc, best_ll, best_step, since, version)
    if expected_vocab_hash is not None and vh != expected_vocab_hash:
        warnings.warn(f"checkpoint was trained with vocabulary {vh[:12] or '<none>'}, "
                      f"not {expected_vocab_hash[:12]}", VocabularyMismatchWarning, stacklevel=3)
    return ckpt


def _bundle_hypers(kind, hy):
    if kind == "gftrl_ftrl":
        return dict(alpha=hy["alpha"], beta=hy["beta"], lambda1=hy["lambda1"],
                    lambda2=hy["lambda2"])
    return dict(lr=hy["adam_lr"], beta1=hy["adam_beta1"], beta2=hy["adam_beta2"],
                eps=hy["adam_eps"])


def load_checkpoint(path, expected_vocab_hash=None):
    """Read and validate a checkpoint file.

    A vocabulary-hash mismatch against ``expected_vocab_hash`` is reported
    as a :class:`VocabularyMismatchWarning`; format problems raise
    :class:`CheckpointFormatError` and return nothing.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data, expected_vocab_hash)


def with_overrides(config, **kw):
    return replace(config, **kw)


__all__ = [
    "Checkpoint", "CheckpointFormatError", "TrainConfig", "TrainResult", "TrainingDivergence",
    "VocabularyMismatchWarning", "asdict", "checkpoint_bytes", "epoch_permutation",
    "history_to_csv", "load_checkpoint", "parse_checkpoint", "save_checkpoint", "train",
]
