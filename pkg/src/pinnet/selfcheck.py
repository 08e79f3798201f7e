"""Oracle comparisons runnable from the command line.

Every check compares a production path against an independent brute-force
reference at fixed seeds. ``mutation="drop_residual"`` replaces the
``W X_0 + 1`` aggregate with plain ``W X_0`` for the duration of the run,
which the polynomial check must catch.
"""
import contextlib
import time
from dataclasses import dataclass

import numpy as np

from . import dense, oracles
from .gradients import backward
from .metrics import auc
from .model import ModelConfig, forward_batch, forward_example, init_params, restack

MUTATIONS = ("drop_residual",)


@dataclass
class CheckResult:
    module: str
    prop: str
    ok: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'} {self.module}: {self.prop} ({self.detail})"


def _rel(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(1.0, np.abs(np.asarray(b)))


def _random_model(rng, F, K, L, h, act="linear", card=5):
    cfg = ModelConfig(F, K, L, h, act)
    params = init_params(cfg, [card] * F, seed=int(rng.integers(1 << 31)))
    R = cfg.stacked_rows
    params.pin_kernels = [rng.uniform(-0.5, 0.5, (R, R)) for _ in range(L)]
    params.out_weights = rng.uniform(-1, 1, (1, R))
    params.bias = float(rng.uniform(-0.5, 0.5))
    return cfg, params


def check_dense(rng):
    worst = 0
    for _ in range(20):
        n, m, p = rng.integers(1, 9, 3)
        a, b = rng.standard_normal((n, m)), rng.standard_normal((m, p))
        if not np.array_equal(dense.matmul(a, b), oracles.naive_matmul(a, b)):
            worst += 1
        if dense.reduce_sum_all(a) != oracles.naive_sum(a):
            worst += 1
    return CheckResult("dense-math", "matmul and sum equal the naive loops bitwise", worst == 0,
                       f"{worst} mismatches in 20 cases")


def check_polynomial(rng):
    worst = 0.0
    cases = 0
    for F, K, L, h in [(2, 2, 1, 1), (2, 4, 2, 2), (3, 4, 3, 1), (4, 4, 2, 2), (2, 8, 4, 2)]:
        cfg, params = _random_model(rng, F, K, L, h)
        polys = oracles.pin_symbolic((cfg.stacked_rows, cfg.stacked_cols), params.pin_kernels)
        for _ in range(5):
            idx = rng.integers(0, 5, F)
            trace = forward_example(idx, params, cfg)
            x0 = trace.x0_stacked.ravel()
            expect = np.array([[p.evaluate(x0) for p in row] for row in polys])
            worst = max(worst, float(np.max(_rel(trace.output, expect))))
            _, xs, _, _ = forward_batch(idx[None, :], params, cfg)
            worst = max(worst, float(np.max(_rel(xs[-1, 0], expect))))
            cases += 1
    return CheckResult("model-core", "PIN output equals its polynomial expansion",
                       worst <= 1e-12, f"max rel err {worst:.2e} over {cases} inputs")


def check_gradients(rng):
    worst = 0.0
    for F, K, L, h, act in [(2, 4, 2, 2, "tanh"), (3, 4, 1, 1, "relu"), (2, 4, 3, 4, "sigmoid"),
                            (3, 2, 0, 1, "linear")]:
        cfg, params = _random_model(rng, F, K, L, h, act)
        params.pin_kernels = [w * 0.5 for w in params.pin_kernels]
        idx = rng.integers(0, 5, F)
        y = float(rng.integers(0, 2))

        def loss_fn(p):
            t = forward_example(idx, p, cfg)
            return -(y * np.log(t.prediction) + (1 - y) * np.log(1 - t.prediction))

        g = backward(forward_example(idx, params, cfg), y, params, cfg, indices=idx)
        fd = oracles.finite_diff(loss_fn, params)
        pairs = list(zip(g.d_pin_kernels, fd.d_pin_kernels))
        pairs.append((g.d_out_weights, fd.d_out_weights))
        pairs.append((np.array([g.d_bias]), np.array([fd.d_bias])))
        dense_g = g.dense_embeddings([5] * F)
        pairs.extend(zip(dense_g, (sr.values for sr in fd.d_embeddings)))
        for a, b in pairs:
            if a.size:
                worst = max(worst, float(np.max(_rel(a, b))))
    return CheckResult("gradients", "backward matches central differences", worst <= 1e-6,
                       f"max rel err {worst:.2e}")


def check_auc(rng):
    bad = 0
    for _ in range(200):
        n = int(rng.integers(2, 60))
        scores = rng.integers(0, 6, n).astype(float)
        labels = rng.integers(0, 2, n).astype(float)
        labels[0], labels[1] = 0.0, 1.0
        if auc(scores, labels) != oracles.pairwise_auc(scores, labels):
            bad += 1
    return CheckResult("metrics-eval", "rank AUC equals pairwise AUC exactly", bad == 0,
                       f"{bad} mismatches in 200 tie-heavy cases")


def check_restack(rng):
    x = rng.standard_normal((3, 8))
    ok = True
    for h in (1, 2, 4, 8):
        s = restack(x, h)
        ok &= all(np.array_equal(s[j * 3:(j + 1) * 3], x[:, j * (8 // h):(j + 1) * (8 // h)])
                  for j in range(h))
    return CheckResult("model-core", "subspace restack places column blocks as row blocks", ok,
                       "h in 1,2,4,8")


CHECKS = [check_dense, check_restack, check_polynomial, check_gradients, check_auc]


@contextlib.contextmanager
def _mutated(mutation):
    if mutation is None:
        yield
        return
    if mutation != "drop_residual":
        raise ValueError(f"unknown mutation {mutation!r}; choose from {', '.join(MUTATIONS)}")
    from . import model
    orig_add, orig_k = dense.matmul_add_one, model._k

    class _Mut:
        def __getattr__(self, name):
            return getattr(orig_k, name)

        @staticmethod
        def forward_batch(x0, kernels, w_out, bias, code):
            xs, zs, logits = orig_k.forward_batch(x0, kernels, w_out, bias, code)
            # recompute without the residual term
            xs = xs.copy()
            for l in range(kernels.shape[0]):
                xs[l + 1] = xs[l] * (np.matmul(kernels[l], x0))
            logits = np.einsum("r,brc->b", w_out, xs[-1]) + bias * x0.shape[2]
            return xs, zs, logits

    dense.matmul_add_one = lambda w, x: dense.matmul(w, x)
    model._k = _Mut()
    try:
        yield
    finally:
        dense.matmul_add_one = orig_add
        model._k = orig_k


def run(seed=0, mutation=None):
    """Run every check; returns ``(results, seconds)``."""
    start = time.perf_counter()
    results = []
    with _mutated(mutation):
        for i, check in enumerate(CHECKS):
            results.append(check(np.random.default_rng([seed, i])))
    return results, time.perf_counter() - start
