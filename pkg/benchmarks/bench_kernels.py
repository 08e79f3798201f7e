"""Time the compiled and NumPy batch kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--batch 4096] [--repeats 5]

For each field count prints the median forward and backward time per
backend, the speedup of the compiled kernels and the largest relative
difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from pinnet import _backend
from pinnet.model import ModelConfig


def median_seconds(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return float(np.median(times))


def case(F, K, L, h, act, B, seed=0):
    cfg = ModelConfig(F, K, L, h, act)
    rng = np.random.default_rng(seed)
    R, C = cfg.stacked_rows, cfg.stacked_cols
    x0 = rng.uniform(-0.3, 0.3, (B, R, C))
    kernels = rng.uniform(-0.2, 0.2, (L, R, R))
    w_out = rng.uniform(-1, 1, R)
    deltas = rng.uniform(-1, 1, B) / B
    return cfg, x0, kernels, w_out, deltas


def run(args):
    backends = {name: _backend.load(name) for name in _backend.available()}
    print(f"backends: {', '.join(backends)}; B={args.batch} K={args.dim} L={args.layers} "
          f"h={args.subspaces} activation={args.activation}")
    print(f"{'F':>4} {'backend':>8} {'forward ms':>11} {'backward ms':>12} {'speedup':>8}"
          f" {'max rel diff':>13}")
    for F in args.fields:
        cfg, x0, kernels, w_out, deltas = case(F, args.dim, args.layers, args.subspaces,
                                               args.activation, args.batch)
        code = cfg.act_code
        results = {}
        for name, k in backends.items():
            xs, zs, logits = k.forward_batch(x0, kernels, w_out, 0.1, code)
            fwd = median_seconds(lambda: k.forward_batch(x0, kernels, w_out, 0.1, code),
                                 args.repeats)
            bwd = median_seconds(lambda: k.backward_batch(x0, kernels, w_out, xs, zs, deltas,
                                                          code), args.repeats)
            out = k.backward_batch(x0, kernels, w_out, xs, zs, deltas, code)
            results[name] = (fwd, bwd, logits, out)
        base = results.get("python")
        for name, (fwd, bwd, logits, out) in results.items():
            speed = (base[0] + base[1]) / (fwd + bwd)
            diff = max(float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))
                       for a, b in zip([logits, *out[:2], out[3]], [base[2], *base[3][:2],
                                                                    base[3][3]]))
            print(f"{F:>4} {name:>8} {fwd * 1e3:>11.2f} {bwd * 1e3:>12.2f} {speed:>7.2f}x"
                  f" {diff:>13.1e}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--fields", type=int, nargs="+", default=[8, 16, 32])
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--subspaces", type=int, default=1)
    p.add_argument("--activation", default="linear")
    p.add_argument("--batch", type=int, default=4096)
    p.add_argument("--repeats", type=int, default=5)
    run(p.parse_args())


if __name__ == "__main__":
    main()
