"""Benchmark the compiled MLP kernels against the numpy fallback.

Shapes mirror the training workload: the one-row policy evaluation inside
episode rollouts, and the batch passes of the optimizer updates. The
compiled backend only hand-rolls the single-row regime; at and above its
measured crossover (2 rows) it delegates to the numpy implementation, so
batch rows are expected to report ~1x.

Usage: python benchmarks/bench_kernels.py [--repeats 2000]
"""

import argparse
import time

import numpy as np

from flyora import kernels


def bench(impl, batch, in_dim, hidden, out_dim, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, in_dim))
    w1 = rng.standard_normal((in_dim, hidden))
    b1 = rng.standard_normal(hidden)
    w2 = rng.standard_normal((hidden, hidden))
    b2 = rng.standard_normal(hidden)
    w3 = rng.standard_normal((hidden, out_dim))
    b3 = rng.standard_normal(out_dim)
    grad = rng.standard_normal((batch, out_dim))

    for _ in range(max(1, repeats // 20)):  # let caches and clocks settle
        out, h1, h2 = impl.mlp_forward(x, w1, b1, w2, b2, w3, b3)
    t0 = time.perf_counter()
    for _ in range(repeats):
        impl.mlp_forward(x, w1, b1, w2, b2, w3, b3)
    fwd = (time.perf_counter() - t0) / repeats

    for _ in range(max(1, repeats // 20)):
        impl.mlp_backward(x, h1, h2, grad, w1, w2, w3)
    t0 = time.perf_counter()
    for _ in range(repeats):
        impl.mlp_backward(x, h1, h2, grad, w1, w2, w3)
    bwd = (time.perf_counter() - t0) / repeats
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    shapes = [
        ("policy step (1x18)", 1, 18, 64, 30),
        ("value step (1x18)", 1, 18, 64, 1),
        ("policy batch (24x18)", 24, 18, 64, 30),
        ("policy batch (64x30)", 64, 30, 64, 30),
    ]
    backends = kernels.available_backends()
    print("backends:", ", ".join(backends))
    results = {}
    for name in backends:
        impl = kernels.load_backend(name)
        for label, b, i, h, o in shapes:
            fwd, bwd = bench(impl, b, i, h, o, args.repeats)
            results[(name, label)] = (fwd, bwd)
            print("%-8s %-22s forward %8.2f us   backward %8.2f us"
                  % (name, label, fwd * 1e6, bwd * 1e6))
    if "compiled" in backends:
        print()
        for label, *_ in shapes:
            f_c, b_c = results[("compiled", label)]
            f_p, b_p = results[("python", label)]
            print("%-22s compiled speedup: forward %.2fx, backward %.2fx"
                  % (label, f_p / f_c, b_p / b_c))


if __name__ == "__main__":
    main()
