#!/usr/bin/env python3
"""Compare the compiled kernel core against the pure-NumPy fallback.

Times the workloads that dominate attack sweeps (many small forward and
backward passes), the sign-search kernels, and one end-to-end sweep.

    python3 benchmarks/bench_core.py [--repeats 5]
"""

import argparse
import math
import time

import numpy as np

from perturbkit import backend
from perturbkit.classify import MarginContext, gnm
from perturbkit.data import make_blobs
from perturbkit.metrics import fooling_ratio
from perturbkit.model import forward, jvp, vjp
from perturbkit.norms import greedy_sign_vector
from perturbkit.regress import exhaustive_sign_oracle
from perturbkit.runner import build_attack
from perturbkit.train import NetSpec, train_toy

INF = math.inf


def timeit(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_cases():
    rng = np.random.default_rng(0)
    data = make_blobs(200, n_classes=3, dim=2, seed=0)
    model = train_toy(NetSpec((2, 16, 16, 3), "tanh"), data, epochs=200, lr=0.2, seed=0).model
    xs = [rng.standard_normal(2) for _ in range(500)]
    us = [rng.standard_normal(3) for _ in range(500)]
    big_cols = np.ascontiguousarray(rng.standard_normal((256, 16)))
    exh_cols = np.ascontiguousarray(rng.standard_normal((16, 8)))

    def bench_forward():
        for x in xs:
            forward(model, x)

    def bench_vjp():
        for x, u in zip(xs, us):
            vjp(model, x, u)

    def bench_jvp():
        for x in xs:
            jvp(model, x, x)

    def bench_gnm():
        for x in xs[:200]:
            gnm(MarginContext.build(model, x), INF, 0.3)

    def bench_greedy():
        for _ in range(50):
            greedy_sign_vector(big_cols)

    def bench_exhaustive():
        exhaustive_sign_oracle(exh_cols, 1.0)

    def bench_sweep():
        fn = build_attack("gnm", kind="classification", p=INF, eps=1.5, T=5)
        fooling_ratio(model, data, fn, base_seed=0)

    return [
        ("forward x500 (2-16-16-3)", bench_forward),
        ("vjp x500", bench_vjp),
        ("jvp x500", bench_jvp),
        ("gnm x200", bench_gnm),
        ("greedy signs x50 (256 cols)", bench_greedy),
        ("exhaustive signs (Z=16)", bench_exhaustive),
        ("fooling-ratio sweep (T=5)", bench_sweep),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    names = backend.available_backends()
    if "compiled" not in names:
        print("compiled backend not built; showing python only")
    cases = make_cases()

    header = f"{'workload':<30}" + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, fn in cases:
        row = f"{label:<30}"
        times = {}
        for name in names:
            with backend.override(name):
                times[name] = timeit(fn, args.repeats)
            row += f"{times[name] * 1e3:>10.2f}ms"
        if "compiled" in times and "python" in times:
            row += f"{times['python'] / times['compiled']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
