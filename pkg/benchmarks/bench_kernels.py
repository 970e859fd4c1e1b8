#!/usr/bin/env python3
"""Timing comparison of the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
Also cross-checks that both backends return identical bytes on every input.
"""

import argparse
import time

import numpy as np

from rhythmsim.kernels import available_backends


def bench(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args()

    backends = available_backends()
    if "native" not in backends:
        print("native kernels not built; benchmarking the fallback alone")

    rng = np.random.default_rng(0)
    workloads = {
        "unit_disk_pairs (400 pts)": (
            "unit_disk_pairs",
            (rng.uniform(0, 2000, 400), rng.uniform(0, 2000, 400), 300.0),
        ),
        "linear_interp (1e6 queries)": (
            "linear_interp",
            (
                rng.uniform(0, 1800, 1_000_000),
                np.linspace(0, 1800, 1801),
                rng.uniform(0, 500, 1801),
            ),
        ),
        "weighted_pick (1e6 draws)": (
            "weighted_pick",
            (np.cumsum(rng.uniform(0.1, 2.0, 110)), rng.random(1_000_000)),
        ),
    }

    print(f"{'workload':<30} " + " ".join(f"{name + ' [ms]':>16}" for name in backends))
    for label, (fn_name, fn_args) in workloads.items():
        times = {}
        outputs = {}
        for name, impl in backends.items():
            times[name] = bench(getattr(impl, fn_name), fn_args, args.repeat) * 1000
            outputs[name] = getattr(impl, fn_name)(*fn_args)
        row = f"{label:<30} " + " ".join(f"{times[name]:>16.3f}" for name in backends)
        if len(outputs) == 2:
            a, b = outputs.values()
            same = (
                all(np.array_equal(x, y) for x, y in zip(a, b))
                if isinstance(a, tuple)
                else np.array_equal(a, b)
            )
            row += "   outputs identical" if same else "   OUTPUT MISMATCH"
        print(row)
    if "native" in backends and "fallback" in backends:
        print("\n(speedup = fallback / native; identical outputs are required, "
              "timings are hardware-dependent)")


if __name__ == "__main__":
    main()
