#!/usr/bin/env python3
"""Benchmark the statistical kernels: compiled extension vs pure Python.

Run from the repo root after an editable install:

    python benchmarks/bench_kernels.py [--repeats 5]

The compiled backend is imported directly (not via the selector), so the
comparison works regardless of ILWS_FORGE_PURE_PYTHON.
"""

from __future__ import annotations

import argparse
import random
import time

from ilws_forge.stats import _kernels_py

try:
    from ilws_forge.stats import _ckernels
except ImportError:
    _ckernels = None


def make_inputs(seed: int = 7):
    rng = random.Random(seed)
    likert30 = [
        ([float(rng.randint(1, 5)) for _ in range(30)],
         [float(rng.randint(1, 5)) for _ in range(30)])
        for _ in range(200)
    ]
    likert10 = [
        ([float(rng.randint(1, 5)) for _ in range(10)],
         [float(rng.randint(1, 5)) for _ in range(10)])
        for _ in range(50)
    ]
    gauss300 = [
        [rng.gauss(0, 1) for _ in range(300)]
        for _ in range(50)
    ]
    return likert30, likert10, gauss300


def bench(label: str, fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_suite(kernels, likert30, likert10, gauss300, repeats: int) -> dict:
    def welch():
        for prev, new in likert30:
            kernels.welch_t(prev, new)

    def shapiro():
        for prev, _ in likert30:
            if len(set(prev)) > 1:
                kernels.shapiro_wilk(prev)

    def shapiro_large():
        for sample in gauss300:
            kernels.shapiro_wilk(sample)

    def mw_asymptotic():
        for prev, new in likert30:
            kernels.mann_whitney(prev, new)

    def mw_exact():
        for prev, new in likert10:
            kernels.mann_whitney(prev, new)

    return {
        "welch_t (200x n=30)": bench("welch", welch, repeats),
        "shapiro_wilk (200x n=30)": bench("sw", shapiro, repeats),
        "shapiro_wilk (50x n=300)": bench("sw300", shapiro_large, repeats),
        "mann_whitney approx (200x n=60)": bench("mw", mw_asymptotic, repeats),
        "mann_whitney exact (50x 10v10)": bench("mwx", mw_exact, repeats),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    likert30, likert10, gauss300 = make_inputs()
    py_times = run_suite(_kernels_py, likert30, likert10, gauss300, args.repeats)
    print(f"{'kernel':<36} {'python':>10} {'compiled':>10} {'speedup':>8}")
    if _ckernels is None:
        for name, t_py in py_times.items():
            print(f"{name:<36} {t_py * 1e3:>8.2f}ms {'-':>10} {'-':>8}")
        print("\ncompiled extension not built; run `pip install -e . --no-build-isolation`")
        return
    c_times = run_suite(_ckernels, likert30, likert10, gauss300, args.repeats)
    for name, t_py in py_times.items():
        t_c = c_times[name]
        print(f"{name:<36} {t_py * 1e3:>8.2f}ms {t_c * 1e3:>8.2f}ms {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
