"""Benchmark the compiled kernels against the pure numpy fallback.

Runs each hot kernel on realistic problem sizes and reports the median
wall time per call for both backends, plus the speedup ratio. Invoke as

    python3 benchmarks/bench_kernels.py [--repeats N]

The compiled backend must be importable; build it first with
``pip install -e . --no-build-isolation``.
"""

import argparse
import statistics
import time

import numpy as np

from mvloc._kernels import _pure

try:
    from mvloc._kernels import _native
except ImportError:
    _native = None


def residual_problem(rng, m=10):
    """One refinement track: reference feature plus m non-reference views."""
    ref_feat = rng.normal(size=2) * 0.3
    obs = rng.normal(size=(m, 2)) * 0.3
    rots = np.empty((m, 3, 3))
    for i in range(m):
        a = rng.normal(size=(3, 3))
        q, _ = np.linalg.qr(a)
        if np.linalg.det(q) < 0:
            q[:, 2] = -q[:, 2]
        rots[i] = q
    trans = rng.normal(size=(m, 3)) * 0.5
    x, y = ref_feat + rng.normal(size=2) * 0.01
    rho = 4.0 + rng.random()
    return ref_feat, obs, rots, trans, x, y, rho


def consensus_problem(rng, k=150):
    """Exhaustive pair consensus at the largest anchor count it is used for."""
    origins = rng.normal(size=(k, 3)) * 5.0
    dirs = rng.normal(size=(k, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    quats = rng.normal(size=(k, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    pairs = np.array([(i, j) for i in range(k) for j in range(i + 1, k)],
                     dtype=np.int64)
    cos_ray = np.cos(np.radians(5.0))
    cos_half_rot = np.cos(np.radians(5.0))
    return origins, dirs, quats, pairs, cos_ray, cos_half_rot


def time_call(fn, args, repeats, warmup=3):
    for _ in range(warmup):
        fn(*args)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200,
                        help="timing samples per kernel (default 200)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    workloads = [
        ("e1_residual_jac (M=10)", "e1_residual_jac", residual_problem(rng)),
        ("e1_value        (M=10)", "e1_value", residual_problem(rng)),
        ("consensus_scores (K=150, 11175 pairs)", "consensus_scores",
         consensus_problem(rng)),
    ]

    print(f"{'kernel':<40} {'pure':>12} {'native':>12} {'speedup':>9}")
    for label, name, problem in workloads:
        t_pure = time_call(getattr(_pure, name), problem, args.repeats)
        if _native is None:
            print(f"{label:<40} {t_pure * 1e6:>10.1f}us {'n/a':>12} {'n/a':>9}")
            continue
        t_native = time_call(getattr(_native, name), problem, args.repeats)
        ratio = t_pure / t_native
        print(f"{label:<40} {t_pure * 1e6:>10.1f}us "
              f"{t_native * 1e6:>10.1f}us {ratio:>8.1f}x")

    if _native is None:
        print("\ncompiled backend not importable; build it with "
              "pip install -e . --no-build-isolation")


if __name__ == "__main__":
    main()
