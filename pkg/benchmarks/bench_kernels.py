"""Time the numba and numpy implementations of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--ticks 100000]

Both implementations are called directly, so the comparison does not depend
on BRAKEFILTER_DISABLE_NUMBA. JIT compilation is excluded by a warm-up call.
"""

import argparse
import timeit

import numpy as np

from brakefilter import kernels
from brakefilter._accel import NUMBA_AVAILABLE


def make_inputs(n, m, d, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(scale=3.0, size=(n, d))
    means = rng.normal(size=(m, d))
    A = rng.normal(size=(m, d, d))
    chols = np.linalg.cholesky(A @ np.transpose(A, (0, 2, 1)) + d * np.eye(d))
    loglik = rng.normal(scale=10.0, size=(n, m))
    log_prior = np.log(rng.dirichlet(np.ones(m)))
    transfer = rng.dirichlet(np.ones(m), size=m)
    modes = rng.integers(0, m, size=n)
    offsets = np.linspace(0, n, n // 600 + 1).astype(np.int64)
    return {
        "component_logpdf": (X, means, chols),
        "forward_filter": (loglik, log_prior, transfer),
        "kmeans_assign": (X, means),
        "count_transitions": (modes, offsets, m),
    }


def best_time(fn, args, repeat):
    fn(*args)  # warm-up, compiles the jit variant
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ticks", type=int, default=100_000)
    ap.add_argument("--components", type=int, default=10)
    ap.add_argument("--dim", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    inputs = make_inputs(args.ticks, args.components, args.dim)
    print(f"n={args.ticks} M={args.components} d={args.dim}, best of {args.repeat}; active backend: {kernels.BACKEND}")
    print(f"{'kernel':<20}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, call_args in inputs.items():
        t_np = best_time(getattr(kernels, f"{name}_numpy"), call_args, args.repeat)
        if NUMBA_AVAILABLE:
            t_jit = best_time(getattr(kernels, f"{name}_jit"), call_args, args.repeat)
            print(f"{name:<20}{1e3 * t_np:>12.2f}{1e3 * t_jit:>12.2f}{t_np / t_jit:>9.1f}x")
        else:
            print(f"{name:<20}{1e3 * t_np:>12.2f}{'n/a':>12}{'':>10}")


if __name__ == "__main__":
    main()
