"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python -m kabi.bench [--n-steps 1000] [--repeats 5]
"""

import argparse
import time

import numpy as np

from .kernels import HAVE_NUMBA, get_kernels

CASES = [
    # (label, kernel index, N, kwargs builder)
    ("meanfield N=100", 1, 100, {"kappa": 2.0}),
    ("pairwise  N=100", 0, 100, {"kappa": 2.0}),
    ("complex   N=3", 2, 3, {}),
]


def _run(kernel, idx, n, extra, n_steps, subsample, rng):
    psi0 = rng.normal(0.0, 1.0, n)
    omega = rng.normal(1.0, 0.5, n)
    if idx == 2:
        weights = rng.uniform(0.0, 1.0, (n, n))
        np.fill_diagonal(weights, 0.0)
        args = (psi0, omega, weights, 0.05, n_steps, subsample)
    else:
        args = (psi0, omega, extra["kappa"], 0.05, n_steps, subsample)
    t0 = time.perf_counter()
    kernel(*args)
    return time.perf_counter() - t0


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-steps", type=int, default=1000)
    parser.add_argument("--subsample", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args(argv)

    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    if not HAVE_NUMBA:
        print("numba unavailable; timing the numpy fallback only")

    print(f"{'case':<18} " + " ".join(f"{b + ' (ms)':>12}" for b in backends) +
          ("      speedup" if len(backends) == 2 else ""))
    for label, idx, n, extra in CASES:
        times = {}
        for backend in backends:
            kernels = get_kernels(backend)
            rng = np.random.default_rng(0)
            _run(kernels[idx], idx, n, extra, args.n_steps, args.subsample, rng)  # warm up / JIT
            samples = [
                _run(kernels[idx], idx, n, extra, args.n_steps, args.subsample, rng)
                for _ in range(args.repeats)
            ]
            times[backend] = min(samples)
        row = f"{label:<18} " + " ".join(f"{1e3 * times[b]:>12.3f}" for b in backends)
        if len(backends) == 2:
            row += f"  {times['numpy'] / times['numba']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
