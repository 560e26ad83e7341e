"""Compare the compiled and numpy backends of the pointwise kernels.

Run with ``python3 benchmarks/bench_kernels.py [--reps R]``. Prints one line
per (kernel, batch size, matrix size) with the best wall time of each backend
and the speed-up. The backends are also checked for agreement.
"""
import argparse
import timeit

import numpy as np

from dualflow import _kernels_py

try:
    from dualflow import _kernels
except ImportError:  # extension not built
    _kernels = None


def _batch(rng, K, n):
    A = rng.normal(size=(K, n, n))
    M = A @ np.swapaxes(A, -1, -2) + n * np.eye(n)
    return M, rng.normal(size=(K, n))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.Generator(np.random.PCG64(args.seed))
    print(f"{'kernel':<16}{'K':>8}{'n':>4}{'python [ms]':>14}{'compiled [ms]':>15}{'speed-up':>10}")
    for n in (2, 4, 8):
        for K in (1_000, 16_000, 128_000):
            M, b = _batch(rng, K, n)
            xp, sp = _kernels_py.spd_solve(M, b, 1e-10)
            xc, sc = _kernels.spd_solve(M, b, 1e-10)
            assert np.array_equal(sp, sc) and np.allclose(xp, xc, rtol=1e-10, atol=1e-12)
            for name, call in (
                ("spd_solve", lambda mod: mod.spd_solve(M, b, 1e-10)),
                ("min_eigenvalues", lambda mod: mod.min_eigenvalues(M)),
            ):
                tp = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=args.reps))
                tc = min(timeit.repeat(lambda: call(_kernels), number=1, repeat=args.reps))
                print(f"{name:<16}{K:>8}{n:>4}{tp * 1e3:>14.2f}{tc * 1e3:>15.2f}{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
