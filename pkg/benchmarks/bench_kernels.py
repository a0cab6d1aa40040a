"""Compare the compiled and numpy kernels on representative lattice sizes.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from calderon_lab import kernels


def cases(rng):
    for n in (33, 65, 129):
        u = rng.standard_normal((n, n, n))
        yield f"laplacian7 {n}^3", lambda b, u=u: kernels.laplacian7(u, 0.1, backend=b)
    for n in (33, 65):
        f = rng.standard_normal((n, n, n))
        yield f"translation_l1 {n}^3", lambda b, f=f: kernels.translation_l1(f, (2, 1, 0), backend=b)
    vals = rng.standard_normal((65, 65, 65))
    for m in (10_000, 100_000):
        pts = rng.uniform(0.1, 6.3, (m, 3))
        yield f"interp_cubic {m} pts", lambda b, p=pts: kernels.interp_cubic(vals, (0, 0, 0), 0.1, p, backend=b)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = ["numpy"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled extension not built; timing the numpy kernels only")
    print(f"{'kernel':<26}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(rng):
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3 for b in backends]
        if len(times) == 2:
            a, c = fn("numpy"), fn("cython")
            assert np.allclose(a, c, rtol=1e-10, atol=1e-10), name
        speed = f"{times[0] / times[1]:>10.1f}" if len(times) == 2 else ""
        print(f"{name:<26}" + "".join(f"{t:>14.2f}" for t in times) + speed)


if __name__ == "__main__":
    main()
