"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from specdict import _fallback

try:
    from specdict import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng):
    for n in (4, 8, 16):
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        yield f"schur_eig n={n}", (lambda impl, a=a: impl.schur_eig(a))
    for steps in (1_000, 10_000):
        inc = np.sqrt(2 * 0.5 * 0.01) * rng.normal(size=steps)
        yield f"em_integrate steps={steps}", (lambda impl, inc=inc: impl.em_integrate(0.1, inc, 1.0, 0.01))


def best_time(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'kernel':<26}{'cython (us)':>14}{'python (us)':>14}{'speedup':>10}")
    for name, call in cases(np.random.default_rng(0)):
        tc = best_time(lambda: call(_kernels), args.repeat)
        tp = best_time(lambda: call(_fallback), args.repeat)
        print(f"{name:<26}{tc * 1e6:>14.1f}{tp * 1e6:>14.1f}{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
