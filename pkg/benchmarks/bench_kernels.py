"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel with the best-of-N time for each backend and
the speedup.  Inputs match the shapes the toy model actually uses.
"""

import argparse
import timeit

import numpy as np

from iiht import _pykernels

try:
    from iiht import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    x = rng.normal(size=(16, 8, 16, 16))
    w = rng.normal(size=(16, 8, 3, 3))
    gout = rng.normal(size=(16, 16, 16, 16))
    a = rng.integers(0, 20, size=120).tolist()
    b = rng.integers(0, 20, size=120).tolist()
    seq = rng.integers(0, 4, size=4000).astype(np.int64)
    return {
        "conv2d_forward 16x8x16x16": lambda k: k.conv2d_forward(x, w, 1),
        "conv2d_backward 16x8x16x16": lambda k: k.conv2d_backward(x, w, gout, 1),
        "lcs_length 120x120": lambda k: k.lcs_length(a, b),
        "bpe_merge 4000 ids": lambda k: k.bpe_merge(seq, 1, 2, 9),
    }


def best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30} {'python':>12} {'cython':>12} {'speedup':>8}")
    for name, run in cases(rng).items():
        py = best(lambda: run(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<30} {py * 1e3:10.3f}ms {'n/a':>12} {'n/a':>8}")
            continue
        cy = best(lambda: run(_ckernels), args.repeat)
        print(f"{name:<30} {py * 1e3:10.3f}ms {cy * 1e3:10.3f}ms {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
