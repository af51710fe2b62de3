"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from potalign.kernels import _fallback

try:
    from potalign.kernels import _core
except ImportError:
    _core = None


def cases(rng):
    flow = rng.normal(size=(120, 160, 2)).astype(np.float32)
    pts = rng.uniform(0, 150, (5000, 2))
    A, B = rng.random((300, 100)), rng.random((300, 100))
    D = rng.random((200, 200))
    L = rng.random((150, 150))
    L = (L + L.T) / 2
    np.fill_diagonal(L, 0)
    return {
        "bilinear_sample 5000 pts": lambda m: m.bilinear_sample(flow, pts),
        "pairwise_hi 300x300x100": lambda m: m.pairwise_hi(A, B),
        "diag_window_sums 200x200 T=10": lambda m: m.diag_window_sums(D, 10),
        "complete_linkage n=150": lambda m: m.complete_linkage(L),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _core is None:
            print(f"{name:32s} {py:10.2f} {'-':>10s} {'-':>8s}")
            continue
        cy = min(timeit.repeat(lambda: fn(_core), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {py:10.2f} {cy:10.2f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
