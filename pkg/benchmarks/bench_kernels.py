"""Compiled vs numpy kernels on retrieval-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 200]

Prints microseconds per call for each kernel and backend, and the speedup.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from pcr import kernels

CASES = [
    # (label, M, d, q)
    ("wine-like M=500 d=11 q~2^27", 500, 11, 184_549_441),
    ("COMPAS-like M=5 d=20 q=2003", 5, 20, 2003),
    ("large M=20000 d=16 q~2^61", 20_000, 16, 2**61 - 1),
]


def bench(fn, repeat: int) -> float:
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e6


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled kernels unavailable; only the numpy backend will run")
    rng = np.random.default_rng(0)
    print(f"{'case':34} {'kernel':14} {'python us':>12} {'cython us':>12} {'speedup':>8}")
    for label, M, d, q in CASES:
        hi = min(q, 2**62)
        db = rng.integers(0, hi, size=(M, d), dtype=np.int64) % q
        v = rng.integers(0, hi, size=d, dtype=np.int64) % q
        w = rng.integers(1, 5, size=d, dtype=np.int64)
        r = rng.integers(0, hi, size=M - 1, dtype=np.int64) % q
        bound = q // 3
        if q >= 2**31:
            db, v, w, r = (a.astype(object) for a in (db, v, w, r))
        for name, call in (
            ("sq_dists", lambda b: kernels.sq_dists(db, v, q, b)),
            ("wsq_dists", lambda b: kernels.wsq_dists(db, v, w, q, b)),
            ("champion_scan", lambda b: kernels.champion_scan(r, bound, q, b)),
        ):
            t_py = bench(lambda: call("python"), args.repeat)
            if kernels.BACKEND == "cython":
                t_c = bench(lambda: call("cython"), args.repeat)
                print(f"{label:34} {name:14} {t_py:12.1f} {t_c:12.1f} {t_py / t_c:7.1f}x")
            else:
                print(f"{label:34} {name:14} {t_py:12.1f} {'-':>12} {'-':>8}")


if __name__ == "__main__":
    main()
