"""Reference numpy implementations of the hot loops.

These are the fallback when the compiled extension is missing and the
baseline the benchmark compares against.  Inputs are canonical residues.
"""

from __future__ import annotations

import numpy as np


def sq_dists(db: np.ndarray, v: np.ndarray, q: int) -> np.ndarray:
    """||y_i - v||^2 mod q for every row y_i of ``db``."""
    diff = (db - v) % q
    return ((diff * diff) % q).sum(axis=1) % q


def wsq_dists(db: np.ndarray, v: np.ndarray, w: np.ndarray, q: int) -> np.ndarray:
    """(y_i - v)^t diag(w) (y_i - v) mod q for every row y_i of ``db``."""
    diff = (db - v) % q
    return ((((diff * diff) % q) * w) % q).sum(axis=1) % q


def champion_scan(r: np.ndarray, bound: int, q: int) -> int:
    """Sequential champion scan over consecutive differences; returns a 1-based index."""
    theta = 1
    acc = 0
    for i in range(len(r)):
        # acc holds d_theta - d_{i+1} once r(i) is folded in
        acc = (acc + int(r[i])) % q
        if acc > bound:
            continue
        theta = i + 2
        acc = 0
    return theta
