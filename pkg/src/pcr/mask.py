"""Pre-processing for the masked schemes.

Everything here works on exact integer distances; modular reduction never
enters a gap computation because the field is chosen larger than any
distance that can occur.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import gmpy2
import numpy as np

from .core import Database


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class RejectedSet:
    samples: np.ndarray
    R: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.int64)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("rejected set needs a non-empty (K, d) array")
        if s.min() < 0 or s.max() > self.R:
            raise ValueError(f"rejected entries must lie in [0, {self.R}]")
        object.__setattr__(self, "samples", s)

    @property
    def K(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class MaskParams:
    gaps: np.ndarray  # d_k per rejected point
    d_min: int
    zero_gap: tuple[int, ...] = ()  # 1-based k with d_k == 0

    @property
    def support(self) -> range:
        if self.d_min < 1:
            raise MaskError(
                f"rejected points {list(self.zero_gap)} are equidistant to two accepted "
                "samples; no strict mask exists"
            )
        return range(self.d_min)

    def to_dict(self) -> dict:
        return {
            "d_k": [int(g) for g in self.gaps],
            "d_min": int(self.d_min),
            "zero_gap": list(self.zero_gap),
        }


def distance_matrix(points, samples, w=None) -> np.ndarray:
    """(P, M) exact integer squared distances between two point sets."""
    p = np.asarray(points, dtype=np.int64)
    s = np.asarray(samples, dtype=np.int64)
    diff = p[:, None, :] - s[None, :, :]
    sq = diff * diff
    if w is not None:
        sq = sq * np.asarray(w, dtype=np.int64)
    return sq.sum(axis=2)


def _pair_gaps(dist: np.ndarray) -> np.ndarray:
    """(P, M, M) absolute distance gaps |d_i - d_j| per point."""
    return np.abs(dist[:, :, None] - dist[:, None, :])


def min_pairwise_gap(dist_row) -> int:
    """min over i != j of |d_i - d_j|, via the sorted order."""
    s = np.sort(np.asarray(dist_row, dtype=np.int64))
    return int(np.min(np.diff(s)))


def min_gaps(db: Database, rejected: RejectedSet, w=None) -> MaskParams:
    """Per-rejected-point minimum distance gap and the global minimum.

    Runs once per database before any retrieval.
    """
    if db.M < 2:
        raise MaskError("gaps need at least two accepted samples")
    dist = distance_matrix(rejected.samples, db.samples, w)
    gaps = np.array([min_pairwise_gap(row) for row in dist], dtype=np.int64)
    zero = tuple(int(k) + 1 for k in np.flatnonzero(gaps == 0))
    return MaskParams(gaps, int(gaps.min()), zero)


def closure_membership(x, db: Database, rejected: RejectedSet, w=None) -> bool:
    """True iff every pairwise gap at ``x`` dominates the same gap at every rejected point."""
    x = np.asarray(x, dtype=np.int64)
    if np.any(np.all(db.samples == x, axis=1)):
        raise MaskError("closure excludes the accepted samples themselves")
    gx = _pair_gaps(distance_matrix(x[None, :], db.samples, w))[0]
    gmax = _pair_gaps(distance_matrix(rejected.samples, db.samples, w)).max(axis=0)
    return bool(np.all(gx >= gmax))


CLOSURE_ENUM_LIMIT = 1 << 20


def closure_points(db: Database, rejected: RejectedSet, q: int, w=None) -> np.ndarray:
    """Every point of [0, q-1]^d in the closure (only for q^d <= 2^20)."""
    d = db.d
    if q**d > CLOSURE_ENUM_LIMIT:
        raise MaskError(f"closure enumeration over {q}^{d} points exceeds the 2^20 budget")
    grid = np.array(list(itertools.product(range(q), repeat=d)), dtype=np.int64)
    in_db = (grid[:, None, :] == db.samples[None, :, :]).all(axis=2).any(axis=1)
    grid = grid[~in_db]
    gmax = _pair_gaps(distance_matrix(rejected.samples, db.samples, w)).max(axis=0)
    out = []
    for start in range(0, len(grid), 4096):
        chunk = grid[start:start + 4096]
        g = _pair_gaps(distance_matrix(chunk, db.samples, w))
        out.append(chunk[(g >= gmax[None]).all(axis=(1, 2))])
    return np.concatenate(out) if out else grid[:0]


def worst_case_success(dist_row, gap: int) -> bool:
    """Does argmin of d_i + mu_i land on a true nearest sample for every
    mask draw mu in {0..gap-1}^M (ties resolved to the smallest index)?

    The adversarial draws are: lift every true minimum to gap-1 and leave one
    (or all) other samples at 0.  A non-minimal sample within gap-2 of the
    minimum always wins one of these; one exactly gap-1 above wins only
    through the index tie-break.
    """
    d = np.asarray(dist_row, dtype=np.int64)
    if gap <= 1 or len(d) < 2:
        return True
    best = d.min()
    excess = d - best
    others = excess > 0
    if np.any(others & (excess < gap - 1)):
        return False
    edge = np.flatnonzero(others & (excess == gap - 1))
    if len(edge) == 0:
        return True
    return edge.min() > np.flatnonzero(excess == 0).min()


def worst_case_success_bruteforce(dist_row, gap: int) -> bool:
    """Exhaustive twin of :func:`worst_case_success` (gap^M draws)."""
    d = np.asarray(dist_row, dtype=np.int64)
    best = d.min()
    for mu in itertools.product(range(gap), repeat=len(d)):
        if d[int(np.argmin(d + np.array(mu)))] != best:
            return False
    return True


@dataclass
class DminTable:
    rates: dict[int, float]
    chosen: int
    threshold: float
    n_queries: int

    def to_dict(self) -> dict:
        return {
            "rates": {str(k): v for k, v in self.rates.items()},
            "chosen": self.chosen,
            "threshold": self.threshold,
            "n_queries": self.n_queries,
        }


def empirical_dmin(
    db: Database,
    sample_queries,
    candidates: Iterable[int],
    threshold: float = 1.0,
    w=None,
) -> DminTable:
    """Success rate of each candidate gap over sample queries, worst case over masks.

    Returns the largest candidate whose rate reaches ``threshold`` (1 if none).
    """
    queries = np.asarray(sample_queries, dtype=np.int64)
    if queries.ndim != 2 or len(queries) == 0:
        raise MaskError("need a non-empty (n, d) array of sample queries")
    dist = distance_matrix(queries, db.samples, w)
    rates = {}
    for g in sorted(set(int(c) for c in candidates)):
        if g < 1:
            raise MaskError("candidate gaps must be >= 1")
        rates[g] = float(np.mean([worst_case_success(row, g) for row in dist]))
    ok = [g for g, r in rates.items() if r >= threshold]
    return DminTable(rates, max(ok) if ok else 1, threshold, len(queries))


@dataclass(frozen=True)
class FieldExpansion:
    """Relative-distance-preserving embedding a -> scale * a into F_q2.

    Only the accepted samples are scaled; queries stay as the user sends
    them, so the transform can remain hidden from the client.
    """

    scale: int
    q2: int

    def __post_init__(self):
        if self.scale < 1:
            raise MaskError("scale must be >= 1")
        if not gmpy2.is_prime(self.q2):
            raise MaskError(f"q2={self.q2} is not prime")


@dataclass
class ExpansionReport:
    db: Database
    expansion: FieldExpansion
    params: MaskParams
    max_distance: int
    verified: bool = True
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "scale": self.expansion.scale,
            "q2": self.expansion.q2,
            "max_distance": self.max_distance,
            "verified": self.verified,
            **self.params.to_dict(),
        }


def expand(db: Database, expansion: FieldExpansion, rejected: RejectedSet, w=None) -> ExpansionReport:
    """Scale the accepted samples and verify the embedding against the rejected set.

    The check requires, for every rejected x_k and pair (i, j), that the gap
    measured against the scaled samples is no smaller than the original gap,
    that the nearest accepted sample is unchanged, and that every distance
    (plus the widest mask) fits below q2.
    """
    c = expansion.scale
    scaled = Database(db.samples * c, db.R * c)
    before = distance_matrix(rejected.samples, db.samples, w)
    after = distance_matrix(rejected.samples, scaled.samples, w)
    if np.any(_pair_gaps(before) > _pair_gaps(after)):
        raise MaskError("expansion shrinks some distance gap on the rejected set")
    if np.any(before.argmin(axis=1) != after.argmin(axis=1)):
        raise MaskError("expansion changes a rejected point's nearest accepted sample")
    gaps = np.array([min_pairwise_gap(r) for r in after], dtype=np.int64)
    params = MaskParams(gaps, int(gaps.min()), tuple(int(k) + 1 for k in np.flatnonzero(gaps == 0)))
    top = int(after.max()) + max(params.d_min - 1, 0)
    if top >= expansion.q2:
        raise MaskError(f"q2={expansion.q2} does not exceed the largest masked distance {top}")
    return ExpansionReport(scaled, expansion, params, int(after.max()))


def preprocessing_report(params: MaskParams, expansion: ExpansionReport | None = None) -> str:
    data = {"mask": params.to_dict()}
    if expansion is not None:
        data["expansion"] = expansion.to_dict()
    return json.dumps(data, indent=2)


def scale_points(points: Sequence, c: int) -> np.ndarray:
    return np.asarray(points, dtype=np.int64) * c
