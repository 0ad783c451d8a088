"""Database leakage I(y_1..y_M; Q, A | x), measured in base-q units.

The client's view is a one-time-padded function of the revealed statistic
(distances, consecutive differences or masked distances), so the leakage
equals I(y; S | x) for that statistic S.  :func:`leakage_exact` and
:func:`leakage_sampled` compute that reduced quantity;
:func:`leakage_full_oracle` enumerates complete protocol transcripts on tiny
fields to certify the reduction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    ClientRandomness,
    Database,
    SchemeConfig,
    ServerSharedRandomness,
    UserInput,
)
from .mask import distance_matrix
from .schemes import answer, gen_query

DEFAULT_BUDGET = 50_000_000
MC_DRAW_LIMIT = 1_000_000


class LeakageBudgetError(RuntimeError):
    pass


def entropy(counts, base: float) -> float:
    """Shannon entropy of unnormalised weights, in log base ``base``."""
    p = np.asarray(counts, dtype=float)
    p = p[p > 0]
    p = p / p.sum()
    return float(-(p * np.log(p)).sum() / math.log(base))


def grid_points(R: int, d: int) -> np.ndarray:
    return np.array(list(itertools.product(range(R + 1), repeat=d)), dtype=np.int64)


@dataclass
class PriorModel:
    """Query prior plus the conditional law of the database given the query.

    ``candidates(x)`` lists the points each y_i may take.  With
    ``convention="iid"`` the M indices are independent, uniform over the
    candidates unless ``index_probs(x)`` supplies an (M, C) table.  With
    ``convention="distinct"`` the tuple is uniform over ordered tuples of
    distinct candidates.
    """

    queries: np.ndarray
    M: int
    candidates: Callable[[np.ndarray], np.ndarray]
    query_probs: np.ndarray | None = None
    index_probs: Callable[[np.ndarray], np.ndarray] | None = None
    convention: str = "iid"
    w: np.ndarray | None = None
    description: str = ""

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.int64)
        if self.query_probs is None:
            self.query_probs = np.full(len(self.queries), 1.0 / len(self.queries))
        self.query_probs = np.asarray(self.query_probs, dtype=float)
        if not math.isclose(self.query_probs.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("query probabilities must sum to 1")
        if self.convention not in ("iid", "distinct"):
            raise ValueError(f"unknown tuple convention {self.convention!r}")
        if self.convention == "distinct" and self.index_probs is not None:
            raise ValueError("per-index probabilities only apply to the iid convention")


def grid_prior(R: int, d: int, M: int, convention: str = "iid") -> PriorModel:
    """x uniform on [0:R]^d; each y_i uniform on [0:R]^d minus {x}."""
    pts = grid_points(R, d)

    def candidates(x):
        return pts[np.any(pts != x, axis=1)]

    return PriorModel(
        pts,
        M,
        candidates,
        convention=convention,
        description=f"grid R={R} d={d} M={M} ({convention})",
    )


def random_prior(R: int, d: int, M: int, rng: np.random.Generator, concentration: float = 1.0) -> PriorModel:
    """Random non-uniform prior on a small grid (Dirichlet weights everywhere)."""
    pts = grid_points(R, d)
    qp = rng.dirichlet(np.full(len(pts), concentration))
    tables = {tuple(x): rng.dirichlet(np.full(len(pts), concentration), size=M) for x in pts}

    return PriorModel(
        pts,
        M,
        lambda x: pts,
        query_probs=qp,
        index_probs=lambda x: tables[tuple(x)],
        description=f"random Dirichlet({concentration}) R={R} d={d} M={M}",
    )


@dataclass
class LeakageReport:
    variant: str
    prior: str
    value: float
    base: int
    d_min: int = 1
    n_queries: int = 0
    n_tuples: int = 0
    n_draws: int = 1
    upper_bound: float | None = None
    stderr: float = 0.0
    method: str = "exact"
    extra: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        names = {"baseline": "Baseline PCR", "diff": "Diff-PCR", "mask": "Mask-PCR"}
        name = names.get(self.variant, self.variant)
        return f"{name} (d_min={self.d_min})" if self.variant == "mask" else name

    def row(self) -> dict:
        return {
            "scheme": self.label,
            "variant": self.variant,
            "d_min": self.d_min,
            "leakage": self.value,
            "base": self.base,
            "method": self.method,
            "prior": self.prior,
            "n_queries": self.n_queries,
            "n_tuples": self.n_tuples,
            "stderr": self.stderr,
        }


def revealed_statistic(variant: str, x, ys, mu=None, q: int | None = None, w=None) -> tuple[int, ...]:
    """What the client's decode exposes about the database beyond its own pads."""
    dist = distance_matrix(np.asarray(x)[None, :], np.asarray(ys), w)[0]
    if variant == "baseline":
        out = dist
    elif variant == "diff":
        if q is None:
            raise ValueError("diff statistic is defined mod q")
        out = (dist[:-1] - dist[1:]) % q
    elif variant == "mask":
        mu = np.zeros_like(dist) if mu is None else np.asarray(mu, dtype=np.int64)
        out = dist + mu
        if q is not None:
            out = out % q
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return tuple(int(v) for v in out)


def _statistic_rows(variant: str, D: np.ndarray, q: int) -> np.ndarray:
    if variant == "diff":
        return (D[:, :-1] - D[:, 1:]) % q
    return D % q


def _row_keys(rows: np.ndarray, q: int) -> np.ndarray:
    """Injective integer (or byte) keys for rows of residues mod q."""
    m = rows.shape[1]
    if m == 0:
        return np.zeros(len(rows), dtype=np.int64)
    if q ** m < (1 << 62):
        keys = np.zeros(len(rows), dtype=np.int64)
        for j in range(m):
            keys = keys * q + rows[:, j]
        return keys
    return np.ascontiguousarray(rows.astype(np.int64)).view(np.dtype((np.void, 8 * m))).ravel()


def _weighted_entropy(keys: np.ndarray, weights: np.ndarray, q: int) -> float:
    uniq, inv = np.unique(keys, return_inverse=True)
    return entropy(np.bincount(inv.ravel(), weights=weights), q)


def _leakage_given_x(
    variant: str,
    D: np.ndarray,
    probs: np.ndarray,
    q: int,
    d_min: int,
    rng: np.random.Generator | None,
    mc_draws: int,
) -> tuple[float, float, int]:
    """I(y; S | x = x0) from the law of the distance tuple D (rows, probs).

    Returns (value, standard error, mask draws per tuple).
    """
    M = D.shape[1]
    if variant != "mask" or d_min == 1:
        keys = _row_keys(_statistic_rows(variant, D, q), q)
        return _weighted_entropy(keys, probs, q), 0.0, 1
    if d_min > q:
        raise ValueError("mask support wider than the field")
    cond = M * math.log(d_min) / math.log(q)
    n_draws = d_min ** M
    if n_draws <= MC_DRAW_LIMIT:
        draws = np.array(list(itertools.product(range(d_min), repeat=M)), dtype=np.int64)
        h = _mask_entropy(D, probs, draws, q)
        return h - cond, 0.0, n_draws
    rng = rng or np.random.default_rng()
    batches = []
    for _ in range(5):
        draws = rng.integers(0, d_min, size=(mc_draws, M))
        batches.append(_mask_entropy(D, probs, draws, q) - cond)
    est = float(np.mean(batches))
    return est, float(np.std(batches, ddof=1) / math.sqrt(len(batches))), mc_draws


def _mask_entropy(D, probs, draws, q) -> float:
    # weights of S = D + mu summed over all (tuple, draw) pairs, in chunks
    per_draw = 1.0 / len(draws)
    chunk = max(1, 4_000_000 // max(1, len(draws)))
    key_parts, weight_parts = [], []
    for start in range(0, len(D), chunk):
        Dc = D[start:start + chunk]
        S = (Dc[:, None, :] + draws[None, :, :]) % q
        S = S.reshape(-1, D.shape[1])
        keys = _row_keys(S, q)
        w = np.repeat(probs[start:start + chunk] * per_draw, len(draws))
        u, inv = np.unique(keys, return_inverse=True)
        key_parts.append(u)
        weight_parts.append(np.bincount(inv.ravel(), weights=w))
    keys = np.concatenate(key_parts)
    weights = np.concatenate(weight_parts)
    return _weighted_entropy(keys, weights, q)


def _distance_tuple_law(prior: PriorModel, x: np.ndarray, budget: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Joint law of (d_1(x), ..., d_M(x)) under the prior, plus H(y | x) in nats."""
    cands = prior.candidates(x)
    dist = distance_matrix(x[None, :], cands, prior.w)[0]
    M = prior.M
    if prior.convention == "iid":
        if prior.index_probs is None:
            table = np.full((M, len(cands)), 1.0 / len(cands))
        else:
            table = np.asarray(prior.index_probs(x), dtype=float)
        values = np.unique(dist)
        # per-index law of the distance value
        per_index = np.stack([np.bincount(np.searchsorted(values, dist), weights=row, minlength=len(values)) for row in table])
        n_tuples = len(values) ** M
        if n_tuples > budget:
            raise LeakageBudgetError(f"{n_tuples} distance tuples exceed the budget {budget}")
        idx = np.array(list(itertools.product(range(len(values)), repeat=M)), dtype=np.int64)
        probs = np.ones(len(idx))
        for i in range(M):
            probs *= per_index[i][idx[:, i]]
        keep = probs > 0
        h_y = sum(-(r[r > 0] * np.log(r[r > 0])).sum() for r in table)
        return values[idx[keep]], probs[keep], float(h_y)
    # distinct ordered tuples: weight of a distance tuple is a falling product of class sizes
    C = len(cands)
    if C < M:
        raise ValueError("fewer candidates than database slots")
    values, counts = np.unique(dist, return_counts=True)
    n_tuples = len(values) ** M
    if n_tuples > budget:
        raise LeakageBudgetError(f"{n_tuples} distance tuples exceed the budget {budget}")
    idx = np.array(list(itertools.product(range(len(values)), repeat=M)), dtype=np.int64)
    weight = np.ones(len(idx))
    for k in range(M):
        used = (idx[:, :k] == idx[:, [k]]).sum(axis=1)
        weight *= np.maximum(counts[idx[:, k]] - used, 0)
    total = math.prod(range(C - M + 1, C + 1))
    keep = weight > 0
    return values[idx[keep]], weight[keep] / total, math.log(total)


def leakage_exact(
    prior: PriorModel,
    config: SchemeConfig,
    budget: int = DEFAULT_BUDGET,
    rng: np.random.Generator | None = None,
    mc_draws: int = 20_000,
) -> LeakageReport:
    """Exact I(y; S | x) by enumerating the law of the distance tuple per query."""
    if prior.M != config.M:
        raise ValueError("prior and config disagree on M")
    q = config.q
    total = 0.0
    var = 0.0
    h_y = 0.0
    n_tuples = 0
    n_draws = 1
    for x, px in zip(prior.queries, prior.query_probs):
        if px == 0:
            continue
        D, probs, hy = _distance_tuple_law(prior, x, budget)
        val, se, n_draws = _leakage_given_x(config.variant, D, probs, q, config.d_min, rng, mc_draws)
        total += px * val
        var += (px * se) ** 2
        h_y += px * hy
        n_tuples = max(n_tuples, len(D))
    return LeakageReport(
        variant=config.variant,
        prior=prior.description,
        value=max(total, 0.0),
        base=q,
        d_min=config.d_min if config.variant == "mask" else 1,
        n_queries=int(np.count_nonzero(prior.query_probs)),
        n_tuples=n_tuples,
        n_draws=n_draws,
        upper_bound=h_y / math.log(q),
        stderr=math.sqrt(var),
        method="exact" if n_draws <= MC_DRAW_LIMIT else "exact-tuples/mc-mask",
    )


def sample_tuples(pool_size: int, M: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` distinct ordered M-tuples of distinct pool indices (all of them if fewer exist)."""
    if pool_size < M:
        raise ValueError("pool smaller than M")
    total = math.prod(range(pool_size - M + 1, pool_size + 1))
    if n >= total:
        return np.array(list(itertools.permutations(range(pool_size), M)), dtype=np.int64)
    seen: set[tuple[int, ...]] = set()
    out = []
    while len(out) < n:
        batch = _random_tuples(rng, pool_size, M, 2 * (n - len(out)) + 16)
        for row in map(tuple, batch.tolist()):
            if row not in seen:
                seen.add(row)
                out.append(row)
                if len(out) == n:
                    break
    return np.array(out, dtype=np.int64)


def _random_tuples(rng, pool_size, M, k):
    if pool_size <= 4 * M:
        return np.argsort(rng.random((k, pool_size)), axis=1)[:, :M]
    rows = rng.integers(0, pool_size, size=(k, M))
    ok = (np.sort(rows, axis=1)[:, 1:] != np.sort(rows, axis=1)[:, :-1]).all(axis=1)
    return rows[ok]


def leakage_sampled(
    queries,
    accepted,
    n_samples: int,
    config: SchemeConfig,
    rng: np.random.Generator | None = None,
    tuples: np.ndarray | None = None,
    w=None,
    description: str = "",
    mc_draws: int = 20_000,
) -> LeakageReport:
    """Plug-in leakage with x uniform over ``queries`` and y uniform over a
    fixed set of ``n_samples`` ordered tuples drawn from ``accepted``."""
    queries = np.asarray(queries, dtype=np.int64)
    accepted = np.asarray(accepted, dtype=np.int64)
    if len(queries) == 0 or len(accepted) == 0:
        raise ValueError("query and accepted pools must be non-empty")
    rng = rng or np.random.default_rng()
    if tuples is None:
        tuples = sample_tuples(len(accepted), config.M, n_samples, rng)
    dist = distance_matrix(queries, accepted, w)
    probs = np.full(len(tuples), 1.0 / len(tuples))
    total = 0.0
    var = 0.0
    n_draws = 1
    for row in dist:
        val, se, n_draws = _leakage_given_x(config.variant, row[tuples], probs, config.q, config.d_min, rng, mc_draws)
        total += val
        var += se * se
    n = len(queries)
    return LeakageReport(
        variant=config.variant,
        prior=description or f"sampled {len(tuples)} tuples over {len(accepted)} accepted",
        value=max(total / n, 0.0),
        base=config.q,
        d_min=config.d_min if config.variant == "mask" else 1,
        n_queries=n,
        n_tuples=len(tuples),
        n_draws=n_draws,
        upper_bound=math.log(len(tuples)) / math.log(config.q),
        stderr=math.sqrt(var) / n,
        method="sampled",
    )


def leakage_full_oracle(config: SchemeConfig, max_states: int = 5_000_000) -> LeakageReport:
    """I(y; Q_1..Q_N, A_1..A_N | x) from complete transcripts.

    Enumerates x uniform on [0:R]^d, y_i i.i.d. uniform on [0:R]^d minus {x},
    the client pad Z, the shared pads Z' and the masks mu, and runs the real
    query and answer code on every combination.  Only tiny unweighted
    configurations fit.
    """
    if config.weighted:
        raise ValueError("the transcript oracle covers the unweighted schemes")
    q, d, M = config.q, config.d, config.M
    R = config.R
    n_pad = config.answer_len
    d_min = config.d_min if config.variant == "mask" else 1
    pts = grid_points(R, d)
    n_y = (len(pts) - 1) ** M
    states = len(pts) * n_y * q ** d * q ** n_pad * d_min ** n_pad
    if states > max_states:
        raise LeakageBudgetError(f"{states} transcript states exceed the budget {max_states}")
    zs = np.array(list(itertools.product(range(q), repeat=d)), dtype=np.int64)
    zps = np.array(list(itertools.product(range(q), repeat=n_pad)), dtype=np.int64)
    mus = np.array(list(itertools.product(range(d_min), repeat=n_pad)), dtype=np.int64)
    total = 0.0
    for x in pts:
        cands = pts[np.any(pts != x, axis=1)]
        inp = UserInput(x)
        view_counts: dict[tuple, int] = {}
        cond = 0.0
        for ys in itertools.product(range(len(cands)), repeat=M):
            db = Database(cands[list(ys)], R)
            per_y: dict[tuple, int] = {}
            for z in zs:
                cr = ClientRandomness(z.copy())
                query = gen_query(inp, cr, config)
                for zp in zps:
                    for mu in mus:
                        sr = ServerSharedRandomness(zp, None, mu if config.variant == "mask" else None)
                        view = [tuple(int(v) for v in query.for_server(n)) for n in range(1, config.N + 1)]
                        view += [tuple(int(v) for v in answer(db, query.for_server(n), sr, n, config).values) for n in range(1, config.N + 1)]
                        key = tuple(view)
                        per_y[key] = per_y.get(key, 0) + 1
            for key, c in per_y.items():
                view_counts[key] = view_counts.get(key, 0) + c
            cond += entropy(list(per_y.values()), q)
        total += entropy(list(view_counts.values()), q) - cond / n_y
    return LeakageReport(
        variant=config.variant,
        prior=f"grid R={R} d={d} M={M} (iid), full transcripts",
        value=total / len(pts),
        base=q,
        d_min=d_min,
        n_queries=len(pts),
        n_tuples=n_y,
        n_draws=len(zs) * len(zps) * len(mus),
        method="full-oracle",
    )
