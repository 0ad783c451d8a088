"""Query generation, server answers and client decoding for the six schemes.

Unweighted schemes use two servers and queries ``x + a_n Z``; weighted
schemes use three servers and additionally send ``w + a_n Z2``.  Every server
answer is a low-degree polynomial in its evaluation point ``a_n`` whose
constant coefficient is the statistic the client is meant to learn (distance,
consecutive difference or masked distance); the remaining coefficients are
padded by the servers' shared randomness and thrown away after the
Vandermonde solve.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .core import (
    AnswerBundle,
    ClientRandomness,
    Database,
    QueryBundle,
    RetrievalResult,
    SchemeConfig,
    ServerSharedRandomness,
    UserInput,
    cost_of,
    expand_shared_randomness,
    new_seed,
    new_session_id,
)
from .field import to_field


class SchemeError(ValueError):
    pass


def gen_query(inp: UserInput, cr: ClientRandomness, config: SchemeConfig) -> QueryBundle:
    if cr.used:
        raise SchemeError("client randomness already used for a query; sample fresh pads")
    inp.validate(config)
    q = config.q
    x = to_field(inp.x, q)
    per_server = []
    for a in config.alphas:
        q1 = (x + a * cr.Z) % q
        if config.weighted:
            q2 = (to_field(inp.w, q) + a * cr.Z2) % q
            per_server.append(np.stack([q1, q2]))
        else:
            per_server.append(q1)
    cr.used = True
    return QueryBundle(tuple(per_server))


def _check_query(db: Database, query: np.ndarray, config: SchemeConfig) -> np.ndarray:
    query = np.asarray(query)
    want = (2, config.d) if config.weighted else (config.d,)
    if query.shape != want:
        raise SchemeError(f"query shape {query.shape} does not match {want}")
    if db.d != config.d:
        raise SchemeError(f"database has d={db.d}, config says {config.d}")
    if db.M != config.M:
        raise SchemeError(f"database has M={db.M}, config says {config.M}")
    return to_field(query, config.q)


def _distances(db: Database, query: np.ndarray, config: SchemeConfig) -> np.ndarray:
    y = to_field(db.samples, config.q)
    if config.weighted:
        return kernels.wsq_dists(y, query[0], query[1], config.q)
    return kernels.sq_dists(y, query, config.q)


def _pad(sr: ServerSharedRandomness, n: int, config: SchemeConfig) -> np.ndarray:
    q = config.q
    a = config.alphas[n - 1]
    pad = a * sr.zprime1 % q
    if config.weighted:
        pad = (pad + (a * a % q) * sr.zprime2) % q
    return pad


def _check_randomness(sr: ServerSharedRandomness, config: SchemeConfig) -> None:
    if len(sr.zprime1) != config.answer_len:
        raise SchemeError("shared randomness length does not match the scheme")
    if config.weighted and sr.zprime2 is None:
        raise SchemeError("weighted schemes need a second shared pad stream")


def answer_baseline(db, query, sr, n: int, config: SchemeConfig) -> AnswerBundle:
    query = _check_query(db, query, config)
    _check_randomness(sr, config)
    vals = (_distances(db, query, config) + _pad(sr, n, config)) % config.q
    return AnswerBundle(n, vals)


def answer_diff(db, query, sr, n: int, config: SchemeConfig) -> AnswerBundle:
    if config.M < 2:
        raise SchemeError("diff answers need M >= 2")
    query = _check_query(db, query, config)
    _check_randomness(sr, config)
    dist = _distances(db, query, config)
    vals = (dist[:-1] - dist[1:] + _pad(sr, n, config)) % config.q
    return AnswerBundle(n, vals)


def answer_mask(db, query, sr, n: int, config: SchemeConfig) -> AnswerBundle:
    if sr.mu is None:
        raise SchemeError("mask answers need the shared mask stream")
    base = answer_baseline(db, query, sr, n, config)
    return AnswerBundle(n, (base.values + sr.mu) % config.q)


_ANSWER = {"baseline": answer_baseline, "diff": answer_diff, "mask": answer_mask}


def answer(db: Database, query, sr: ServerSharedRandomness, n: int, config: SchemeConfig) -> AnswerBundle:
    """Server ``n``'s (1-based) answer for the configured variant."""
    if not 1 <= n <= config.N:
        raise SchemeError(f"server index {n} outside 1..{config.N}")
    return _ANSWER[config.variant](db, query, sr, n, config)


def solve_coefficients(answers, cr: ClientRandomness, config: SchemeConfig) -> np.ndarray:
    """Undo the padding: returns an (N, len) array of polynomial coefficients.

    Row 0 is the revealed statistic; the other rows are interference terms.
    """
    answers = sorted(answers, key=lambda a: a.server)
    if [a.server for a in answers] != list(range(1, config.N + 1)):
        raise SchemeError(f"need exactly one answer from each of {config.N} servers")
    lengths = {len(a) for a in answers}
    if lengths != {config.answer_len}:
        raise SchemeError(f"answer lengths {sorted(lengths)} do not match {config.answer_len}")
    q = config.q
    rhs = np.stack([to_field(a.values, q) for a in answers])
    if config.variant != "diff":
        top = cr.self_term(config)
        for row, a in enumerate(config.alphas):
            rhs[row] = (rhs[row] - pow(a, config.N, q) * top) % q
    return config.vandermonde().solve(rhs)


def champion_argmin(r, config: SchemeConfig, backend: str | None = None) -> int:
    """Champion scan over consecutive differences (1-based result).

    Ties advance the champion to the later index.
    """
    return kernels.champion_scan(r, config.distance_bound, config.q, backend)


def _consistent(stat: np.ndarray, config: SchemeConfig) -> bool:
    b = config.distance_bound
    q = config.q
    s = np.asarray(stat, dtype=object)
    if config.variant == "diff":
        return bool(all(v <= b or v >= q - b for v in s))
    top = b + (config.d_min - 1 if config.variant == "mask" else 0)
    if top >= q - 1:
        return True
    return bool(all(v <= top for v in s))


def decode(answers, cr: ClientRandomness, config: SchemeConfig) -> RetrievalResult:
    coeffs = solve_coefficients(answers, cr, config)
    stat = coeffs[0]
    ambiguous = False
    if config.M == 1:
        theta = 1
    elif config.variant == "diff":
        theta = champion_argmin(stat, config)
    else:
        vals = np.asarray(stat, dtype=object) if stat.dtype == object else stat
        theta = int(np.argmin(vals)) + 1
        if config.variant == "mask":
            ambiguous = int(np.sum(vals == vals[theta - 1])) > 1
    up, _ = cost_of(config)
    down = sum(len(a) for a in answers)
    return RetrievalResult(
        theta_star=theta,
        revealed=stat,
        cost=(up, down),
        variant=config.variant,
        weighted=config.weighted,
        consistent=_consistent(stat, config),
        mask_ambiguous=ambiguous,
    )


class Server:
    """One replica: stateless apart from the database and the shared seed."""

    def __init__(self, config: SchemeConfig, db: Database, seed: bytes, index: int):
        if db.M != config.M or db.d != config.d:
            raise SchemeError("database shape does not match the config")
        self.config = config
        self.db = db
        self.seed = seed
        self.index = index

    def respond(self, query, session_id: bytes) -> AnswerBundle:
        sr = expand_shared_randomness(self.seed, self.config, session_id)
        return answer(self.db, query, sr, self.index, self.config)


def run_session(
    config: SchemeConfig,
    db: Database,
    inp: UserInput,
    seed: bytes | None = None,
    rng: np.random.Generator | None = None,
    session_id: bytes | None = None,
) -> RetrievalResult:
    """Complete in-process retrieval against ``N`` replicas of ``db``."""
    seed = new_seed() if seed is None else seed
    session_id = new_session_id() if session_id is None else session_id
    servers = [Server(config, db, seed, n) for n in range(1, config.N + 1)]
    cr = ClientRandomness.sample(config, rng)
    query = gen_query(inp, cr, config)
    answers = [s.respond(query.for_server(s.index), session_id) for s in servers]
    result = decode(answers, cr, config)
    result.cost = (query.symbols, result.cost[1])
    return result


def true_argmin(db: Database, x, w=None) -> int:
    """Brute-force integer argmin (1-based, smallest index on ties)."""
    return int(np.argmin(db.distances(x, w))) + 1
