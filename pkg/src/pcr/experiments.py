"""Dataset ingestion, quantization and the experiment drivers.

``run_tradeoff`` measures how often a scheme run on quantized data still
returns a real-valued nearest neighbour; ``run_leakage_experiment`` turns a
small spec dict into a table of leakage reports.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import gmpy2
import numpy as np
import pandas as pd

from .core import Database, SchemeConfig, UserInput
from .field import field_bound
from .leakage import LeakageReport, grid_prior, leakage_exact, leakage_sampled
from .schemes import run_session

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass
class RealDataset:
    rows: np.ndarray
    labels: np.ndarray
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.ndim != 2 or len(self.rows) == 0:
            raise DatasetError("dataset is empty")
        if len(self.rows) != len(self.labels):
            raise DatasetError("row and label counts differ")
        if not set(np.unique(self.labels)) <= {0, 1}:
            raise DatasetError("labels must be 0/1")
        if np.isnan(self.rows).any():
            raise DatasetError("dataset has missing values")

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def accepted(self) -> np.ndarray:
        return self.rows[self.labels == 1]

    @property
    def rejected(self) -> np.ndarray:
        return self.rows[self.labels == 0]


def ingest_csv(
    path,
    target: str,
    threshold: float | None = None,
    column_map: dict | None = None,
    drop: list[str] | None = None,
    dedupe: bool = False,
) -> RealDataset:
    """Load a CSV into accepted (label 1) and rejected (label 0) pools.

    ``threshold`` turns a numeric target into ``target >= threshold``;
    without it the target must already be 0/1.  ``column_map`` names
    categorical columns to one-hot encode, optionally with a fixed category
    list: ``{"sex": ["Male", "Female"], "race": null}``.
    """
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise DatasetError(f"{path} is empty")
    sep = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t").delimiter
    df = pd.read_csv(io.StringIO(text), sep=sep)
    df.columns = [c.strip().strip('"') for c in df.columns]
    if target not in df.columns:
        raise DatasetError(f"target column {target!r} missing from {path}")
    for col in drop or []:
        if col not in df.columns:
            raise DatasetError(f"column {col!r} missing from {path}")
        df = df.drop(columns=col)
    for col, cats in (column_map or {}).items():
        if col not in df.columns:
            raise DatasetError(f"column {col!r} missing from {path}")
        values = df.pop(col).astype(str)
        cats = cats if cats is not None else sorted(values.unique())
        for c in cats:
            df[f"{col}={c}"] = (values == str(c)).astype(float)
    y = df.pop(target)
    try:
        X = df.apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
        y = pd.to_numeric(y, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as e:
        raise DatasetError(f"non-numeric cell in {path}: {e}") from None
    labels = (y >= threshold).astype(np.int64) if threshold is not None else y.astype(np.int64)
    ds = RealDataset(X, labels, list(df.columns))
    if dedupe:
        _, idx = np.unique(np.column_stack([ds.rows, ds.labels]), axis=0, return_index=True)
        idx.sort()
        ds = RealDataset(ds.rows[idx], ds.labels[idx], ds.columns)
    return ds


@dataclass(frozen=True)
class QuantizationSpec:
    R: int
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if np.any(np.asarray(self.mins) > np.asarray(self.maxs)):
            raise ValueError("feature minimum above maximum")

    @classmethod
    def fit(cls, pool, R: int) -> "QuantizationSpec":
        pool = np.asarray(pool, dtype=float)
        return cls(R, pool.min(axis=0), pool.max(axis=0))

    def with_levels(self, R: int) -> "QuantizationSpec":
        return QuantizationSpec(R, self.mins, self.maxs)


def quantize(values, spec: QuantizationSpec) -> np.ndarray:
    """Normalize to [0, 1] with the spec's ranges (clipping) and round to R levels."""
    v = np.asarray(values, dtype=float)
    span = np.asarray(spec.maxs, dtype=float) - np.asarray(spec.mins, dtype=float)
    safe = np.where(span > 0, span, 1.0)
    norm = np.clip((v - spec.mins) / safe, 0.0, 1.0)
    norm = np.where(span > 0, norm, 0.0)
    return np.rint(norm * spec.R).astype(np.int64)


def normalize(values, spec: QuantizationSpec) -> np.ndarray:
    """Min-max scaling with the spec's ranges, unclipped and unrounded."""
    span = np.asarray(spec.maxs, dtype=float) - np.asarray(spec.mins, dtype=float)
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (np.asarray(values, dtype=float) - spec.mins) / safe, 0.0)


def dequantize(levels, spec: QuantizationSpec) -> np.ndarray:
    span = np.asarray(spec.maxs, dtype=float) - np.asarray(spec.mins, dtype=float)
    return spec.mins + np.asarray(levels, dtype=float) / spec.R * span


def unique_rows(a) -> np.ndarray:
    return np.unique(np.asarray(a), axis=0)


def synthetic_dataset(
    n: int = 4898,
    d: int = 11,
    seed: int = 0,
    reject_rate: float = 0.05,
) -> RealDataset:
    """Real-valued stand-in for the wine data: correlated, skewed features and a
    linear score whose bottom ``reject_rate`` fraction is labelled rejected."""
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(d, d)) / math.sqrt(d)
    latent = rng.normal(size=(n, d)) @ (np.eye(d) + 0.5 * mix)
    scales = rng.uniform(0.5, 20.0, size=d)
    rows = np.exp(0.3 * latent) * scales
    score = latent @ rng.normal(size=d) + rng.normal(scale=0.5, size=n)
    labels = (score > np.quantile(score, reject_rate)).astype(np.int64)
    return RealDataset(rows, labels, [f"f{j}" for j in range(d)])


def synthetic_integer_pools(R: int, d: int, n_accepted: int, n_rejected: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint uniform integer pools on [0:R]^d (accepted, rejected)."""
    rng = np.random.default_rng(seed)
    total = (R + 1) ** d
    want = n_accepted + n_rejected
    if want > total:
        raise DatasetError(f"grid [0:{R}]^{d} has only {total} points")
    if total <= 4 * want:
        codes = rng.permutation(total)[:want]
    else:
        codes = np.unique(rng.integers(0, total, size=2 * want))
        while len(codes) < want:
            codes = np.unique(np.concatenate([codes, rng.integers(0, total, size=want)]))
        codes = rng.permutation(codes)[:want]
    pts = np.stack(np.unravel_index(codes, (R + 1,) * d), axis=1).astype(np.int64)
    return pts[:n_accepted], pts[n_accepted:]


@dataclass
class TradeoffResult:
    R_grid: list[int]
    dmin_grid: list[int]
    accuracy: np.ndarray  # (len(R_grid), len(dmin_grid)) mean over rounds
    per_round: np.ndarray  # (rounds, len(R_grid), len(dmin_grid))
    rounds: int
    M: int
    queries_per_round: int
    scheme: str

    def cell(self, R: int, d_min: int) -> float:
        return float(self.accuracy[self.R_grid.index(R), self.dmin_grid.index(d_min)])

    def rows(self) -> list[dict]:
        out = []
        for a, R in enumerate(self.R_grid):
            for b, g in enumerate(self.dmin_grid):
                out.append(
                    {
                        "R": R,
                        "levels": R + 1,
                        "d_min": g,
                        "accuracy": float(self.accuracy[a, b]),
                        "stderr": float(self.per_round[:, a, b].std(ddof=1) / math.sqrt(self.rounds)) if self.rounds > 1 else 0.0,
                    }
                )
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "scheme": self.scheme,
                "M": self.M,
                "queries_per_round": self.queries_per_round,
                "rounds": self.rounds,
                "grid": self.rows(),
            },
            indent=2,
        )


def field_for(R: int, d: int, variant: str = "mask", d_min: int = 1, L: int = 1) -> int:
    """Smallest prime leaving room for every distance (and the widest mask)."""
    bound = field_bound(R, d, L, variant)
    if variant == "mask":
        bound += d_min - 1
    return int(gmpy2.next_prime(bound))


def real_hits(queries: np.ndarray, db_real: np.ndarray, retrieved: np.ndarray) -> np.ndarray:
    """Hit iff the retrieved sample is at least as close (real distance) as the true nearest."""
    dist = ((queries[:, None, :] - db_real[None, :, :]) ** 2).sum(axis=2)
    best = dist.min(axis=1)
    got = dist[np.arange(len(queries)), np.asarray(retrieved) - 1]
    # exact ties must survive the float rounding of normalized features
    return got <= best + 1e-9 * np.maximum(best, 1e-12)


def mask_win_probabilities(dist, d_min: int) -> np.ndarray:
    """P(index i wins) for argmin(dist + mu), mu iid uniform on {0..d_min-1}.

    Ties go to the smallest index, as in the masked decode.  Only entries
    within ``d_min`` of the minimum can win, so the work is confined to those.
    """
    dist = np.asarray(dist, dtype=np.int64)
    g = int(d_min)
    lo = int(dist.min())
    cand = np.flatnonzero(dist < lo + g)
    out = np.zeros(len(dist))
    if len(cand) == 1:
        out[cand[0]] = 1.0
        return out
    dc = dist[cand][:, None]
    v = np.arange(lo, lo + g)[None, :]
    # per candidate and masked value v: P(D+mu = v), P(D+mu > v), P(D+mu >= v)
    p_eq = ((v >= dc) & (v < dc + g)) / g
    p_gt = np.clip((dc + g - 1 - v) / g, 0.0, 1.0)
    p_ge = np.clip((dc + g - v) / g, 0.0, 1.0)
    ones = np.ones((1, g))
    # earlier indices must be strictly larger, later ones at least as large
    before = np.cumprod(np.vstack([ones, p_gt[:-1]]), axis=0)
    after = np.cumprod(np.vstack([ones, p_ge[::-1][:-1]]), axis=0)[::-1]
    out[cand] = (p_eq * before * after).sum(axis=1)
    return out


def _all_hits(query: np.ndarray, db_real: np.ndarray) -> np.ndarray:
    dist = ((db_real - query) ** 2).sum(axis=1)
    best = dist.min()
    return dist <= best + 1e-9 * max(best, 1e-12)


def run_tradeoff(
    dataset: RealDataset,
    M: int = 500,
    queries_per_round: int = 50,
    rounds: int = 100,
    R_grid=(4, 16, 64, 256, 1024, 4096),
    dmin_grid=(1, 8, 64, 512),
    scheme: str = "mask",
    seed: int = 0,
    protocol: bool = True,
    mask_average: str = "draw",
) -> TradeoffResult:
    """Accuracy of quantized retrieval against real-valued nearest neighbours.

    Every grid cell sees the same databases and queries each round, and the
    same shared seed, so differences between cells come from quantization and
    mask width alone.  ``protocol=False`` skips the cryptographic round trip
    and decodes directly from masked integer distances (same outcome, faster).

    ``mask_average="exact"`` replaces the single mask draw per query with its
    expectation over the mask, i.e. the probability that the decode lands on a
    real nearest neighbour.  The mean is the same; the mask noise is gone.
    """
    if mask_average not in ("draw", "exact"):
        raise ValueError("mask_average must be 'draw' or 'exact'")
    if mask_average == "exact" and scheme != "mask":
        raise ValueError("exact mask averaging only applies to the mask scheme")
    acc_pool, rej_pool = dataset.accepted, dataset.rejected
    if M > len(acc_pool):
        raise DatasetError(f"M={M} exceeds the {len(acc_pool)} accepted instances")
    if queries_per_round > len(rej_pool):
        raise DatasetError(f"{queries_per_round} queries exceed the {len(rej_pool)} rejected instances")
    if scheme != "mask" and tuple(dmin_grid) != (1,):
        raise ValueError("d_min grids only apply to the mask scheme")
    base_spec = QuantizationSpec.fit(acc_pool, 1)
    rng = np.random.default_rng(seed)
    R_grid, dmin_grid = list(R_grid), list(dmin_grid)
    per_round = np.zeros((rounds, len(R_grid), len(dmin_grid)))
    d = dataset.d
    for r in range(rounds):
        db_idx = rng.choice(len(acc_pool), size=M, replace=False)
        q_idx = rng.choice(len(rej_pool), size=queries_per_round, replace=False)
        db_real, q_real = acc_pool[db_idx], rej_pool[q_idx]
        # ground truth lives in the same normalized space the quantizer rounds
        db_norm, q_norm = normalize(db_real, base_spec), normalize(q_real, base_spec)
        seed_bytes = rng.bytes(32)
        sessions = [rng.bytes(16) for _ in range(queries_per_round)]
        client_seed = int(rng.integers(1 << 62))
        if mask_average == "exact":
            hits = np.array([_all_hits(x, db_norm) for x in q_norm])
        for a, R in enumerate(R_grid):
            spec = base_spec.with_levels(R)
            db = Database(quantize(db_real, spec), R)
            qs = quantize(q_real, spec)
            if mask_average == "exact":
                dq = ((qs[:, None, :] - db.samples[None]) ** 2).sum(axis=2)
                for b, g in enumerate(dmin_grid):
                    per_round[r, a, b] = np.mean([mask_win_probabilities(dq[k], g) @ hits[k] for k in range(len(qs))])
                continue
            for b, g in enumerate(dmin_grid):
                variant = scheme
                config = SchemeConfig(q=field_for(R, d, variant, g), R=R, d=d, M=M, variant=variant, d_min=g)
                crng = np.random.default_rng(client_seed)
                if protocol:
                    got = np.array(
                        [run_session(config, db, UserInput(x), seed_bytes, crng, sid).theta_star for x, sid in zip(qs, sessions)]
                    )
                else:
                    got = np.array([_direct_decode(config, db, x, seed_bytes, sid) for x, sid in zip(qs, sessions)])
                per_round[r, a, b] = real_hits(q_norm, db_norm, got).mean()
        log.debug("round %d done", r)
    return TradeoffResult(R_grid, dmin_grid, per_round.mean(axis=0), per_round, rounds, M, queries_per_round, scheme)


def _direct_decode(config: SchemeConfig, db: Database, x, seed: bytes, session_id: bytes) -> int:
    from .core import expand_shared_randomness
    from .schemes import champion_argmin

    dist = db.distances(x)
    if config.variant == "diff":
        return champion_argmin((dist[:-1] - dist[1:]) % config.q, config)
    if config.variant == "mask":
        dist = (dist + expand_shared_randomness(seed, config, session_id).mu) % config.q
    return int(np.argmin(dist)) + 1


def run_leakage_experiment(spec: dict) -> list[LeakageReport]:
    """Leakage rows for a spec dict.

    ``{"kind": "grid", "R": 3, "d": 3, "M": 3, "q": 757,
    "schemes": [{"variant": "baseline"}, {"variant": "mask", "d_min": 2}],
    "convention": "iid"}`` or ``{"kind": "sampled", "accepted": path,
    "rejected": path, "n_samples": 100000, ...}``.
    """
    kind = spec.get("kind", "grid")
    schemes = spec.get("schemes") or [{"variant": "baseline"}]
    M, q = int(spec["M"]), int(spec["q"])
    seed = spec.get("seed", 0)
    reports = []
    if kind == "grid":
        R, d = int(spec["R"]), int(spec["d"])
        prior = grid_prior(R, d, M, spec.get("convention", "iid"))
        for s in schemes:
            config = SchemeConfig(q=q, R=R, d=d, M=M, variant=s["variant"], d_min=int(s.get("d_min", 1)))
            reports.append(leakage_exact(prior, config, rng=np.random.default_rng(seed)))
        return reports
    if kind != "sampled":
        raise ValueError(f"unknown leakage experiment kind {kind!r}")
    accepted, rejected = _load_pools(spec)
    R = int(spec.get("R", max(accepted.max(), rejected.max())))
    d = accepted.shape[1]
    rng = np.random.default_rng(seed)
    from .leakage import sample_tuples

    tuples = sample_tuples(len(accepted), M, int(spec.get("n_samples", 100_000)), rng)
    queries = rejected
    if spec.get("max_queries"):
        queries = rejected[rng.choice(len(rejected), size=min(len(rejected), int(spec["max_queries"])), replace=False)]
    for s in schemes:
        config = SchemeConfig(q=q, R=R, d=d, M=M, variant=s["variant"], d_min=int(s.get("d_min", 1)), strict=False)
        reports.append(
            leakage_sampled(queries, accepted, len(tuples), config, rng=np.random.default_rng(seed), tuples=tuples)
        )
    return reports


def _load_pools(spec: dict) -> tuple[np.ndarray, np.ndarray]:
    if "accepted" in spec and "rejected" in spec:
        acc = np.loadtxt(spec["accepted"], delimiter=",", dtype=np.int64, ndmin=2)
        rej = np.loadtxt(spec["rejected"], delimiter=",", dtype=np.int64, ndmin=2)
    elif "synthetic" in spec:
        syn = spec["synthetic"]
        acc, rej = compas_like_pools(
            n_accepted=int(syn.get("n_accepted", 717)),
            n_rejected=int(syn.get("n_rejected", 560)),
            d=int(syn.get("d", 20)),
            R=int(syn.get("R", 10)),
            seed=int(syn.get("seed", 0)),
        )
    else:
        raise ValueError("sampled leakage needs accepted/rejected paths or a synthetic block")
    acc, rej = unique_rows(acc), unique_rows(rej)
    if len(acc) == 0 or len(rej) == 0:
        raise ValueError("empty pools")
    return acc, rej


def compas_like_pools(n_accepted: int = 717, n_rejected: int = 560, d: int = 20, R: int = 10, seed: int = 0):
    """Quantized mixed pools shaped like the COMPAS preprocessing output:
    a few ordinal features on [0:R] and one-hot blocks on {0, R}."""
    rng = np.random.default_rng(seed)
    n_ord = min(5, d)

    def draw(n, shift):
        ordinal = np.clip(rng.poisson(2.0 + shift, size=(n, n_ord)), 0, R)
        onehot = (rng.random((n, d - n_ord)) < 0.3 + 0.1 * shift) * R
        return np.column_stack([ordinal, onehot]).astype(np.int64)

    acc = unique_rows(draw(3 * n_accepted, 0.0))
    rej = unique_rows(draw(3 * n_rejected, 1.0))
    acc_set = {tuple(r) for r in acc}
    rej = np.array([r for r in rej if tuple(r) not in acc_set], dtype=np.int64)
    acc = acc[rng.permutation(len(acc))[:n_accepted]]
    rej = rej[rng.permutation(len(rej))[:n_rejected]]
    return acc, rej


def reports_to_csv(reports: list[LeakageReport]) -> str:
    buf = io.StringIO()
    rows = [r.row() for r in reports]
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def tradeoff_to_csv(result: TradeoffResult) -> str:
    buf = io.StringIO()
    rows = result.rows()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
