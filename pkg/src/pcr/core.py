"""Data model shared by every scheme: configuration, database, inputs,
randomness, queries, answers and results."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .field import (
    FieldError,
    VandermondeMatrix,
    check_modulus,
    field_bound,
    sample_uniform,
    to_field,
    uniform_below,
)

VARIANTS = ("baseline", "diff", "mask")
SEED_BYTES = 32
SESSION_BYTES = 16


class ConfigError(ValueError):
    pass


def scheme_id(variant: str, weighted: bool) -> int:
    """Wire identifier: 0-2 for baseline/diff/mask, 3-5 for their weighted forms."""
    return VARIANTS.index(variant) + (3 if weighted else 0)


def scheme_from_id(sid: int) -> tuple[str, bool]:
    if not 0 <= sid < 6:
        raise ConfigError(f"unknown scheme id {sid}")
    return VARIANTS[sid % 3], sid >= 3


def scheme_name(variant: str, weighted: bool) -> str:
    return f"{variant}{'+' if weighted else ''}"


@dataclass(frozen=True)
class SchemeConfig:
    """Public parameters agreed by the client and all servers.

    ``strict=False`` skips the worst-case field-size check; it exists for
    expanded fields whose correctness is verified instance-wise instead.
    """

    q: int
    R: int
    d: int
    M: int
    variant: str = "baseline"
    weighted: bool = False
    L: int = 1
    d_min: int = 1
    alphas: tuple[int, ...] | None = None
    strict: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        try:
            check_modulus(self.q)
        except FieldError as e:
            raise ConfigError(str(e)) from None
        for name in ("R", "d", "M", "L"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.weighted and self.L != 1:
            raise ConfigError("L must be 1 for unweighted schemes")
        if self.variant == "diff" and self.M < 2:
            raise ConfigError("diff schemes need M >= 2")
        if self.variant == "mask" and self.d_min < 1:
            raise ConfigError("mask schemes need d_min >= 1")
        if self.strict and self.q <= self.bound_for_field:
            raise ConfigError(
                f"q={self.q} must exceed {self.bound_for_field} for {self.name}"
            )
        alphas = self.alphas or tuple(range(1, self.N + 1))
        alphas = tuple(int(a) % self.q for a in alphas)
        if len(alphas) != self.N:
            raise ConfigError(f"{self.name} needs {self.N} evaluation points, got {len(alphas)}")
        if len(set(alphas)) != self.N:
            raise ConfigError("evaluation points must be distinct")
        if 0 in alphas:
            # a zero point would hand that server the unpadded input
            raise ConfigError("evaluation points must be non-zero mod q")
        object.__setattr__(self, "alphas", alphas)

    @property
    def N(self) -> int:
        return 3 if self.weighted else 2

    @property
    def name(self) -> str:
        return scheme_name(self.variant, self.weighted)

    @property
    def scheme_id(self) -> int:
        return scheme_id(self.variant, self.weighted)

    @property
    def distance_bound(self) -> int:
        """Largest possible (weighted) squared distance, R^2 L d."""
        return self.R * self.R * self.L * self.d

    @property
    def bound_for_field(self) -> int:
        return field_bound(self.R, self.d, self.L, self.variant)

    @property
    def answer_len(self) -> int:
        return self.M - 1 if self.variant == "diff" else self.M

    def vandermonde(self) -> VandermondeMatrix:
        return VandermondeMatrix(self.alphas, self.q)

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "R": self.R,
            "d": self.d,
            "M": self.M,
            "variant": self.variant,
            "weighted": self.weighted,
            "L": self.L,
            "d_min": self.d_min,
            "alphas": list(self.alphas),
            "strict": self.strict,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SchemeConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        if known.get("alphas") is not None:
            known["alphas"] = tuple(known["alphas"])
        return cls(**known)


def cost_of(config: SchemeConfig) -> tuple[int, int]:
    """(upload, download) symbol counts for one retrieval."""
    per_server_up = 2 * config.d if config.weighted else config.d
    return config.N * per_server_up, config.N * config.answer_len


@dataclass(frozen=True)
class Database:
    samples: np.ndarray
    R: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.int64)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("database needs a non-empty (M, d) array")
        if s.min() < 0 or s.max() > self.R:
            raise ValueError(f"database entries must lie in [0, {self.R}]")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def distances(self, x, w=None) -> np.ndarray:
        """Exact integer (weighted) squared distances to ``x``."""
        diff = self.samples - np.asarray(x, dtype=np.int64)
        sq = diff * diff
        if w is not None:
            sq = sq * np.asarray(w, dtype=np.int64)
        return sq.sum(axis=1)

    @classmethod
    def from_csv(cls, path, R: int) -> "Database":
        return cls(np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2), R)


@dataclass(frozen=True)
class UserInput:
    x: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.int64))
        if self.w is not None:
            object.__setattr__(self, "w", np.asarray(self.w, dtype=np.int64))

    def validate(self, config: SchemeConfig) -> None:
        if self.x.shape != (config.d,):
            raise ValueError(f"x must have {config.d} entries")
        if self.x.min() < 0 or self.x.max() > config.R:
            raise ValueError(f"x entries must lie in [0, {config.R}]")
        if config.weighted:
            if self.w is None:
                raise ValueError("weighted schemes need a weight vector")
            if self.w.shape != (config.d,):
                raise ValueError(f"w must have {config.d} entries")
            if self.w.min() < 1 or self.w.max() > config.L:
                raise ValueError(f"w entries must lie in [1, {config.L}]")
        elif self.w is not None:
            raise ValueError("unweighted schemes take no weight vector")


@dataclass
class ClientRandomness:
    """One-time pads kept by the client; ``Z2`` is only set for weighted schemes."""

    Z: np.ndarray
    Z2: np.ndarray | None = None
    used: bool = field(default=False, compare=False)

    @property
    def Z1(self) -> np.ndarray:
        return self.Z

    @classmethod
    def sample(cls, config: SchemeConfig, rng: np.random.Generator | None = None) -> "ClientRandomness":
        Z = sample_uniform(config.d, config.q, rng)
        Z2 = sample_uniform(config.d, config.q, rng) if config.weighted else None
        return cls(Z, Z2)

    def self_term(self, config: SchemeConfig) -> int:
        """The top-degree coefficient the client can cancel itself.

        ||Z||^2 for unweighted schemes, Z1^t diag(Z2) Z1 for weighted ones.
        """
        q = config.q
        z = [int(v) for v in self.Z]
        if config.weighted:
            z2 = [int(v) for v in self.Z2]
            return sum(a * a % q * b for a, b in zip(z, z2)) % q
        return sum(a * a for a in z) % q


class _Xof:
    """Deterministic uint64 word stream from SHAKE-256 over a labelled header."""

    def __init__(self, header: bytes):
        self._h = hashlib.shake_256(header)
        self._pos = 0

    def __call__(self, k: int) -> np.ndarray:
        end = self._pos + 8 * k
        chunk = self._h.digest(end)[self._pos:end]
        self._pos = end
        return np.frombuffer(chunk, dtype="<u8")


def _stream_header(seed: bytes, session_id: bytes, label: str, length: int) -> bytes:
    return b"PCR-shared|" + seed + b"|" + session_id + b"|" + label.encode() + b"|" + length.to_bytes(8, "little")


@dataclass(frozen=True)
class ServerSharedRandomness:
    zprime1: np.ndarray
    zprime2: np.ndarray | None = None
    mu: np.ndarray | None = None

    @property
    def zprime(self) -> np.ndarray:
        return self.zprime1


def expand_shared_randomness(seed: bytes, config: SchemeConfig, session_id: bytes = bytes(SESSION_BYTES)) -> ServerSharedRandomness:
    """Expand the servers' common seed into the session's pads and masks.

    Each stream (``zprime1``, ``zprime2``, ``mu``) is read from its own
    SHAKE-256 instance keyed by seed, session id, label and length, so
    positions i = 1..len are independent and identical at every server.
    """
    if len(seed) != SEED_BYTES:
        raise ValueError(f"shared seed must be {SEED_BYTES} bytes")
    if len(session_id) != SESSION_BYTES:
        raise ValueError(f"session id must be {SESSION_BYTES} bytes")
    n = config.answer_len

    def stream(label, bound):
        return uniform_below(_Xof(_stream_header(seed, session_id, label, n)), n, bound)

    z1 = stream("zprime1", config.q)
    z2 = stream("zprime2", config.q) if config.weighted else None
    mu = stream("mu", config.d_min) if config.variant == "mask" else None
    return ServerSharedRandomness(z1, z2, mu)


def new_seed() -> bytes:
    return os.urandom(SEED_BYTES)


def new_session_id() -> bytes:
    return os.urandom(SESSION_BYTES)


@dataclass(frozen=True)
class QueryBundle:
    """Per-server queries.  Each entry is (d,) unweighted or (2, d) weighted."""

    per_server: tuple[np.ndarray, ...]

    def for_server(self, n: int) -> np.ndarray:
        return self.per_server[n - 1]

    @property
    def symbols(self) -> int:
        return sum(int(np.size(qn)) for qn in self.per_server)


@dataclass(frozen=True)
class AnswerBundle:
    """Answer symbols from server ``server`` (1-based), ordered by index i."""

    server: int
    values: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass
class RetrievalResult:
    theta_star: int
    revealed: np.ndarray
    cost: tuple[int, int]
    variant: str = "baseline"
    weighted: bool = False
    consistent: bool = True
    mask_ambiguous: bool = False

    @property
    def total_cost(self) -> int:
        return sum(self.cost)


def hex_seed(seed: bytes) -> str:
    return seed.hex()


def parse_seed(text: str) -> bytes:
    seed = bytes.fromhex(text.strip())
    if len(seed) != SEED_BYTES:
        raise ValueError(f"shared seed must be {SEED_BYTES} bytes ({2 * SEED_BYTES} hex chars)")
    return seed


def load_config(path) -> dict:
    """Read a JSON config.  Returns the raw dict with ``scheme`` parsed in place."""
    data = json.loads(Path(path).read_text())
    data["scheme"] = SchemeConfig.from_dict(data.get("scheme", data))
    return data


def save_config(path, scheme: SchemeConfig, **extra) -> None:
    data = {"scheme": scheme.to_dict(), **extra}
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def as_vector(values: Sequence[int] | np.ndarray, q: int) -> np.ndarray:
    return to_field(values, q)
