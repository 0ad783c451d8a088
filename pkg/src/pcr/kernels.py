"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting ``PCR_PURE_PYTHON=1``
forces the numpy fallback.  Both backends take and return canonical residues.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels
from .field import field_dtype, to_field

_c = None
if os.environ.get("PCR_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernels as _c
    except ImportError:
        _c = None

BACKEND = "cython" if _c is not None else "python"


def _i64(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.int64))


def sq_dists(db, v, q: int, backend: str | None = None) -> np.ndarray:
    if _use_c(backend):
        return to_field(_c.sq_dists(_i64(db), _i64(v), int(q)), q)
    dt = field_dtype(q)
    return _pykernels.sq_dists(np.asarray(db, dtype=dt), np.asarray(v, dtype=dt), q)


def wsq_dists(db, v, w, q: int, backend: str | None = None) -> np.ndarray:
    if _use_c(backend):
        return to_field(_c.wsq_dists(_i64(db), _i64(v), _i64(w), int(q)), q)
    dt = field_dtype(q)
    return _pykernels.wsq_dists(
        np.asarray(db, dtype=dt), np.asarray(v, dtype=dt), np.asarray(w, dtype=dt), q
    )


def champion_scan(r, bound: int, q: int, backend: str | None = None) -> int:
    if _use_c(backend):
        return int(_c.champion_scan(_i64(r), int(bound), int(q)))
    return _pykernels.champion_scan(np.asarray(r), bound, q)


def _use_c(backend: str | None) -> bool:
    if backend is None:
        return _c is not None
    if backend == "cython":
        if _c is None:
            raise RuntimeError("compiled kernels are not built")
        return True
    if backend == "python":
        return False
    raise ValueError(f"unknown backend {backend!r}")
