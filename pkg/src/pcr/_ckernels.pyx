# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the routines in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint64_t pcr_mulmod(uint64_t a, uint64_t b, uint64_t q) {
        return (uint64_t)(((unsigned __int128)a * b) % q);
    }
    """
    uint64_t pcr_mulmod(uint64_t a, uint64_t b, uint64_t q) nogil


cdef inline uint64_t mulmod(uint64_t a, uint64_t b, uint64_t q) nogil:
    return pcr_mulmod(a, b, q)


cdef inline uint64_t submod(int64_t a, int64_t b, uint64_t q) nogil:
    if a >= b:
        return <uint64_t>(a - b) % q
    return (q - (<uint64_t>(b - a) % q)) % q


def sq_dists(const int64_t[:, :] db, const int64_t[:] v, int64_t q):
    cdef Py_ssize_t M = db.shape[0], d = db.shape[1], i, j
    cdef uint64_t uq = <uint64_t>q, acc, t
    out = np.empty(M, dtype=np.int64)
    cdef int64_t[:] o = out
    with nogil:
        for i in range(M):
            acc = 0
            for j in range(d):
                t = submod(db[i, j], v[j], uq)
                acc = (acc + mulmod(t, t, uq)) % uq
            o[i] = <int64_t>acc
    return out


def wsq_dists(const int64_t[:, :] db, const int64_t[:] v, const int64_t[:] w, int64_t q):
    cdef Py_ssize_t M = db.shape[0], d = db.shape[1], i, j
    cdef uint64_t uq = <uint64_t>q, acc, t
    out = np.empty(M, dtype=np.int64)
    cdef int64_t[:] o = out
    with nogil:
        for i in range(M):
            acc = 0
            for j in range(d):
                t = submod(db[i, j], v[j], uq)
                acc = (acc + mulmod(mulmod(t, t, uq), <uint64_t>w[j], uq)) % uq
            o[i] = <int64_t>acc
    return out


def champion_scan(const int64_t[:] r, int64_t bound, int64_t q):
    cdef Py_ssize_t n = r.shape[0], i
    cdef int64_t theta = 1
    cdef uint64_t acc = 0, uq = <uint64_t>q
    with nogil:
        for i in range(n):
            acc = (acc + <uint64_t>r[i]) % uq
            if acc > <uint64_t>bound:
                continue
            theta = i + 2
            acc = 0
    return theta
