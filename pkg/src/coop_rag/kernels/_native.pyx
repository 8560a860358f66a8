# cython: language_level=3
"""Compiled scoring kernels: dense scan, BM25 accumulation, MMR selection.

Mirrors ``coop_rag.kernels.fallback``; the dispatcher in
``coop_rag.kernels`` prefers this module when the build produced it.
Dot products accumulate in float64 regardless of the float32 storage dtype.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "native"


def dot_scan(cnp.ndarray[cnp.float32_t, ndim=2] matrix,
             query):
    cdef cnp.ndarray[cnp.float32_t, ndim=1] q = \
        np.ascontiguousarray(query, dtype=np.float32)
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t d = matrix.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef cnp.float32_t[:, ::1] m = np.ascontiguousarray(matrix)
    cdef cnp.float32_t[::1] qv = q
    cdef cnp.float64_t[::1] ov = out
    cdef Py_ssize_t i, j
    cdef double acc
    if n == 0:
        return out
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += <double> m[i, j] * <double> qv[j]
            ov[i] = acc
    return out


def bm25_accumulate(Py_ssize_t n,
                    rows,
                    tfs,
                    idfs,
                    k1norm,
                    double k1):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef cnp.int64_t[::1] rv = np.ascontiguousarray(rows, dtype=np.int64)
    cdef cnp.float64_t[::1] tv = np.ascontiguousarray(tfs, dtype=np.float64)
    cdef cnp.float64_t[::1] iv = np.ascontiguousarray(idfs, dtype=np.float64)
    cdef cnp.float64_t[::1] kv = np.ascontiguousarray(k1norm, dtype=np.float64)
    cdef cnp.float64_t[::1] ov = out
    cdef Py_ssize_t e, m = rv.shape[0]
    cdef double tf
    with nogil:
        for e in range(m):
            tf = tv[e]
            ov[rv[e]] += iv[e] * tf * (k1 + 1.0) / (tf + kv[rv[e]])
    return out


def mmr_select(scores, vectors, Py_ssize_t k, double lam):
    cdef cnp.float64_t[::1] sv = np.ascontiguousarray(scores, dtype=np.float64)
    cdef cnp.float32_t[:, ::1] mv = np.ascontiguousarray(vectors, dtype=np.float32)
    cdef Py_ssize_t n = sv.shape[0]
    cdef Py_ssize_t d = mv.shape[1] if n > 0 else 0
    cdef Py_ssize_t take = k if k < n else n
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.empty(take, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] finals = np.empty(take, dtype=np.float64)
    if take == 0:
        return order, finals
    cdef cnp.ndarray[cnp.float64_t, ndim=1] max_sim_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.float64_t[::1] max_sim = max_sim_arr
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] selected_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] selected = selected_arr
    cdef cnp.int64_t[::1] order_v = order
    cdef cnp.float64_t[::1] finals_v = finals
    cdef Py_ssize_t r, i, j, pick
    cdef double best, val, acc
    with nogil:
        for r in range(take):
            pick = -1
            best = 0.0
            for i in range(n):
                if selected[i]:
                    continue
                val = sv[i] - lam * max_sim[i]
                if pick < 0 or val > best:
                    best = val
                    pick = i
            order_v[r] = pick
            finals_v[r] = best
            selected[pick] = 1
            if r + 1 < take:
                for i in range(n):
                    if selected[i]:
                        continue
                    acc = 0.0
                    for j in range(d):
                        acc += <double> mv[i, j] * <double> mv[pick, j]
                    if acc > max_sim[i]:
                        max_sim[i] = acc
    return order, finals
