# cython: language_level=3
# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled scoring and MMR selection loops.

Single pass over the float32 store matrix with float64 accumulation; avoids
the float64 copy the numpy fallback makes on every query.
"""

import numpy as np

NAME = "compiled"


def score_all(const float[:, ::1] matrix, const double[::1] query):
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t d = matrix.shape[1]
    if query.shape[0] != d:
        raise ValueError("matrix/query shapes do not line up")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc = acc + (<double> matrix[i, j]) * query[j]
        out_v[i] = acc
    return out


cdef inline double _dot_rows(const float[:, ::1] cand, Py_ssize_t a, Py_ssize_t b) nogil:
    cdef Py_ssize_t j
    cdef double acc = 0.0
    for j in range(cand.shape[1]):
        acc = acc + (<double> cand[a, j]) * (<double> cand[b, j])
    return acc


def mmr_select(const float[:, ::1] cand,
               const double[::1] rel,
               double lam,
               Py_ssize_t k,
               const long long[::1] tie_rank):
    cdef Py_ssize_t m = cand.shape[0]
    if rel.shape[0] != m or tie_rank.shape[0] != m:
        raise ValueError("rel/tie_rank length must match candidate count")
    if k > m:
        k = m
    if k <= 0:
        return np.empty(0, dtype=np.int64)

    out = np.empty(k, dtype=np.int64)
    cdef long long[::1] out_v = out
    taken_arr = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] taken = taken_arr
    max_sim_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] max_sim = max_sim_arr

    cdef Py_ssize_t i, t, best
    cdef double score, best_score, sim
    cdef long long best_tie

    # First pick maximizes relevance alone.
    best = -1
    best_score = 0.0
    best_tie = 0
    for i in range(m):
        if best < 0 or rel[i] > best_score or (rel[i] == best_score and tie_rank[i] < best_tie):
            best = i
            best_score = rel[i]
            best_tie = tie_rank[i]
    out_v[0] = best
    taken[best] = 1
    if k == 1:
        return out
    for i in range(m):
        max_sim[i] = _dot_rows(cand, i, best)

    for t in range(1, k):
        best = -1
        best_score = 0.0
        best_tie = 0
        for i in range(m):
            if taken[i]:
                continue
            score = lam * rel[i] - (1.0 - lam) * max_sim[i]
            if best < 0 or score > best_score or (score == best_score and tie_rank[i] < best_tie):
                best = i
                best_score = score
                best_tie = tie_rank[i]
        out_v[t] = best
        taken[best] = 1
        if t + 1 < k:
            for i in range(m):
                if taken[i]:
                    continue
                sim = _dot_rows(cand, i, best)
                if sim > max_sim[i]:
                    max_sim[i] = sim
    return out
