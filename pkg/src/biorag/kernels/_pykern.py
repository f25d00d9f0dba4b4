"""Numpy implementations of the hot search kernels.

Used when the compiled extension is unavailable (or forced via
BIORAG_KERNELS=python). Semantics match the compiled backend: scores are
float64 accumulations over float32 inputs, and exact score ties are broken
by the caller-provided tie rank.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def score_all(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Dot product of every row of a float32 matrix with a float64 query.

    Uses einsum rather than BLAS gemv: gemv's blocked kernels are not
    row-consistent (bit-identical rows can score apart by one ulp), which
    would make exact ties inexact and break deterministic tie-breaking.
    """
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    query = np.asarray(query, dtype=np.float64)
    if matrix.ndim != 2 or query.ndim != 1 or matrix.shape[1] != query.shape[0]:
        raise ValueError("matrix/query shapes do not line up")
    if matrix.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    return np.einsum("ij,j->i", matrix.astype(np.float64), query)


def _argmax_tied(scores: np.ndarray, available: np.ndarray, tie_rank: np.ndarray) -> int:
    idx = np.nonzero(available)[0]
    vals = scores[idx]
    best = vals.max()
    contenders = idx[vals == best]
    return int(contenders[np.argmin(tie_rank[contenders])])


def mmr_select(
    cand: np.ndarray,
    rel: np.ndarray,
    lam: float,
    k: int,
    tie_rank: np.ndarray,
) -> np.ndarray:
    """Greedy maximal-marginal-relevance selection over a candidate pool.

    The first pick maximizes relevance alone; each later pick maximizes
    lam * rel - (1 - lam) * max-similarity-to-selected. Returns candidate
    indices in selection order.
    """
    cand = np.ascontiguousarray(cand, dtype=np.float32)
    rel = np.asarray(rel, dtype=np.float64)
    tie_rank = np.asarray(tie_rank, dtype=np.int64)
    m = cand.shape[0]
    k = min(k, m)
    if k <= 0:
        return np.empty(0, dtype=np.int64)

    wide = cand.astype(np.float64)
    available = np.ones(m, dtype=bool)
    out = np.empty(k, dtype=np.int64)

    best = _argmax_tied(rel, available, tie_rank)
    out[0] = best
    available[best] = False
    if k == 1:
        return out
    # einsum for the same row-consistency reason as score_all
    max_sim = np.einsum("ij,j->i", wide, wide[best])

    for t in range(1, k):
        scores = lam * rel - (1.0 - lam) * max_sim
        best = _argmax_tied(scores, available, tie_rank)
        out[t] = best
        available[best] = False
        if t + 1 < k:
            np.maximum(max_sim, np.einsum("ij,j->i", wide, wide[best]), out=max_sim)
    return out
