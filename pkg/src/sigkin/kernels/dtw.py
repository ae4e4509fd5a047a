"""Band-constrained DTW accumulation.

Both implementations return ``(distance, path_length)`` and agree bit for bit:
the local cost is accumulated column by column in the same order, and ties
between predecessors resolve diagonal, then vertical, then horizontal.
"""
import math

import numpy as np

from ._accel import PURE_NUMPY, njit_always


def band_halfwidth(m_a, m_b):
    return max(int(math.ceil(m_a / 10.0)), abs(m_a - m_b) + 1)


def _dtw_loops(a, b, halfwidth):
    m_a = a.shape[0]
    m_b = b.shape[0]
    n_col = a.shape[1]
    slope = (m_b - 1) / (m_a - 1) if m_a > 1 else 0.0
    D = np.full((m_a, m_b), np.inf)
    L = np.zeros((m_a, m_b), dtype=np.int64)
    for i in range(m_a):
        centre = i * slope
        lo = max(0, int(math.ceil(centre - halfwidth)))
        hi = min(m_b - 1, int(math.floor(centre + halfwidth)))
        for j in range(lo, hi + 1):
            acc = 0.0
            for k in range(n_col):
                d = a[i, k] - b[j, k]
                acc += d * d
            cost = math.sqrt(acc)
            if i == 0 and j == 0:
                D[i, j] = cost
                L[i, j] = 1
                continue
            best = np.inf
            best_len = 0
            if i > 0 and j > 0:
                best = D[i - 1, j - 1]
                best_len = L[i - 1, j - 1]
            if i > 0 and D[i - 1, j] < best:
                best = D[i - 1, j]
                best_len = L[i - 1, j]
            if j > 0 and D[i, j - 1] < best:
                best = D[i, j - 1]
                best_len = L[i, j - 1]
            D[i, j] = cost + best
            L[i, j] = best_len + 1
    return D[m_a - 1, m_b - 1], L[m_a - 1, m_b - 1]


def dtw_numpy(a, b, halfwidth):
    """Anti-diagonal vectorised DTW; same recursion as the compiled loop."""
    m_a, m_b = a.shape[0], b.shape[0]
    acc = np.zeros((m_a, m_b))
    for k in range(a.shape[1]):
        diff = a[:, k][:, None] - b[:, k][None, :]
        acc += diff * diff
    cost = np.sqrt(acc)
    slope = (m_b - 1) / (m_a - 1) if m_a > 1 else 0.0
    ii = np.arange(m_a)[:, None]
    jj = np.arange(m_b)[None, :]
    centre = ii * slope
    lo = np.maximum(0, np.ceil(centre - halfwidth))
    hi = np.minimum(m_b - 1, np.floor(centre + halfwidth))
    inside = (jj >= lo) & (jj <= hi)

    # padded so that row/col -1 reads inf
    D = np.full((m_a + 1, m_b + 1), np.inf)
    L = np.zeros((m_a + 1, m_b + 1), dtype=np.int64)
    for s in range(m_a + m_b - 1):
        i = np.arange(max(0, s - m_b + 1), min(s, m_a - 1) + 1)
        j = s - i
        if s == 0:
            D[1, 1] = cost[0, 0] if inside[0, 0] else np.inf
            L[1, 1] = 1
            continue
        cand = np.stack((D[i, j], D[i, j + 1], D[i + 1, j]))
        lens = np.stack((L[i, j], L[i, j + 1], L[i + 1, j]))
        pick = np.argmin(cand, axis=0)
        cols = np.arange(i.size)
        best = cand[pick, cols]
        ok = inside[i, j]
        D[i + 1, j + 1] = np.where(ok, cost[i, j] + best, np.inf)
        L[i + 1, j + 1] = np.where(ok, lens[pick, cols] + 1, 0)
    return D[m_a, m_b], L[m_a, m_b]


if PURE_NUMPY:
    dtw_kernel = dtw_numpy
else:
    dtw_kernel = njit_always(_dtw_loops)
