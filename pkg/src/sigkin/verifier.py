"""DTW verification over joint-feature matrices with two-stage score normalisation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .kernels.dtw import band_halfwidth, dtw_kernel

GROUP_CHANNELS = {
    "theta": (0, 1, 2, 3, 4, 5),
    # joint 6 never turns under the pen constraint, so its velocity carries nothing
    "omega": (0, 1, 2, 3, 4),
    "tau": (0, 1, 2, 3, 4, 5),
}


class DegenerateReferenceError(ValueError):
    pass


@dataclass(eq=False)
class FeatureMatrix:
    values: np.ndarray
    group: str
    constant_channels: tuple = ()

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("feature matrix must be 2-D with at least one row")

    @property
    def shape(self):
        return self.values.shape

    def scaled(self, c):
        return FeatureMatrix(self.values * c, self.group, self.constant_channels)


@dataclass
class VerificationScore:
    s_R: float
    path_len: int
    s_hat_1: float
    s_hat_2: float
    mu_R: float
    best_ref: int


def regression_derivative(x):
    """Second-order regression slope ``sum_k k (x[i+k] - x[i-k]) / 10`` with edge replication."""
    x = np.asarray(x, dtype=float)
    p = np.concatenate(([x[0]] * 2, x, [x[-1]] * 2))
    return ((p[3:-1] - p[1:-3]) + 2.0 * (p[4:] - p[:-4])) / 10.0


def _minmax(col):
    lo, hi = col.min(), col.max()
    if hi == lo:
        return np.full_like(col, 0.5), True
    return (col - lo) / (hi - lo), False


def _zscore(col):
    sd = col.std()
    if sd == 0:
        return np.zeros_like(col)
    return (col - col.mean()) / sd


def build_feature_matrix(features, group):
    """Min-max each channel, append first and second derivatives, z-score every column.

    Columns are ordered base channels, first derivatives, second derivatives.
    """
    if group not in GROUP_CHANNELS:
        raise ValueError(f"unknown feature group {group!r}")
    raw = features.group(group)[:, GROUP_CHANNELS[group]]
    base = np.empty_like(raw)
    constant = []
    for j in range(raw.shape[1]):
        base[:, j], flat = _minmax(raw[:, j])
        if flat:
            constant.append(GROUP_CHANNELS[group][j])
    d1 = np.column_stack([regression_derivative(c) for c in base.T])
    d2 = np.column_stack([regression_derivative(c) for c in d1.T])
    full = np.hstack((base, d1, d2))
    out = np.column_stack([_zscore(c) for c in full.T])
    return FeatureMatrix(out, group, tuple(constant))


def dtw_distance(a, b, halfwidth=None):
    """Banded DTW between two feature matrices.

    Returns
    -------
    distance : float
        Accumulated Euclidean row distance along the optimal path.
    path_len : int
        Number of cells on that path.
    """
    A = a.values if isinstance(a, FeatureMatrix) else np.ascontiguousarray(a, dtype=float)
    B = b.values if isinstance(b, FeatureMatrix) else np.ascontiguousarray(b, dtype=float)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    if halfwidth is None:
        halfwidth = band_halfwidth(A.shape[0], B.shape[0])
    dist, plen = dtw_kernel(A, B, float(halfwidth))
    return float(dist), int(plen)


@dataclass(frozen=True)
class ReferenceStats:
    mu_R: float
    pairwise: tuple


def reference_stats(refs):
    """Mean path-normalised DTW distance over all reference pairs."""
    if len(refs) < 2:
        raise DegenerateReferenceError("at least two references are needed")
    vals = []
    for i in range(len(refs)):
        for j in range(i + 1, len(refs)):
            d, n = dtw_distance(refs[i], refs[j])
            vals.append(d / n)
    mu = float(np.mean(vals))
    if not mu > 0:
        raise DegenerateReferenceError("references are identical; mu_R is zero")
    return ReferenceStats(mu, tuple(vals))


def score_questioned(q, refs, ref_stats=None):
    stats = ref_stats or reference_stats(refs)
    best, best_len, best_i = np.inf, 0, -1
    for i, r in enumerate(refs):
        d, n = dtw_distance(q, r)
        if d < best:
            best, best_len, best_i = d, n, i
    return VerificationScore(best, best_len, best / best_len, best / stats.mu_R, stats.mu_R,
                             best_i)


SCORE_COLUMNS = ("user", "signature", "label", "s_R", "path_len", "s_hat_1", "s_hat_2")


def scores_to_csv(rows):
    """CSV text for ``(user, key, label, VerificationScore)`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for user, key, label, s in rows:
        w.writerow([user, key, label, repr(s.s_R), s.path_len, repr(s.s_hat_1), repr(s.s_hat_2)])
    return buf.getvalue()
