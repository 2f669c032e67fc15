"""Hot numeric loops, compiled with numba when available.

Every kernel exists twice: a ``numba.njit`` version and a plain numpy
version with the same signature.  ``IDSFRAME_KERNELS=numpy`` forces the
numpy path (useful for debugging and for platforms without numba);
the default is ``numba`` when it imports cleanly.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def _requested_backend() -> str:
    name = os.environ.get("IDSFRAME_KERNELS", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"IDSFRAME_KERNELS must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        return "numpy"
    return name


BACKEND = _requested_backend()


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def assign_labels_numpy(X, centers):
    """Nearest-center index and squared distance for every row of ``X``.

    Ties go to the lowest center id (``argmin`` returns the first minimum).
    """
    n = X.shape[0]
    k = centers.shape[0]
    d2 = np.empty((n, k), dtype=np.float64)
    for j in range(k):
        diff = X - centers[j]
        d2[:, j] = np.einsum("ij,ij->i", diff, diff)
    labels = np.argmin(d2, axis=1).astype(np.int64)
    return labels, d2[np.arange(n), labels]


def update_centers_numpy(X, labels, old_centers):
    k, dim = old_centers.shape
    sums = np.zeros((k, dim), dtype=np.float64)
    np.add.at(sums, labels, X)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    centers = old_centers.copy()
    nonempty = counts > 0
    centers[nonempty] = sums[nonempty] / counts[nonempty, None]
    return centers


def roc_counts_numpy(scores_desc, truth_desc):
    """Cumulative (FP, TP) after each group of tied scores.

    Inputs must already be sorted by descending score.  The returned arrays
    start with the (0, 0) point.
    """
    truth = truth_desc.astype(np.int64)
    tp = np.cumsum(truth)
    fp = np.cumsum(1 - truth)
    if scores_desc.shape[0] == 0:
        return np.zeros(1, np.int64), np.zeros(1, np.int64)
    last_of_group = np.r_[scores_desc[1:] != scores_desc[:-1], True]
    return np.r_[0, fp[last_of_group]], np.r_[0, tp[last_of_group]]


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def assign_labels_numba(X, centers):
        n, dim = X.shape
        k = centers.shape[0]
        labels = np.empty(n, dtype=np.int64)
        best = np.empty(n, dtype=np.float64)
        for i in range(n):
            b = np.inf
            bj = 0
            for j in range(k):
                s = 0.0
                for f in range(dim):
                    t = X[i, f] - centers[j, f]
                    s += t * t
                if s < b:
                    b = s
                    bj = j
            labels[i] = bj
            best[i] = b
        return labels, best

    @njit(cache=True)
    def update_centers_numba(X, labels, old_centers):
        k, dim = old_centers.shape
        sums = np.zeros((k, dim), dtype=np.float64)
        counts = np.zeros(k, dtype=np.int64)
        for i in range(X.shape[0]):
            c = labels[i]
            counts[c] += 1
            for f in range(dim):
                sums[c, f] += X[i, f]
        centers = old_centers.copy()
        for c in range(k):
            if counts[c] > 0:
                for f in range(dim):
                    centers[c, f] = sums[c, f] / counts[c]
        return centers

    @njit(cache=True)
    def roc_counts_numba(scores_desc, truth_desc):
        n = scores_desc.shape[0]
        fp_out = np.zeros(n + 1, dtype=np.int64)
        tp_out = np.zeros(n + 1, dtype=np.int64)
        m = 1
        tp = 0
        fp = 0
        for i in range(n):
            if truth_desc[i]:
                tp += 1
            else:
                fp += 1
            if i == n - 1 or scores_desc[i + 1] != scores_desc[i]:
                fp_out[m] = fp
                tp_out[m] = tp
                m += 1
        return fp_out[:m], tp_out[:m]

else:  # pragma: no cover
    assign_labels_numba = assign_labels_numpy
    update_centers_numba = update_centers_numpy
    roc_counts_numba = roc_counts_numpy


_TABLE = {
    "numba": (assign_labels_numba, update_centers_numba, roc_counts_numba),
    "numpy": (assign_labels_numpy, update_centers_numpy, roc_counts_numpy),
}


def _contig(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def assign_labels(X, centers):
    return _TABLE[BACKEND][0](_contig(X), _contig(centers))


def update_centers(X, labels, old_centers):
    return _TABLE[BACKEND][1](_contig(X), _contig(labels, np.int64), _contig(old_centers))


def roc_counts(scores_desc, truth_desc):
    return _TABLE[BACKEND][2](_contig(scores_desc), _contig(truth_desc, np.int64))
