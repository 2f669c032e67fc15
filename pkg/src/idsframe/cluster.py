"""Stage 1: k-means clustering and selection of probable normal samples."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .audit import training_zone
from .data import features_of


class NoEligibleClusterError(RuntimeError):
    pass


@dataclass
class ClusterModel:
    k: int
    centers: np.ndarray
    assignments: np.ndarray
    cluster_sizes: np.ndarray
    distances: np.ndarray  # Euclidean distance of each training row to its center
    sse_history: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def sse(self) -> float:
        return float(np.sum(self.distances ** 2))

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        labels, d2 = _kernels.assign_labels(X, self.centers)
        return labels, np.sqrt(d2)


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int) -> ClusterModel:
    init = rng.choice(X.shape[0], size=k, replace=False)
    centers = X[np.sort(init)].copy()
    labels, d2 = _kernels.assign_labels(X, centers)
    history = [float(d2.sum())]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        centers = _kernels.update_centers(X, labels, centers)
        new_labels, d2 = _kernels.assign_labels(X, centers)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
    sizes = np.bincount(labels, minlength=k)
    return ClusterModel(k, centers, labels, sizes, np.sqrt(d2), history, it, converged)


def fit_kmeans(data, k: int, seed: int = 0, max_iter: int = 300, n_init: int = 1) -> ClusterModel:
    """Lloyd's k-means with centers initialised on ``k`` random data rows.

    With ``n_init > 1`` the run with the lowest SSE among seeded restarts is kept.
    """
    with training_zone("stage1.fit_kmeans"):
        X = np.ascontiguousarray(features_of(data), dtype=np.float64)
        n = X.shape[0]
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if k > n:
            raise ValueError(f"k={k} exceeds sample count {n}")
        best = None
        for child in np.random.SeedSequence(seed).spawn(n_init):
            model = _lloyd(X, k, np.random.default_rng(child), max_iter)
            if best is None or model.sse < best.sse:
                best = model
        return best


@dataclass(frozen=True)
class SelectionPolicy:
    """Cluster-size threshold and kept fraction per eligible cluster.

    ``th_sz`` is a fraction of the training rows when ``relative`` is true,
    otherwise an absolute count.
    """

    th_sz: float = 0.05
    th_var: float = 0.9
    relative: bool = True

    def __post_init__(self):
        if not 0 < self.th_var <= 1:
            raise ValueError(f"th_var must lie in (0, 1], got {self.th_var}")
        if self.th_sz < 0:
            raise ValueError(f"th_sz must be >= 0, got {self.th_sz}")

    def size_threshold(self, n_samples: int) -> float:
        return self.th_sz * n_samples if self.relative else self.th_sz


def kept_count(th_var: float, cluster_size: int) -> int:
    # epsilon guards products like 0.29 * 100 = 28.999999999999996
    return max(1, math.floor(th_var * cluster_size + 1e-9))


def select_probable_normals(model: ClusterModel, policy: SelectionPolicy) -> np.ndarray:
    """Row indices of the samples closest to the center of every eligible cluster."""
    n = int(model.cluster_sizes.sum())
    threshold = policy.size_threshold(n)
    eligible = np.flatnonzero(model.cluster_sizes > threshold)
    if len(eligible) == 0:
        raise NoEligibleClusterError(
            f"no cluster is larger than th_sz={threshold:g} (sizes {sorted(model.cluster_sizes.tolist())}); "
            "lower th_sz")
    picked = []
    for c in eligible:
        rows = np.flatnonzero(model.assignments == c)
        order = np.lexsort((rows, model.distances[rows]))
        picked.append(rows[order[: kept_count(policy.th_var, len(rows))]])
    return np.sort(np.concatenate(picked))


def selection_summary(model: ClusterModel, policy: SelectionPolicy) -> dict:
    n = int(model.cluster_sizes.sum())
    threshold = policy.size_threshold(n)
    clusters = []
    for c, size in enumerate(model.cluster_sizes.tolist()):
        eligible = size > threshold
        clusters.append({"cluster": c, "size": size, "eligible": bool(eligible),
                         "kept": kept_count(policy.th_var, size) if eligible else 0})
    return {
        "k": model.k, "n_samples": n, "th_sz": policy.th_sz, "th_sz_relative": policy.relative,
        "size_threshold": threshold, "th_var": policy.th_var, "iterations": model.n_iter,
        "converged": model.converged, "sse": model.sse,
        "clusters": clusters, "selected": sum(c["kept"] for c in clusters),
    }
