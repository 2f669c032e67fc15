"""Comparison detectors: KMeans-only, one-class SVM, and GANomaly without stage-1 filtering."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.svm import OneClassSVM

from . import ganomaly
from .audit import training_zone
from .cluster import ClusterModel, fit_kmeans
from .data import features_of
from .metrics import auc_from_points, tpr_fpr


@dataclass
class BaselineResult:
    method: str
    roc_points: list[tuple[float, float]]  # (fpr, tpr), sorted, with (0,0) and (1,1)
    scores: np.ndarray | None = None
    thresholds: list[float] = field(default_factory=list)

    @property
    def auc(self) -> float:
        return auc_from_points(self.roc_points)


def _sorted_roc(points) -> list[tuple[float, float]]:
    return sorted(set([(0.0, 0.0), (1.0, 1.0), *points]))


class KMeansOnly:
    """Flags every sample of a cluster smaller than the size threshold as anomalous.

    Held-out samples are assigned to the nearest training center and inherit
    that cluster's training-fold size.
    """

    def __init__(self, model: ClusterModel):
        self.model = model

    @classmethod
    def fit(cls, train, k: int, seed: int = 0) -> "KMeansOnly":
        return cls(fit_kmeans(train, k, seed=seed))

    def cluster_sizes_of(self, X=None) -> np.ndarray:
        if X is None:
            labels = self.model.assignments
        else:
            labels, _ = self.model.predict(np.asarray(X, dtype=np.float64))
        return self.model.cluster_sizes[labels]

    def detect(self, threshold: float, X=None) -> np.ndarray:
        return (self.cluster_sizes_of(X) < threshold).astype(np.int64)

    def scores(self, X=None) -> np.ndarray:
        # smaller cluster = more anomalous; sweeping this score visits the same points as the size sweep
        return -self.cluster_sizes_of(X).astype(np.float64)

    def sweep_thresholds(self) -> list[float]:
        n = int(self.model.cluster_sizes.sum())
        sizes = sorted(set(int(s) for s in self.model.cluster_sizes if s > 0))
        return sorted({0.0, *(float(s) for s in sizes), float(n + 1)})


def kmeans_only_detect(train, k: int, truth, size_thresholds=None, seed: int = 0, test=None) -> BaselineResult:
    """One (fpr, tpr) point per cluster-size threshold, evaluated on ``test`` (default: ``train``)."""
    det = KMeansOnly.fit(train, k, seed)
    thresholds = det.sweep_thresholds() if size_thresholds is None else list(size_thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("size thresholds must be sorted ascending")
    X = None if test is None else features_of(test)
    points = []
    for t in thresholds:
        tpr, fpr = tpr_fpr(det.detect(t, X), truth)
        points.append((fpr, tpr))
    return BaselineResult("kmeans_only", _sorted_roc(points), det.scores(X), thresholds)


@dataclass
class OCSVMConfig:
    nu: float = 0.1
    gamma: str | float = "auto"  # "auto" = 1 / n_features
    kernel: str = "rbf"


def ocsvm_detect(train, test, config: OCSVMConfig | None = None) -> np.ndarray:
    """Negated OCSVM decision values on ``test``: higher means more anomalous."""
    config = config or OCSVMConfig()
    with training_zone("baseline.ocsvm"):
        Xtr = np.asarray(features_of(train), dtype=np.float64)
    if len(Xtr) < 2 or np.all(Xtr == Xtr[0]):
        raise ValueError("OCSVM needs at least two distinct training points")
    Xte = np.asarray(features_of(test), dtype=np.float64)
    if len(Xte) == 0:
        return np.zeros(0, dtype=np.float64)
    svm = OneClassSVM(kernel=config.kernel, nu=config.nu, gamma=config.gamma).fit(Xtr)
    return -svm.decision_function(Xte)


def ganomaly_alone(train, test, config: ganomaly.ScorerConfig | None = None,
                   quantile: float = 0.90) -> tuple[ganomaly.AnomalyScorer, ganomaly.ScoreVector]:
    """Stage-2 scorer trained on the whole training fold, no stage-1 filtering."""
    scorer = ganomaly.train_scorer(train, config)
    cut = ganomaly.operating_cut(scorer.score(train), quantile)
    return scorer, ganomaly.score_vector(scorer.score(test), cut)
