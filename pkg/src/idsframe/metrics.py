"""Detection metrics: TPR/FPR, ROC/AUC, confusion matrices, two-level CV aggregation."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

METRIC_KEYS = ("auc", "tpr", "fpr")


class DegenerateLabelsError(ValueError):
    pass


class MissingFoldError(ValueError):
    pass


def _check_binary_truth(truth: np.ndarray) -> tuple[int, int]:
    pos = int(np.sum(truth == 1))
    neg = int(np.sum(truth == 0))
    if pos + neg != len(truth):
        raise ValueError("truth labels must be 0/1")
    if pos == 0:
        raise DegenerateLabelsError("truth contains no positive (anomaly) samples")
    if neg == 0:
        raise DegenerateLabelsError("truth contains no negative (normal) samples")
    return pos, neg


def tpr_fpr(predicted, truth) -> tuple[float, float]:
    predicted = np.asarray(predicted).astype(np.int64)
    truth = np.asarray(truth).astype(np.int64)
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    pos, neg = _check_binary_truth(truth)
    tp = int(np.sum((predicted == 1) & (truth == 1)))
    fp = int(np.sum((predicted == 1) & (truth == 0)))
    return tp / pos, fp / neg


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # score threshold reached at each point; +inf for the origin

    def to_csv(self) -> str:
        rows = ["threshold,fpr,tpr"]
        rows += [f"{t!r},{f!r},{p!r}" for t, f, p in zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist())]
        return "\n".join(rows) + "\n"


def roc_auc(scores, truth) -> tuple[RocCurve, float]:
    """ROC by sweeping every distinct score, AUC by trapezoids.

    Equal scores form a single sweep step, so tied positive/negative pairs
    contribute one half, matching the Mann-Whitney statistic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(np.int64)
    if scores.shape != truth.shape:
        raise ValueError(f"length mismatch: {scores.shape} vs {truth.shape}")
    pos, neg = _check_binary_truth(truth)
    order = np.argsort(-scores, kind="mergesort")
    s_desc = scores[order]
    fp, tp = _kernels.roc_counts(s_desc, truth[order])
    last_of_group = np.r_[s_desc[1:] != s_desc[:-1], True]
    thresholds = np.r_[np.inf, s_desc[last_of_group]]
    fpr = fp / neg
    tpr = tp / pos
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds), auc


def auc_from_points(points: Iterable[tuple[float, float]]) -> float:
    """Trapezoidal area under (fpr, tpr) points, sorted and with both endpoints added."""
    pts = sorted(set([(0.0, 0.0), (1.0, 1.0), *((float(f), float(t)) for f, t in points)]))
    f = np.array([p[0] for p in pts])
    t = np.array([p[1] for p in pts])
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2.0))


def confusion_matrix(true, pred, n_classes: int | None = None) -> np.ndarray:
    """Rows are true classes, columns predicted; integer class ids."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if n_classes is None:
        n_classes = int(max(true.max(initial=-1), pred.max(initial=-1)) + 1)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def tpr_fpr_from_confusion(cm: np.ndarray) -> tuple[float, float]:
    """For a 2x2 matrix with class 1 = anomaly."""
    tn, fp = cm[0]
    fn, tp = cm[1]
    return tp / (tp + fn), fp / (fp + tn)


def render_confusion(cm: np.ndarray, names: Sequence[str]) -> str:
    width = max(8, *(len(n) for n in names)) + 1
    head = "true\\pred".ljust(width) + "".join(n.rjust(width) for n in names)
    lines = [head]
    for name, row in zip(names, cm):
        lines.append(name.ljust(width) + "".join(str(v).rjust(width) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    method: str
    sampleset: int
    fold: int
    auc: float
    tpr: float
    fpr: float


@dataclass
class EvaluationReport:
    per_fold: list[FoldResult]
    per_sampleset_mean: dict[str, dict[int, dict[str, float]]]
    grand_mean: dict[str, dict[str, float]]
    config_snapshot: dict = field(default_factory=dict)
    confusion: list[list[int]] | None = None

    def to_dict(self) -> dict:
        return {
            "per_fold": [asdict(r) for r in sorted(self.per_fold, key=lambda r: (r.method, r.sampleset, r.fold))],
            "per_sampleset_mean": {m: {str(s): v for s, v in sorted(d.items())}
                                   for m, d in sorted(self.per_sampleset_mean.items())},
            "grand_mean": dict(sorted(self.grand_mean.items())),
            "config_snapshot": self.config_snapshot,
            "confusion": self.confusion,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def aggregate(results: Sequence[FoldResult], samplesets: Sequence[int] = range(5), k_folds: int = 3,
              methods: Sequence[str] | None = None, config_snapshot: dict | None = None) -> EvaluationReport:
    """Mean over folds within each SampleSet, then mean over SampleSets.

    Every (method, sampleset, fold) combination must be present; pass an
    explicit ``samplesets`` subset for reduced runs.
    """
    methods = sorted({r.method for r in results}) if methods is None else list(methods)
    have = {(r.method, r.sampleset, r.fold): r for r in results}
    missing = [(m, s, f) for m in methods for s in samplesets for f in range(k_folds) if (m, s, f) not in have]
    if missing:
        listed = ", ".join(f"{m}/sampleset{s}/fold{f}" for m, s, f in missing)
        raise MissingFoldError(f"missing fold results: {listed}")
    per_ss: dict[str, dict[int, dict[str, float]]] = defaultdict(dict)
    grand: dict[str, dict[str, float]] = {}
    for m in methods:
        for s in samplesets:
            rows = [have[(m, s, f)] for f in range(k_folds)]
            per_ss[m][s] = {key: float(np.mean([getattr(r, key) for r in rows])) for key in METRIC_KEYS}
        grand[m] = {key: float(np.mean([per_ss[m][s][key] for s in samplesets])) for key in METRIC_KEYS}
    kept = [have[(m, s, f)] for m in methods for s in samplesets for f in range(k_folds)]
    return EvaluationReport(kept, dict(per_ss), grand, config_snapshot or {})
