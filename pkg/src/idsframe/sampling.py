"""SampleSet construction and stratified k-fold assignment."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Per-SampleSet (normal, anomaly) counts used at full scale.
DEFAULT_COUNTS = {
    "nsl_kdd": (13460, 1500),
    "cic_ids2018": (20000, 2230),
    "ton_iot_win10": (1948, 217),
}
N_SAMPLESETS = 5
ANOMALY_FRACTION_RANGE = (0.095, 0.105)


class InsufficientRowsError(ValueError):
    pass


@dataclass
class SampleSet:
    indices: np.ndarray  # sorted row indices into the source matrix
    normal_count: int
    anomaly_count: int
    folds: list[np.ndarray] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def anomaly_fraction(self) -> float:
        return self.anomaly_count / self.size

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train, test) source indices for one CV fold."""
        test = self.folds[fold]
        train = np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != fold]))
        return train, test


@dataclass
class SampleSetBundle:
    sample_sets: list[SampleSet]
    seed: int
    k_folds: int = 3

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "k_folds": self.k_folds,
            "sample_sets": [
                {"normal_count": s.normal_count, "anomaly_count": s.anomaly_count,
                 "indices": s.indices.tolist(), "folds": [f.tolist() for f in s.folds]}
                for s in self.sample_sets
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleSetBundle":
        sets = [SampleSet(np.asarray(s["indices"], dtype=np.int64), s["normal_count"], s["anomaly_count"],
                          [np.asarray(f, dtype=np.int64) for f in s["folds"]])
                for s in d["sample_sets"]]
        return cls(sets, d["seed"], d.get("k_folds", 3))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "SampleSetBundle":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_samplesets(binary_labels: np.ndarray, counts: tuple[int, int], seed: int,
                    n_sets: int = N_SAMPLESETS, k_folds: int = 3) -> SampleSetBundle:
    """Draw ``n_sets`` disjoint SampleSets, each with ``counts`` = (normal, anomaly) rows.

    Rows are drawn uniformly without replacement; the label vector is only
    used to know which pool a row belongs to.
    """
    y = np.asarray(binary_labels)
    n_norm, n_anom = counts
    normal_idx = np.flatnonzero(y == 0)
    anom_idx = np.flatnonzero(y == 1)
    need_n, need_a = n_sets * n_norm, n_sets * n_anom
    if len(normal_idx) < need_n or len(anom_idx) < need_a:
        raise InsufficientRowsError(
            f"{n_sets} SampleSets of ({n_norm} normal, {n_anom} anomalous) need {need_n} normal and "
            f"{need_a} anomalous rows; source has {len(normal_idx)} normal and {len(anom_idx)} anomalous")
    rng = np.random.default_rng(seed)
    pick_n = rng.permutation(normal_idx)[:need_n].reshape(n_sets, n_norm)
    pick_a = rng.permutation(anom_idx)[:need_a].reshape(n_sets, n_anom)
    sets = []
    for s in range(n_sets):
        idx = np.sort(np.concatenate([pick_n[s], pick_a[s]]))
        ss = SampleSet(idx, n_norm, n_anom)
        ss.folds = cv_folds(idx, y[idx], k_folds, seed=seed * 1000 + s)
        sets.append(ss)
    return SampleSetBundle(sets, seed, k_folds)


def cv_folds(indices: np.ndarray, labels: np.ndarray | None, k: int = 3, seed: int = 0) -> list[np.ndarray]:
    """Stratified k-fold partition of ``indices``.

    Anomalies are shuffled and dealt round-robin, then normals continue the
    deal where the anomalies stopped, so fold sizes differ by at most one and
    each class is spread as evenly as possible.
    """
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise ValueError("cannot split an empty SampleSet")
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = np.zeros(len(indices), dtype=np.int64)
    labels = np.asarray(labels)
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == 1)),
                            rng.permutation(np.flatnonzero(labels != 1))])
    # randomise which folds receive the remainder rows
    fold_of_slot = rng.permutation(k)
    folds = [[] for _ in range(k)]
    for pos, row in enumerate(order):
        folds[fold_of_slot[pos % k]].append(indices[row])
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]
