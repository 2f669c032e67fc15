"""Stage 3: attack-category CNN with ADASYN oversampling."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.neighbors import NearestNeighbors
from torch import nn
from torch.nn import functional as F

from .data import NORMAL_CATEGORY, FeatureSchema

log = logging.getLogger(__name__)

PROB_CLIP = 1e-15


@dataclass
class AttackTaxonomy:
    categories: list[str]
    mapping: dict[str, str] = field(default_factory=dict)  # raw label -> category

    def __post_init__(self):
        if len(self.categories) < 2:
            raise ValueError(f"need at least 2 attack categories, got {self.categories}")
        if NORMAL_CATEGORY in {c.lower() for c in self.categories}:
            raise ValueError("the normal class is not an attack category")
        unknown = set(self.mapping.values()) - set(self.categories)
        if unknown:
            raise ValueError(f"mapping targets undeclared categories: {sorted(unknown)}")

    @classmethod
    def from_schema(cls, schema: FeatureSchema) -> "AttackTaxonomy":
        return cls(list(schema.categories), dict(schema.attack_categories))

    @property
    def n_att(self) -> int:
        return len(self.categories)

    def index(self, labels: Sequence[str]) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.categories)}
        out = np.empty(len(labels), dtype=np.int64)
        for i, lab in enumerate(labels):
            lab = self.mapping.get(lab, lab)
            if lab not in lookup:
                raise ValueError(f"label {lab!r} is not an attack category of {self.categories}")
            out[i] = lookup[lab]
        return out


# ---------------------------------------------------------------------------
# ADASYN
# ---------------------------------------------------------------------------

def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="mergesort")
        base[order[:short]] += 1
    return base


def adasyn_resample(X, y, target: int | None = None, neighbors: int = 5, seed: int = 0):
    """Oversample every class with fewer than ``target`` rows up to ``target``.

    Minority rows whose ``neighbors``-neighbourhood (over all classes) holds
    more foreign rows get proportionally more synthetic children; each child
    is ``x_i + lam * (x_nn - x_i)`` with ``x_nn`` one of the same-class
    neighbours of ``x_i`` and ``lam ~ U[0, 1]``.  Classes with no more than
    ``neighbors`` rows are padded by random duplication instead.  Original
    rows come first and are left untouched.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValueError("ADASYN needs at least two classes")
    if target is None:
        target = int(counts.max())
    rng = np.random.default_rng(seed)
    nn_all = NearestNeighbors(n_neighbors=min(neighbors + 1, len(X))).fit(X)
    new_X, new_y = [X], [y]
    for cls, count in zip(classes, counts):
        deficit = int(target - count)
        if deficit <= 0:
            continue
        rows = np.flatnonzero(y == cls)
        Xc = X[rows]
        if count <= neighbors:
            log.warning("class %r has %d rows (<= %d neighbours); duplicating instead of ADASYN",
                        cls, count, neighbors)
            pick = rng.integers(0, count, size=deficit)
            new_X.append(Xc[pick])
            new_y.append(np.full(deficit, cls, dtype=y.dtype))
            continue
        nbr = nn_all.kneighbors(Xc, return_distance=False)[:, 1:]
        ratio = np.mean(y[nbr] != cls, axis=1)
        if ratio.sum() == 0:
            # class sits in a region with no foreign neighbours: spread evenly
            ratio = np.ones_like(ratio)
        per_row = _largest_remainder(ratio / ratio.sum(), deficit)
        same = NearestNeighbors(n_neighbors=neighbors + 1).fit(Xc).kneighbors(Xc, return_distance=False)[:, 1:]
        base = np.repeat(np.arange(count), per_row)
        mate = same[base, rng.integers(0, neighbors, size=len(base))]
        lam = rng.uniform(0.0, 1.0, size=(len(base), 1))
        new_X.append(Xc[base] + lam * (Xc[mate] - Xc[base]))
        new_y.append(np.full(len(base), cls, dtype=y.dtype))
    return np.vstack(new_X), np.concatenate(new_y)


# ---------------------------------------------------------------------------
# CNN
# ---------------------------------------------------------------------------

@dataclass
class ClassifierConfig:
    conv_layers: tuple[tuple[int, int], ...] = ((32, 3), (64, 3))  # (kernels, kernel size)
    pool_size: int = 2
    dense_units: int = 128
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    patience: int = 5
    adasyn_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        self.conv_layers = tuple((int(a), int(b)) for a, b in self.conv_layers)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class AttackCNN(nn.Module):
    def __init__(self, n_features: int, n_classes: int, cfg: ClassifierConfig):
        super().__init__()
        layers: list[nn.Module] = []
        c_in, length = 1, n_features
        for kernels, size in cfg.conv_layers:
            layers += [nn.Conv1d(c_in, kernels, size, padding=size // 2), nn.ReLU(),
                       nn.MaxPool1d(cfg.pool_size, ceil_mode=True)]
            length = -(-(length + 2 * (size // 2) - size + 1) // cfg.pool_size)
            c_in = kernels
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Sequential(
            nn.Flatten(), nn.Linear(c_in * length, cfg.dense_units), nn.ReLU(),
            nn.Linear(cfg.dense_units, n_classes))

    def forward(self, x):
        return self.classifier(self.features(x.unsqueeze(1)))


class ClassifierModel:
    def __init__(self, n_features: int, taxonomy: AttackTaxonomy, config: ClassifierConfig):
        self.n_features = n_features
        self.taxonomy = taxonomy
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.net = AttackCNN(n_features, taxonomy.n_att, config)
        self.epoch_losses: list[float] = []

    @torch.no_grad()
    def predict_proba(self, X, batch_size: int = 8192) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"classifier expects {self.n_features} features, got shape {X.shape}")
        self.net.eval()
        if len(X) == 0:
            return np.zeros((0, self.taxonomy.n_att))
        out = [torch.softmax(self.net(torch.from_numpy(X[s:s + batch_size])).double(), dim=1)
               for s in range(0, len(X), batch_size)]
        return torch.cat(out).numpy()

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def save(self, path: str | Path) -> None:
        torch.save({"n_features": self.n_features, "taxonomy": asdict(self.taxonomy),
                    "config": asdict(self.config), "state": self.net.state_dict(),
                    "epoch_losses": self.epoch_losses}, path)

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierModel":
        blob = torch.load(path, weights_only=False)
        model = cls(blob["n_features"], AttackTaxonomy(**blob["taxonomy"]), ClassifierConfig.from_dict(blob["config"]))
        model.net.load_state_dict(blob["state"])
        model.epoch_losses = blob["epoch_losses"]
        return model


def train_classifier(X, labels: Sequence[str], taxonomy: AttackTaxonomy,
                     config: ClassifierConfig | None = None) -> ClassifierModel:
    """Fit the CNN with Adam + categorical cross-entropy on attack rows only.

    Training stops early once the epoch loss has not improved for
    ``config.patience`` epochs; the best-loss weights are kept.
    """
    config = config or ClassifierConfig()
    labels = np.asarray(labels, dtype=object)
    if any(str(lab).lower() == NORMAL_CATEGORY for lab in labels):
        raise ValueError("stage-3 training data must contain attack rows only (found 'normal')")
    y = taxonomy.index(labels)
    if len(np.unique(y)) < 2:
        raise ValueError("stage-3 training needs at least two attack categories present")
    X = np.asarray(X, dtype=np.float32)
    model = ClassifierModel(X.shape[1], taxonomy, config)
    net = model.net
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    Xt, yt = torch.from_numpy(X), torch.from_numpy(y)
    gen = torch.Generator().manual_seed(config.seed)
    best, best_state, stale = np.inf, None, 0
    for epoch in range(config.epochs):
        net.train()
        total = 0.0
        for idx in torch.randperm(len(Xt), generator=gen).split(config.batch_size):
            loss = F.cross_entropy(net(Xt[idx]), yt[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        epoch_loss = total / len(Xt)
        model.epoch_losses.append(epoch_loss)
        log.debug("cnn epoch %d loss %.5f", epoch, epoch_loss)
        if epoch_loss < best - 1e-7:
            best, stale = epoch_loss, 0
            best_state = {k: v.clone() for k, v in net.state_dict().items()}
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    return model


# ---------------------------------------------------------------------------
# log-loss
# ---------------------------------------------------------------------------

def multiclass_log_loss(proba, true_idx) -> float:
    """Mean negative log-probability of the true class, probabilities clipped to [1e-15, 1-1e-15]."""
    P = np.clip(np.asarray(proba, dtype=np.float64), PROB_CLIP, 1 - PROB_CLIP)
    t = np.asarray(true_idx, dtype=np.int64)
    return float(-np.mean(np.log(P[np.arange(len(t)), t])))


def class_priors(true_idx, n_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(true_idx, dtype=np.int64), minlength=n_classes).astype(np.float64)
    return counts / counts.sum()


def base_log_loss(priors, true_idx) -> float:
    """Log-loss of a constant predictor that always outputs ``priors``."""
    priors = np.asarray(priors, dtype=np.float64)
    t = np.asarray(true_idx, dtype=np.int64)
    return multiclass_log_loss(np.broadcast_to(priors, (len(t), len(priors))), t)


def predictions_csv(model: ClassifierModel, proba: np.ndarray, true_idx, sample_index=None) -> str:
    cats = model.taxonomy.categories
    idx = np.arange(len(proba)) if sample_index is None else np.asarray(sample_index)
    head = ["sample_index", "true_category", "predicted_category", *(f"p_{c}" for c in cats)]
    pred = np.argmax(proba, axis=1)
    rows = [",".join(head)]
    for i, t, p, row in zip(idx.tolist(), true_idx, pred, proba):
        rows.append(",".join([str(i), cats[t], cats[p], *(repr(float(v)) for v in row)]))
    return "\n".join(rows) + "\n"
