"""Recompute a run's aggregate numbers from the per-fold score CSVs.

Deliberately shares no metric code with :mod:`idsframe.metrics`: AUC comes
from average ranks (Mann-Whitney U), TPR/FPR from raw counts.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd


def rank_auc(scores: np.ndarray, truth: np.ndarray) -> float:
    ranks = pd.Series(scores).rank(method="average").to_numpy()
    pos = truth == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fold_metrics(fold_dir: Path, method: str) -> dict:
    truth = pd.read_csv(fold_dir / "truth.csv").set_index("sample_index")["label"]
    scores = pd.read_csv(fold_dir / method / "scores.csv").set_index("sample_index")
    y = truth.loc[scores.index].to_numpy()
    pred = scores["predicted"].to_numpy()
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    return {"auc": rank_auc(scores["raw"].to_numpy(), y),
            "tpr": tp / int((y == 1).sum()), "fpr": fp / int((y == 0).sum())}


def reaggregate(run_dir: str | Path) -> dict:
    """Grand means per method, recomputed from CSVs only."""
    run_dir = Path(run_dir)
    per_ss: dict[str, dict[int, list[dict]]] = {}
    for fold_dir in sorted(run_dir.glob("fold_*")):
        info = json.loads((fold_dir / "fold.json").read_text())
        for mdir in sorted(p for p in fold_dir.iterdir() if p.is_dir()):
            if not (mdir / "scores.csv").exists() or not (mdir / ".done").exists():
                continue
            per_ss.setdefault(mdir.name, {}).setdefault(info["sampleset"], []).append(fold_metrics(fold_dir, mdir.name))
    out = {}
    for method, sets in per_ss.items():
        set_means = [{k: float(np.mean([r[k] for r in rows])) for k in ("auc", "tpr", "fpr")} for _, rows in sorted(sets.items())]
        out[method] = {k: float(np.mean([m[k] for m in set_means])) for k in ("auc", "tpr", "fpr")}
    return out


def compare(run_dir: str | Path, tol: float = 1e-9) -> tuple[bool, list[str]]:
    """Check the stored aggregate against the recomputation; returns (ok, diff lines)."""
    run_dir = Path(run_dir)
    stored = json.loads((run_dir / "report" / "aggregate.json").read_text())["grand_mean"]
    fresh = reaggregate(run_dir)
    diffs = []
    for method in sorted(set(stored) | set(fresh)):
        for key in ("auc", "tpr", "fpr"):
            a = stored.get(method, {}).get(key)
            b = fresh.get(method, {}).get(key)
            if a is None or b is None or abs(a - b) > tol:
                diffs.append(f"{method}.{key}: stored={a} recomputed={b}")
    return not diffs, diffs
