"""End-to-end experiment runner.

Layout of one run directory::

    runs/<id>/
      manifest.json
      ingest/      report.json, schema.yaml, encoded.npz
      samplesets/  bundle.json
      fold_<i>/    fold.json, truth.csv, <method>/{scores.csv, roc.csv, metrics.json, ...}
      report/      aggregate.json, auc_table.txt, tpr_fpr_table.txt, ...
      stage3/      model.pt, predictions.csv, confusion.json, confusion.txt, logloss.json

Every step writes a ``.done`` marker holding the config hash, so an
interrupted run picks up where it stopped and finished steps are never
rewritten.
"""
from __future__ import annotations

import copy
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
import multiprocessing as mp

import numpy as np
import torch

from . import __version__, baselines, classifier, cluster, config as cfgmod, ganomaly, metrics
from .data import (
    NORMAL_CATEGORY,
    DataMatrix,
    encode_table,
    fit_encoding,
    fit_normalizer,
    apply_normalizer,
    load_dataset,
    load_schema,
    normalize,
    strip_labels,
)
from .sampling import SampleSetBundle, make_samplesets

log = logging.getLogger(__name__)

METHODS = ("kmeans", "ganomaly", "ocsvm", "proposed")
METHOD_TITLES = {"kmeans": "KMeans", "ganomaly": "GANomaly", "ocsvm": "OCSVM", "proposed": "Proposed"}
GAP = "n/a"

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    status: str  # done | error | cached
    wall_time: float = 0.0
    artifacts: list[str] = field(default_factory=list)
    error: str | None = None


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    run_dir: str
    version: str = __version__
    steps: dict[str, StepRecord] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(s.status in ("done", "cached") for s in self.steps.values())

    @property
    def failed_steps(self) -> list[str]:
        return sorted(k for k, s in self.steps.items() if s.status == "error")

    def save(self) -> None:
        d = asdict(self)
        Path(self.run_dir, "manifest.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunManifest":
        d = json.loads(Path(run_dir, "manifest.json").read_text())
        d["steps"] = {k: StepRecord(**v) for k, v in d["steps"].items()}
        d["run_dir"] = str(run_dir)  # the directory may have been moved or copied
        return cls(**d)


def _done(path: Path, chash: str) -> bool:
    marker = path / ".done"
    return marker.exists() and marker.read_text() == chash


def _mark(path: Path, chash: str) -> None:
    (path / ".done").write_text(chash)


def _rel(run_dir: Path, paths) -> list[str]:
    return sorted(str(Path(p).relative_to(run_dir)) for p in paths)


def open_run(cfg: dict, run_id: str | None = None) -> RunManifest:
    chash = cfgmod.config_hash(cfg)
    run_id = run_id or chash[:12]
    run_dir = Path(cfg["output_dir"]) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg_file = run_dir / "config.json"
    if not cfg_file.exists():
        cfg_file.write_text(json.dumps(cfgmod.semantic(cfg), indent=2, sort_keys=True) + "\n")
    if (run_dir / "manifest.json").exists():
        man = RunManifest.load(run_dir)
        if man.config_hash != chash:
            raise cfgmod.ConfigError(f"{run_dir} belongs to a different config (hash {man.config_hash[:12]})")
        return man
    man = RunManifest(run_id, chash, str(run_dir))
    man.save()
    return man


# ---------------------------------------------------------------------------
# ingest and sampling
# ---------------------------------------------------------------------------

def step_ingest(cfg: dict, man: RunManifest) -> None:
    run_dir = Path(man.run_dir)
    out = run_dir / "ingest"
    if _done(out, man.config_hash):
        man.steps.setdefault("ingest", StepRecord("cached"))
        return
    t0 = time.perf_counter()
    out.mkdir(exist_ok=True)
    ds = cfg["dataset"]
    schema = load_schema(ds["schema"])
    raw = load_dataset(ds["paths"], schema, max_rows=ds["row_cap"])
    fitted = fit_encoding(raw)
    X, y, att = encode_table(raw, fitted)
    np.savez(out / "encoded.npz", X=X, y=y, attack=att.astype(str), feature_names=np.array(fitted.feature_columns))
    fitted.to_yaml(out / "schema.yaml")
    (out / "report.json").write_text(raw.report.to_json() + "\n")
    _mark(out, man.config_hash)
    man.steps["ingest"] = StepRecord("done", time.perf_counter() - t0,
                                     _rel(run_dir, [out / "encoded.npz", out / "schema.yaml", out / "report.json"]))
    man.save()


@lru_cache(maxsize=4)
def _encoded(path: str) -> tuple[np.ndarray, np.ndarray]:
    with np.load(path) as z:
        return z["X"], z["y"]


def step_samplesets(cfg: dict, man: RunManifest) -> SampleSetBundle:
    run_dir = Path(man.run_dir)
    out = run_dir / "samplesets"
    path = out / "bundle.json"
    if _done(out, man.config_hash):
        man.steps.setdefault("samplesets", StepRecord("cached"))
        return SampleSetBundle.load(path)
    t0 = time.perf_counter()
    out.mkdir(exist_ok=True)
    _, y = _encoded(str(run_dir / "ingest" / "encoded.npz"))
    ss = cfg["samplesets"]
    bundle = make_samplesets(y, tuple(ss["counts"]), cfg["seed"], n_sets=ss["n_sets"], k_folds=ss["k_folds"])
    bundle.save(path)
    _mark(out, man.config_hash)
    man.steps["samplesets"] = StepRecord("done", time.perf_counter() - t0, _rel(run_dir, [path]))
    man.save()
    return bundle


# ---------------------------------------------------------------------------
# per-fold jobs
# ---------------------------------------------------------------------------

def fold_seed(cfg: dict, sampleset: int, fold: int) -> int:
    return int(cfg["seed"]) * 10_007 + sampleset * 101 + fold


def _fold_data(run_dir: Path, bundle_path: Path, s: int, f: int):
    X, y = _encoded(str(run_dir / "ingest" / "encoded.npz"))
    bundle = _bundle(str(bundle_path))
    train_idx, test_idx = bundle.sample_sets[s].split(f)
    params = fit_normalizer(X[train_idx])
    train = strip_labels(normalize(X[train_idx], params=params))
    test = DataMatrix(apply_normalizer(X[test_idx], params), norm_params=params)
    return train, test, train_idx, test_idx, y[test_idx]


@lru_cache(maxsize=2)
def _bundle(path: str) -> SampleSetBundle:
    return SampleSetBundle.load(path)


def _write_scores(out: Path, sv: ganomaly.ScoreVector, test_idx, truth) -> dict:
    (out / "scores.csv").write_text(sv.to_csv(test_idx))
    roc, auc = metrics.roc_auc(sv.raw, truth)
    (out / "roc.csv").write_text(roc.to_csv())
    tpr, fpr = metrics.tpr_fpr(sv.predicted, truth)
    return {"auc": auc, "tpr": tpr, "fpr": fpr, "threshold": sv.threshold}


def run_fold_method(run_dir: str, cfg: dict, chash: str, s: int, f: int, fold_index: int, method: str) -> dict:
    """Train and score one method on one CV fold; returns its metrics dict."""
    run_dir = Path(run_dir)
    out = run_dir / f"fold_{fold_index}" / method
    if _done(out, chash):
        return json.loads((out / "metrics.json").read_text())
    torch.set_num_threads(int(cfg["threads"]))
    out.mkdir(parents=True, exist_ok=True)
    train, test, train_idx, test_idx, truth = _fold_data(run_dir, run_dir / "samplesets" / "bundle.json", s, f)
    seed = fold_seed(cfg, s, f)
    s1 = cfg["stage1"]
    policy = cluster.SelectionPolicy(s1["th_sz"], s1["th_var"], s1["th_sz_relative"])
    quantile = cfg["stage2"]["threshold_quantile"]
    extra: dict = {"n_train": len(train_idx), "n_test": len(test_idx), "config_hash": chash}

    if method == "proposed":
        km = cluster.fit_kmeans(train, s1["k"], seed=seed, max_iter=s1["max_iter"])
        picked = cluster.select_probable_normals(km, policy)
        (out / "selection.json").write_text(json.dumps(cluster.selection_summary(km, policy), indent=2) + "\n")
        scorer = ganomaly.train_scorer(train.subset(picked), cfgmod.scorer_config(cfg, seed))
        cut = ganomaly.operating_cut(scorer.score(train), quantile)
        t_score = time.perf_counter()
        sv = ganomaly.score_vector(scorer.score(test), cut)
        extra["score_ms_per_sample"] = 1e3 * (time.perf_counter() - t_score) / max(1, len(test_idx))
        scorer.save(out / "model.pt")
        extra["n_selected"] = int(len(picked))
        extra["final_losses"] = scorer.training_stats.final
    elif method == "ganomaly":
        scorer, sv = baselines.ganomaly_alone(train, test, cfgmod.scorer_config(cfg, seed), quantile)
        scorer.save(out / "model.pt")
        extra["final_losses"] = scorer.training_stats.final
    elif method == "ocsvm":
        oc = cfg["baselines"]["ocsvm"]
        raw = baselines.ocsvm_detect(train, test, baselines.OCSVMConfig(nu=oc["nu"], gamma=oc["gamma"]))
        pred = (raw > 0).astype(np.int64)
        scaled = ganomaly.scale_scores(raw)
        th = ganomaly.to_scaled_threshold(raw, 0.0)
        sv = ganomaly.ScoreVector(raw, scaled, th, pred)
    elif method == "kmeans":
        det = baselines.KMeansOnly.fit(train, s1["k"], seed=seed)
        size_th = policy.size_threshold(len(train_idx))
        raw = det.scores(test.features)
        sv = ganomaly.ScoreVector(raw, ganomaly.scale_scores(raw), float("nan"), det.detect(size_th, test.features))
        extra["size_threshold"] = size_th
        extra["cluster_sizes"] = det.model.cluster_sizes.tolist()
    else:
        raise ValueError(f"unknown method {method!r}")

    result = {**_write_scores(out, sv, test_idx, truth), **extra}
    (out / "metrics.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    _mark(out, chash)
    return result


def _job(args):
    run_dir, cfg, chash, s, f, i, method = args
    t0 = time.perf_counter()
    try:
        res = run_fold_method(run_dir, cfg, chash, s, f, i, method)
        return (i, method, "done", time.perf_counter() - t0, res, None)
    except Exception as exc:  # recorded in the manifest, the run continues
        return (i, method, "error", time.perf_counter() - t0, None,
                f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")


def fold_plan(cfg: dict) -> list[tuple[int, int, int]]:
    """(sampleset, fold, fold_index) for every fold the config runs."""
    k = cfg["samplesets"]["k_folds"]
    return [(s, f, s * k + f) for s in cfg["samplesets"]["use"] for f in range(k)]


def run_methods(cfg: dict) -> list[str]:
    return [m for m in METHODS if m == "proposed" or m in cfg["baselines"]["methods"]]


def run_pipeline(cfg: dict, *, workers: int = 1, fail_fast: bool = False, run_id: str | None = None) -> RunManifest:
    man = open_run(cfg, run_id)
    run_dir = Path(man.run_dir)
    torch.set_num_threads(int(cfg["threads"]))
    step_ingest(cfg, man)
    bundle = step_samplesets(cfg, man)
    _, y = _encoded(str(run_dir / "ingest" / "encoded.npz"))

    jobs = []
    for s, f, i in fold_plan(cfg):
        fdir = run_dir / f"fold_{i}"
        fdir.mkdir(exist_ok=True)
        _, test_idx = bundle.sample_sets[s].split(f)
        if not (fdir / "truth.csv").exists():
            (fdir / "truth.csv").write_text(
                "sample_index,label\n" + "".join(f"{a},{b}\n" for a, b in zip(test_idx.tolist(), y[test_idx].tolist())))
            (fdir / "fold.json").write_text(json.dumps({"sampleset": s, "fold": f, "fold_index": i}) + "\n")
        for method in run_methods(cfg):
            jobs.append((str(run_dir), cfg, man.config_hash, s, f, i, method))

    def record(out):
        i, method, status, wall, res, err = out
        art = run_dir / f"fold_{i}" / method
        arts = _rel(run_dir, sorted(p for p in art.iterdir() if p.name != ".done")) if art.exists() else []
        man.steps[f"fold_{i}/{method}"] = StepRecord(status, wall, arts, err)
        man.save()
        if status == "error":
            log.error("fold_%d/%s failed: %s", i, method, err)
            if fail_fast:
                raise RuntimeError(f"fold_{i}/{method} failed (--fail-fast): {err}")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("spawn")) as pool:
            for out in pool.map(_job, jobs):
                record(out)
    else:
        for job in jobs:
            record(_job(job))

    step_aggregate(cfg, man)
    return man


# ---------------------------------------------------------------------------
# aggregation and reporting
# ---------------------------------------------------------------------------

def collect_results(cfg: dict, run_dir: Path) -> tuple[list[metrics.FoldResult], list[str]]:
    results, missing = [], []
    for s, f, i in fold_plan(cfg):
        for m in run_methods(cfg):
            p = run_dir / f"fold_{i}" / m / "metrics.json"
            if p.exists() and (p.parent / ".done").exists():
                d = json.loads(p.read_text())
                results.append(metrics.FoldResult(m, s, f, d["auc"], d["tpr"], d["fpr"]))
            else:
                missing.append(f"fold_{i}/{m}")
    return results, missing


def step_aggregate(cfg: dict, man: RunManifest) -> metrics.EvaluationReport:
    run_dir = Path(man.run_dir)
    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    t0 = time.perf_counter()
    results, missing = collect_results(cfg, run_dir)
    complete = [m for m in run_methods(cfg) if not any(x.endswith("/" + m) for x in missing)]
    report = metrics.aggregate([r for r in results if r.method in complete], samplesets=cfg["samplesets"]["use"],
                               k_folds=cfg["samplesets"]["k_folds"], methods=complete,
                               config_snapshot=cfgmod.semantic(cfg))
    d = report.to_dict()
    d["missing"] = missing
    d["partial"] = bool(missing)
    (out / "aggregate.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    write_tables(cfg, run_dir)
    man.steps["aggregate"] = StepRecord("done" if not missing else "error", time.perf_counter() - t0,
                                        _rel(run_dir, sorted(out.iterdir())),
                                        None if not missing else f"missing: {', '.join(missing)}")
    man.save()
    return report


def _fmt(v) -> str:
    return GAP if v is None else f"{v:.3f}"


def write_tables(cfg: dict, run_dir: Path) -> bool:
    """Render AUC and TPR/FPR tables (and log-loss when stage 3 ran); returns True when complete."""
    agg = json.loads((run_dir / "report" / "aggregate.json").read_text())
    grand = agg["grand_mean"]
    ds = cfg["dataset"]["id"]
    title = f"{ds}: SampleSets {cfg['samplesets']['use']}, {cfg['samplesets']['k_folds']}-fold CV, seed {cfg['seed']}"
    cols = [m for m in METHODS]
    w = max(12, len(ds) + 2)

    lines = ["Area under the ROC curve (AUC)", title, "",
             "dataset".ljust(w) + "".join(METHOD_TITLES[m].rjust(11) for m in cols),
             ds.ljust(w) + "".join(_fmt(grand.get(m, {}).get("auc")).rjust(11) for m in cols)]
    (run_dir / "report" / "auc_table.txt").write_text("\n".join(lines) + "\n")

    head = "dataset".ljust(w) + "".join((METHOD_TITLES[m] + " TPR").rjust(14) + (METHOD_TITLES[m] + " FPR").rjust(14)
                                        for m in cols)
    row = ds.ljust(w) + "".join(_fmt(grand.get(m, {}).get("tpr")).rjust(14) + _fmt(grand.get(m, {}).get("fpr")).rjust(14)
                                for m in cols)
    (run_dir / "report" / "tpr_fpr_table.txt").write_text("\n".join(["TPR-FPR comparison", title, "", head, row]) + "\n")

    ll = run_dir / "stage3" / "logloss.json"
    if ll.exists():
        d = json.loads(ll.read_text())
        text = ["Log-loss for stage 3 (CNN)", "", "dataset".ljust(w) + "base log-loss".rjust(16) + "CNN log-loss".rjust(16),
                ds.ljust(w) + f"{d['base_log_loss']:.4f}".rjust(16) + f"{d['cnn_log_loss']:.4f}".rjust(16)]
        (run_dir / "report" / "logloss_table.txt").write_text("\n".join(text) + "\n")
    return not agg.get("missing")


def report(run_dir: str | Path) -> int:
    """Re-render report tables from a run directory; returns the CLI exit code."""
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.json").exists():
        raise FileNotFoundError(f"{run_dir} has no manifest.json")
    cfg = json.loads((run_dir / "config.json").read_text())
    cfg["output_dir"] = str(run_dir.parent)
    man = RunManifest.load(run_dir)
    agg_path = run_dir / "report" / "aggregate.json"
    if not agg_path.exists():
        step_aggregate(cfg, man)
    complete = write_tables(cfg, run_dir)
    if not complete or man.failed_steps:
        return EXIT_PARTIAL
    return EXIT_OK


K_SWEEP = (4, 8, 16)


def sweep_k(cfg: dict, ks=K_SWEEP, *, workers: int = 1, fail_fast: bool = False) -> tuple[list[RunManifest], Path]:
    """One run per cluster count; writes a combined AUC table to the output directory."""
    mans, rows = [], []
    for k in ks:
        c = copy.deepcopy(cfg)
        c["stage1"]["k"] = int(k)
        if int(k) < 1:
            raise cfgmod.ConfigError(f"k-sweep values must be >= 1, got {k}")
        man = run_pipeline(c, workers=workers, fail_fast=fail_fast)
        mans.append(man)
        agg = json.loads((Path(man.run_dir) / "report" / "aggregate.json").read_text())
        rows.append((int(k), Path(man.run_dir).name, agg["grand_mean"]))
    cols = run_methods(cfg)
    lines = [f"AUC by cluster count ({cfg['dataset']['id']})", "",
             "k".rjust(4) + "run".rjust(14) + "".join(METHOD_TITLES[m].rjust(11) for m in cols)]
    for k, run, grand in rows:
        lines.append(str(k).rjust(4) + run.rjust(14) + "".join(_fmt(grand.get(m, {}).get("auc")).rjust(11) for m in cols))
    out = Path(cfg["output_dir"]) / f"k_sweep_{cfgmod.config_hash(cfg)[:12]}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    return mans, out


# ---------------------------------------------------------------------------
# stage 3
# ---------------------------------------------------------------------------

def _attack_rows(paths, schema, fitted=None, max_rows=None):
    raw = load_dataset(paths, schema, max_rows=max_rows)
    fitted = fitted or fit_encoding(raw)
    X, y, att = encode_table(raw, fitted)
    keep = y == 1
    return X[keep], att[keep], fitted


def stage3_data(cfg: dict):
    """(X_train, labels_train, X_test, labels_test, taxonomy), scaled with training parameters."""
    ds, s3 = cfg["dataset"], cfg["stage3"]
    schema = load_schema(ds["schema"])
    taxonomy = classifier.AttackTaxonomy.from_schema(schema)
    if s3["split"] == "designated":
        if not s3["train_paths"] or not s3["test_paths"]:
            raise cfgmod.ConfigError("stage3.split=designated needs stage3.train_paths and stage3.test_paths")
        Xtr, ltr, fitted = _attack_rows(s3["train_paths"], schema, max_rows=ds["row_cap"])
        Xte, lte, _ = _attack_rows(s3["test_paths"], fitted, fitted=fitted, max_rows=ds["row_cap"])
    else:
        from sklearn.model_selection import train_test_split

        X, lab, _ = _attack_rows(s3["train_paths"] or ds["paths"], schema, max_rows=ds["row_cap"])
        Xtr, Xte, ltr, lte = train_test_split(X, lab, test_size=s3["test_fraction"], random_state=cfg["seed"],
                                              stratify=lab)
    known = set(taxonomy.categories)
    for name, labs in (("train", ltr), ("test", lte)):
        unknown = sorted(set(labs) - known)
        if unknown:
            log.warning("dropping %s rows with unmapped attack labels %s", name, unknown)
    mtr = np.isin(ltr, list(known))
    mte = np.isin(lte, list(known))
    Xtr, ltr, Xte, lte = Xtr[mtr], ltr[mtr], Xte[mte], lte[mte]
    cap = s3["row_cap_per_class"]
    if cap:
        rng = np.random.default_rng(cfg["seed"])
        keep = np.concatenate([rng.permutation(np.flatnonzero(ltr == c))[:cap] for c in np.unique(ltr)])
        keep.sort()
        Xtr, ltr = Xtr[keep], ltr[keep]
    params = fit_normalizer(Xtr)
    return apply_normalizer(Xtr, params), ltr, apply_normalizer(Xte, params), lte, taxonomy


def run_stage3(cfg: dict, run_id: str | None = None) -> RunManifest:
    man = open_run(cfg, run_id)
    run_dir = Path(man.run_dir)
    out = run_dir / "stage3"
    if _done(out, man.config_hash):
        man.steps.setdefault("stage3", StepRecord("cached"))
        return man
    torch.set_num_threads(int(cfg["threads"]))
    t0 = time.perf_counter()
    out.mkdir(exist_ok=True)
    Xtr, ltr, Xte, lte, taxonomy = stage3_data(cfg)
    ytr = taxonomy.index(ltr)
    yte = taxonomy.index(lte)
    ccfg = classifier.ClassifierConfig.from_dict({**cfg["stage3"]["classifier"], "seed": cfg["seed"]})
    Xrs, yrs = classifier.adasyn_resample(Xtr, ytr, neighbors=ccfg.adasyn_neighbors, seed=cfg["seed"])
    model = classifier.train_classifier(Xrs, [taxonomy.categories[i] for i in yrs], taxonomy, ccfg)
    proba = model.predict_proba(Xte)
    pred = np.argmax(proba, axis=1)
    priors = classifier.class_priors(ytr, taxonomy.n_att)
    cm = metrics.confusion_matrix(yte, pred, taxonomy.n_att)
    result = {
        "categories": taxonomy.categories,
        "train_counts": np.bincount(ytr, minlength=taxonomy.n_att).tolist(),
        "resampled_counts": np.bincount(yrs, minlength=taxonomy.n_att).tolist(),
        "test_counts": np.bincount(yte, minlength=taxonomy.n_att).tolist(),
        "base_log_loss": classifier.base_log_loss(priors, yte),
        "cnn_log_loss": classifier.multiclass_log_loss(proba, yte),
        "accuracy": float(np.mean(pred == yte)),
        "epochs_run": len(model.epoch_losses),
        "epoch_losses": model.epoch_losses,
    }
    model.save(out / "model.pt")
    (out / "taxonomy.json").write_text(json.dumps(asdict(taxonomy), indent=2) + "\n")
    (out / "predictions.csv").write_text(classifier.predictions_csv(model, proba, yte))
    (out / "confusion.json").write_text(json.dumps({"categories": taxonomy.categories, "matrix": cm.tolist()}) + "\n")
    (out / "confusion.txt").write_text(metrics.render_confusion(cm, taxonomy.categories))
    (out / "logloss.json").write_text(json.dumps(result, indent=2) + "\n")
    _mark(out, man.config_hash)
    man.steps["stage3"] = StepRecord("done", time.perf_counter() - t0,
                                     _rel(run_dir, sorted(p for p in out.iterdir() if p.name != ".done")))
    man.save()
    if (run_dir / "report" / "aggregate.json").exists():
        write_tables(cfg, run_dir)
    return man
