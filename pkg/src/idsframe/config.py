"""Run configuration: YAML tree, defaults, scale presets, hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .classifier import ClassifierConfig
from .ganomaly import ScorerConfig
from .sampling import DEFAULT_COUNTS


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "dataset": {"id": None, "schema": None, "paths": None, "row_cap": None},
    "samplesets": {"counts": None, "n_sets": 5, "use": None, "k_folds": 3},
    "stage1": {"k": 8, "th_sz": 0.05, "th_sz_relative": True, "th_var": 0.9, "max_iter": 300},
    "stage2": {**{k: v for k, v in vars(ScorerConfig()).items() if k != "seed"}, "threshold_quantile": 0.90},
    "baselines": {"methods": ["kmeans", "ganomaly", "ocsvm"], "ocsvm": {"nu": 0.1, "gamma": "auto"}},
    "stage3": {
        "split": None,  # designated | holdout
        "train_paths": None,
        "test_paths": None,
        "test_fraction": 0.3,
        "row_cap_per_class": None,
        "classifier": {k: v for k, v in vars(ClassifierConfig()).items() if k != "seed"},
    },
    "seed": 0,
    "scale": "desk",
    "threads": 1,
    "output_dir": "runs",
}

# keys that do not change results and stay out of the config hash and snapshots
_NON_SEMANTIC = ("output_dir",)

DESK_CIC_ROW_CAP = 300_000
# desk scale trains the scorer for fewer epochs unless stage2.epochs is set explicitly
DESK_STAGE2_EPOCHS = 15
STAGE3_SPLIT = {"nsl_kdd": "designated", "ton_iot_win10": "holdout", "cic_ids2018": "holdout"}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict) and key not in ("classifier",):
            out[key] = _merge(base[key], val, f"{path}{key}.")
        elif key == "classifier" and isinstance(val, dict):
            unknown = set(val) - set(base[key])
            if unknown:
                raise ConfigError(f"unknown classifier keys {sorted(unknown)}")
            out[key] = {**base[key], **val}
        else:
            out[key] = val
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def resolve(raw: dict, *, seed: int | None = None, scale: str | None = None, check_paths: bool = True) -> dict:
    """Fill defaults, apply the scale preset and validate.

    Dataset paths are the only required values.
    """
    cfg = _merge(DEFAULTS, raw or {})
    if seed is not None:
        cfg["seed"] = int(seed)
    if scale is not None:
        cfg["scale"] = scale
    if cfg["scale"] not in ("desk", "full"):
        raise ConfigError(f"scale must be 'desk' or 'full', got {cfg['scale']!r}")

    ds = cfg["dataset"]
    if not ds["paths"]:
        raise ConfigError("dataset.paths is required")
    if isinstance(ds["paths"], str):
        ds["paths"] = [ds["paths"]]
    ds["id"] = ds["id"] or ds["schema"] or "dataset"
    ds["schema"] = ds["schema"] or ds["id"]
    if ds["row_cap"] is None and cfg["scale"] == "desk" and ds["id"] == "cic_ids2018":
        ds["row_cap"] = DESK_CIC_ROW_CAP
    if cfg["scale"] == "desk" and "epochs" not in ((raw or {}).get("stage2") or {}):
        cfg["stage2"]["epochs"] = DESK_STAGE2_EPOCHS

    ss = cfg["samplesets"]
    if ss["counts"] is None:
        if ds["id"] not in DEFAULT_COUNTS:
            raise ConfigError(f"samplesets.counts must be given for dataset {ds['id']!r}")
        ss["counts"] = list(DEFAULT_COUNTS[ds["id"]])
    ss["counts"] = [int(c) for c in ss["counts"]]
    if ss["use"] is None:
        ss["use"] = [0] if cfg["scale"] == "desk" else list(range(ss["n_sets"]))
    if any(not 0 <= u < ss["n_sets"] for u in ss["use"]):
        raise ConfigError(f"samplesets.use {ss['use']} outside 0..{ss['n_sets'] - 1}")

    s3 = cfg["stage3"]
    if s3["split"] is None:
        s3["split"] = STAGE3_SPLIT.get(ds["id"], "holdout")
    if s3["split"] not in ("designated", "holdout"):
        raise ConfigError(f"stage3.split must be 'designated' or 'holdout', got {s3['split']!r}")
    for key in ("train_paths", "test_paths"):
        if isinstance(s3[key], str):
            s3[key] = [s3[key]]

    bad = set(cfg["baselines"]["methods"]) - {"kmeans", "ganomaly", "ocsvm"}
    if bad:
        raise ConfigError(f"unknown baseline methods {sorted(bad)}")

    if check_paths:
        for p in ds["paths"]:
            if not Path(p).exists():
                raise ConfigError(f"dataset file not found: {p}")
    ScorerConfig.from_dict(cfg["stage2"])  # validates
    return _jsonable(cfg)


def load(path: str | Path, **kw) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    base = Path(path).parent
    # relative dataset paths are taken relative to the config file
    for section, keys in (("dataset", ("paths",)), ("stage3", ("train_paths", "test_paths"))):
        sec = raw.get(section) or {}
        for key in keys:
            val = sec.get(key)
            if val is None:
                continue
            vals = [val] if isinstance(val, str) else val
            sec[key] = [str(p) if Path(p).is_absolute() else str(base / p) for p in vals]
    return resolve(raw, **kw)


def semantic(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in _NON_SEMANTIC}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(semantic(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def scorer_config(cfg: dict, seed_offset: int = 0) -> ScorerConfig:
    s2 = dict(cfg["stage2"])
    s2["seed"] = int(cfg["seed"]) + seed_offset
    return ScorerConfig.from_dict(s2)
