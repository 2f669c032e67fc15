"""Dataset ingestion: schema handling, CSV loading, ordinal encoding, min-max scaling."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import yaml

from . import audit

log = logging.getLogger(__name__)

COLUMN_KINDS = ("numeric", "categorical", "timestamp", "binary_label", "attack_label", "ignore")
FEATURE_KINDS = ("numeric", "categorical")
NORMAL_CATEGORY = "normal"
_MISSING_TOKENS = {"", "nan", "na", "null", "none", "?"}


class SchemaError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str


@dataclass
class FeatureSchema:
    """Column kinds and label rules for one dataset.

    ``default_kind`` lets a schema list only its special columns (labels,
    timestamps) and treat every other header column as ``default_kind``;
    this is how the 80- and 124-column flow datasets are described.
    """

    name: str
    columns: list[Column]
    categorical_maps: dict[str, dict[str, int]] = field(default_factory=dict)
    normal_values: list[str] = field(default_factory=lambda: ["normal", "benign", "0"])
    attack_categories: dict[str, str] = field(default_factory=dict)
    categories: list[str] = field(default_factory=list)
    header: bool = True
    default_kind: str | None = None
    optional: list[str] = field(default_factory=list)

    def __post_init__(self):
        for c in self.columns:
            if c.kind not in COLUMN_KINDS:
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
        if self.default_kind is not None and self.default_kind not in COLUMN_KINDS:
            raise SchemaError(f"unknown default_kind {self.default_kind!r}")
        names = [c.name for c in self.columns]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise SchemaError(f"duplicate columns: {sorted(dup)}")
        n_bin = sum(c.kind == "binary_label" for c in self.columns)
        n_att = sum(c.kind == "attack_label" for c in self.columns)
        if n_bin != 1:
            raise SchemaError(f"schema {self.name!r} needs exactly one binary_label column, has {n_bin}")
        if n_att > 1:
            raise SchemaError(f"schema {self.name!r} has {n_att} attack_label columns (max 1)")
        for col, mapping in self.categorical_maps.items():
            codes = sorted(mapping.values())
            if codes != list(range(1, len(codes) + 1)):
                raise SchemaError(f"categorical map for {col!r} is not a contiguous 1..d range")

    # -- accessors ---------------------------------------------------------
    def kind_of(self, name: str) -> str:
        for c in self.columns:
            if c.name == name:
                return c.kind
        raise KeyError(name)

    def names(self, *kinds: str) -> list[str]:
        return [c.name for c in self.columns if c.kind in kinds]

    @property
    def feature_columns(self) -> list[str]:
        return self.names(*FEATURE_KINDS)

    @property
    def binary_label_column(self) -> str:
        return self.names("binary_label")[0]

    @property
    def attack_label_column(self) -> str:
        # without a dedicated category column the binary label holds attack names
        att = self.names("attack_label")
        return att[0] if att else self.binary_label_column

    def category_of(self, raw: str) -> str:
        return self.attack_categories.get(raw, self.attack_categories.get(raw.lower(), raw))

    def is_normal_value(self, raw: str) -> bool:
        normals = {v.strip().lower() for v in self.normal_values}
        return raw.strip().lower() in normals

    # -- header resolution -------------------------------------------------
    def resolve(self, header: Sequence[str]) -> "FeatureSchema":
        """Bind the schema to a concrete file header.

        Listed columns missing from the header (and not optional) raise; header
        columns absent from the schema raise unless ``default_kind`` is set.
        """
        header = [h.strip() for h in header]
        listed = {c.name: c for c in self.columns}
        for c in self.columns:
            if c.name not in header and c.name not in self.optional:
                raise SchemaError(f"schema column {c.name!r} not found in file header")
        cols = []
        for h in header:
            if h in listed:
                cols.append(listed[h])
            elif self.default_kind is not None:
                cols.append(Column(h, self.default_kind))
            else:
                raise SchemaError(f"file column {h!r} is not declared in schema {self.name!r}")
        return replace(self, columns=cols, default_kind=None, optional=[])

    # -- (de)serialisation -------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        cols = [Column(str(k), str(v)) for k, v in (d.get("columns") or {}).items()]
        att: dict[str, str] = {}
        for cat, raws in (d.get("categories") or {}).items():
            for raw in raws:
                att[str(raw)] = str(cat)
        label = d.get("label") or {}
        kwargs = dict(
            name=d.get("name", "dataset"),
            columns=cols,
            categorical_maps={k: {str(a): int(b) for a, b in v.items()} for k, v in (d.get("categorical_maps") or {}).items()},
            attack_categories=att,
            categories=[str(c) for c in (d.get("categories") or {})],
            header=bool(d.get("header", True)),
            default_kind=d.get("default_kind"),
            optional=[str(o) for o in d.get("optional", [])],
        )
        if "normal_values" in label:
            kwargs["normal_values"] = [str(v) for v in label["normal_values"]]
        return cls(**kwargs)

    def to_dict(self) -> dict:
        cats: dict[str, list[str]] = {c: [] for c in self.categories}
        for raw, cat in self.attack_categories.items():
            cats.setdefault(cat, []).append(raw)
        d = {
            "name": self.name,
            "header": self.header,
            "columns": {c.name: c.kind for c in self.columns},
            "label": {"normal_values": list(self.normal_values)},
            "categories": cats,
            "categorical_maps": self.categorical_maps,
        }
        if self.default_kind:
            d["default_kind"] = self.default_kind
        if self.optional:
            d["optional"] = list(self.optional)
        return d

    @classmethod
    def from_yaml(cls, path: str | Path) -> "FeatureSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_yaml(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def builtin_schema(name: str) -> FeatureSchema:
    """Load one of the shipped schemas: ``nsl_kdd``, ``cic_ids2018``, ``ton_iot_win10``."""
    ref = resources.files("idsframe.schemas") / f"{name}.yaml"
    if not ref.is_file():
        raise FileNotFoundError(f"no builtin schema {name!r}")
    return FeatureSchema.from_dict(yaml.safe_load(ref.read_text(encoding="utf-8")))


def load_schema(source: str | Path) -> FeatureSchema:
    p = Path(source)
    if p.suffix in (".yaml", ".yml") and p.exists():
        return FeatureSchema.from_yaml(p)
    return builtin_schema(str(source))


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

@dataclass
class IngestReport:
    files: list[str]
    retained: int
    dropped: dict[str, int]
    normal: int = 0
    anomalous: int = 0

    @property
    def total_dropped(self) -> int:
        return sum(self.dropped.values())

    def to_json(self) -> str:
        return json.dumps(
            {"files": self.files, "retained": self.retained, "dropped": self.dropped,
             "total_dropped": self.total_dropped, "normal": self.normal, "anomalous": self.anomalous},
            indent=2, sort_keys=True)


@dataclass
class RawTable:
    frame: pd.DataFrame  # all cells as stripped strings, row-aligned
    schema: FeatureSchema  # resolved against the file header
    report: IngestReport

    def __len__(self):
        return len(self.frame)


def _read_one(path: Path, schema: FeatureSchema, max_rows: int | None) -> tuple[pd.DataFrame, FeatureSchema]:
    if schema.header:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, nrows=max_rows)
        df.columns = [str(c).strip() for c in df.columns]
        resolved = schema.resolve(list(df.columns))
    else:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, header=None, skipinitialspace=True,
                         nrows=max_rows)
        if df.shape[1] != len(schema.columns):
            raise SchemaError(
                f"{path}: {df.shape[1]} columns in file, schema {schema.name!r} declares {len(schema.columns)}")
        df.columns = [c.name for c in schema.columns]
        resolved = replace(schema, default_kind=None, optional=[])
    return df, resolved


def load_dataset(paths: str | Path | Iterable[str | Path], schema: FeatureSchema,
                 max_rows: int | None = None) -> RawTable:
    """Read one or more CSV files into a row-aligned string table.

    Rows with a missing value, an unparseable or infinite numeric field, or a
    repeated header line are dropped and counted per reason.  ``max_rows``
    caps the rows read from each file.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    paths = [Path(p) for p in paths]
    frames = []
    resolved = None
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(p)
        df, r = _read_one(p, schema, max_rows)
        if resolved is not None and [c.name for c in r.columns] != [c.name for c in resolved.columns]:
            raise SchemaError(f"{p}: header differs from {paths[0]}")
        resolved = r
        frames.append(df)
    assert resolved is not None
    df = pd.concat(frames, ignore_index=True) if len(frames) > 1 else frames[0]
    df = df.apply(lambda s: s.str.strip())
    used = [c.name for c in resolved.columns if c.kind not in ("ignore", "timestamp")]
    numeric = resolved.names("numeric")

    dropped = {"repeated_header": 0, "missing": 0, "unparseable": 0, "infinite": 0}
    bad = np.zeros(len(df), dtype=bool)

    if resolved.header and used:
        is_header = np.ones(len(df), dtype=bool)
        for name in used:
            is_header &= (df[name] == name).to_numpy()
        dropped["repeated_header"] = int(is_header.sum())
        bad |= is_header

    missing = np.zeros(len(df), dtype=bool)
    for name in used:
        missing |= df[name].str.lower().isin(_MISSING_TOKENS).to_numpy()
    missing &= ~bad
    dropped["missing"] = int(missing.sum())
    bad |= missing

    unparse = np.zeros(len(df), dtype=bool)
    infinite = np.zeros(len(df), dtype=bool)
    for name in numeric:
        vals = pd.to_numeric(df[name], errors="coerce").to_numpy(dtype=np.float64)
        unparse |= np.isnan(vals)
        infinite |= np.isinf(vals)
    unparse &= ~bad
    dropped["unparseable"] = int(unparse.sum())
    bad |= unparse
    infinite &= ~bad
    dropped["infinite"] = int(infinite.sum())
    bad |= infinite

    df = df.loc[~bad].reset_index(drop=True)
    if len(df) == 0:
        raise EmptyDatasetError(f"empty dataset: no usable rows in {', '.join(map(str, paths))}")
    binary = _binary_from_raw(df[resolved.binary_label_column], resolved)
    report = IngestReport(files=[str(p) for p in paths], retained=len(df), dropped=dropped,
                          normal=int((binary == 0).sum()), anomalous=int((binary == 1).sum()))
    if report.total_dropped:
        log.info("dropped %d rows from %s: %s", report.total_dropped, resolved.name, dropped)
    return RawTable(df, resolved, report)


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------

def fit_encoding(raw: RawTable, schema: FeatureSchema | None = None) -> FeatureSchema:
    """Assign ordinal codes 1..d to each categorical column, lexicographic order."""
    schema = schema or raw.schema
    maps = {}
    for name in schema.names("categorical"):
        distinct = sorted(set(raw.frame[name]))
        maps[name] = {v: i for i, v in enumerate(distinct, start=1)}
    return replace(schema, categorical_maps=maps)


def _binary_from_raw(col: pd.Series, schema: FeatureSchema) -> np.ndarray:
    out = np.empty(len(col), dtype=np.int64)
    for i, v in enumerate(col):
        try:
            out[i] = 1 if float(v) > 0.5 else 0
        except ValueError:
            out[i] = 0 if schema.is_normal_value(v) else 1
    return out


def encode_table(raw: RawTable, schema: FeatureSchema) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Numeric feature matrix (unscaled), binary labels, attack categories.

    Categorical values unseen at fit time encode as 0, below every fitted code.
    """
    feats = schema.feature_columns
    X = np.empty((len(raw.frame), len(feats)), dtype=np.float64)
    for j, name in enumerate(feats):
        if schema.kind_of(name) == "categorical":
            mapping = schema.categorical_maps.get(name)
            if mapping is None:
                raise SchemaError(f"categorical column {name!r} has no fitted encoding")
            X[:, j] = raw.frame[name].map(mapping).fillna(0).to_numpy(dtype=np.float64)
        else:
            X[:, j] = pd.to_numeric(raw.frame[name]).to_numpy(dtype=np.float64)
    binary = _binary_from_raw(raw.frame[schema.binary_label_column], schema)
    att_raw = raw.frame[schema.attack_label_column].to_numpy(dtype=object)
    attack = np.array(
        [NORMAL_CATEGORY if b == 0 else schema.category_of(str(a)) for a, b in zip(att_raw, binary)],
        dtype=object)
    return X, binary, attack


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormParams:
    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.mins.tolist(), "max": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormParams":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def fit_normalizer(X: np.ndarray) -> NormParams:
    X = np.asarray(X, dtype=np.float64)
    return NormParams(X.min(axis=0), X.max(axis=0))


def apply_normalizer(X: np.ndarray, params: NormParams, clip: bool = True) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    span = params.maxs - params.mins
    const = span == 0
    out = (X - params.mins) / np.where(const, 1.0, span)
    out[:, const] = 0.0
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def denormalize(features: np.ndarray, params: NormParams) -> np.ndarray:
    span = params.maxs - params.mins
    return np.asarray(features) * span + params.mins


@dataclass
class DataMatrix:
    """Scaled sample matrix with optional labels.

    Label vectors sit behind properties so the audit hook sees every read made
    from inside a training zone.
    """

    features: np.ndarray
    binary_labels_: np.ndarray | None = None
    attack_labels_: np.ndarray | None = None
    norm_params: NormParams | None = None
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        for name in ("binary_labels_", "attack_labels_"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ValueError(f"{name.rstrip('_')} has {len(v)} entries for {n} rows")

    @property
    def binary_labels(self) -> np.ndarray | None:
        audit.record_label_access("binary_labels")
        return self.binary_labels_

    @property
    def attack_labels(self) -> np.ndarray | None:
        audit.record_label_access("attack_labels")
        return self.attack_labels_

    @property
    def has_labels(self) -> bool:
        return self.binary_labels_ is not None or self.attack_labels_ is not None

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n_samples

    def subset(self, idx) -> "DataMatrix":
        idx = np.asarray(idx)
        return DataMatrix(
            self.features[idx],
            None if self.binary_labels_ is None else self.binary_labels_[idx],
            None if self.attack_labels_ is None else self.attack_labels_[idx],
            self.norm_params,
            self.feature_names,
        )


def normalize(X: np.ndarray, binary_labels=None, attack_labels=None,
              params: NormParams | None = None, feature_names=None) -> DataMatrix:
    """Min-max scale ``X`` into a DataMatrix.

    With ``params`` given (training-fold parameters) the data is scaled with
    them and clipped to [0, 1]; otherwise parameters are fitted on ``X``.
    Constant columns become 0.
    """
    if params is None:
        params = fit_normalizer(X)
    return DataMatrix(apply_normalizer(X, params), binary_labels, attack_labels, params, feature_names)


def strip_labels(m: DataMatrix) -> DataMatrix:
    if not m.has_labels:
        return m
    return DataMatrix(m.features, None, None, m.norm_params, m.feature_names)


def features_of(data) -> np.ndarray:
    """Feature array for a trainer input, refusing labelled matrices inside a training zone."""
    if isinstance(data, DataMatrix):
        if data.has_labels and audit.current_zone() is not None:
            audit.record_label_access("labelled DataMatrix")
        return data.features
    return np.asarray(data, dtype=np.float64)


def ingest(paths, schema: FeatureSchema) -> tuple[np.ndarray, np.ndarray, np.ndarray, FeatureSchema, IngestReport]:
    """Load, fit encodings and encode in one call; scaling is left to the caller."""
    raw = load_dataset(paths, schema)
    fitted = fit_encoding(raw)
    X, y, att = encode_table(raw, fitted)
    return X, y, att, fitted, raw.report
