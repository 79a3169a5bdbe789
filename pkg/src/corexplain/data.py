"""Tabular dataset representation, CSV ingestion, preprocessing, and splitting.

The preprocessing pipeline mirrors the common tabular recipe: drop
degenerate columns, target-encode categoricals, impute missing values with
the training mean, and standardize with training statistics.  Statistics
are fitted once on the training split and applied identically everywhere,
so there is no leakage across splits.
"""

from __future__ import annotations

import base64
import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, FormatError, ParseError
from .rng import substream

MISSING_TOKENS = {"", "NA"}
TARGET_ENCODE_SMOOTHING = 10.0
DATASET_SCHEMA = "corexplain.dataset/1"
STATS_SCHEMA = "corexplain.preprocess-stats/1"

CLASSIFICATION = "classification"
REGRESSION = "regression"
UNLABELED = "unlabeled"


@dataclass(frozen=True)
class Dataset:
    """An n x d feature matrix with optional labels.

    ``features`` may contain NaN for missing cells before preprocessing;
    preprocessed datasets are finite everywhere.  Categorical columns are
    stored as float level codes with the level vocabulary kept in
    ``categorical_levels`` (column index -> tuple of level strings).
    """

    features: np.ndarray
    labels: np.ndarray | None
    feature_names: tuple[str, ...]
    task_kind: str
    categorical_levels: dict[int, tuple[str, ...]] = field(default_factory=dict)
    preprocessed: bool = False

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ConfigError(f"features must be a nonempty 2-D matrix, got shape {feats.shape}")
        object.__setattr__(self, "features", feats)
        if len(self.feature_names) != feats.shape[1]:
            raise ConfigError("feature_names length must match the number of columns")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.float64)
            if labels.shape != (feats.shape[0],):
                raise ConfigError("labels must be a length-n vector")
            object.__setattr__(self, "labels", labels)
        if self.task_kind not in (CLASSIFICATION, REGRESSION, UNLABELED):
            raise ConfigError(f"unknown task kind {self.task_kind!r}")
        if self.task_kind == UNLABELED and self.labels is not None:
            raise ConfigError("unlabeled dataset cannot carry labels")
        if self.task_kind != UNLABELED and self.labels is None:
            raise ConfigError(f"{self.task_kind} dataset requires labels")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.task_kind != CLASSIFICATION:
            return 0
        return int(self.labels.max()) + 1

    def class_labels(self) -> np.ndarray:
        if self.task_kind != CLASSIFICATION:
            raise ConfigError("class_labels() requires a classification dataset")
        return self.labels.astype(np.int64)


@dataclass
class PreprocessSpec:
    """Preprocessing configuration plus, after fitting, the learned statistics."""

    drop_degenerate: bool = True
    impute: str = "mean"
    standardize: bool = True
    categorical_encoding: str = "target_encode"  # or "none"
    fitted_stats: "FittedStats | None" = None


@dataclass
class FittedStats:
    """Per-feature statistics learned on the training split.

    ``kept_columns`` are indices into the original column order; ``means``,
    ``stds`` and ``impute_means`` align with the kept columns.  Encodings map
    original column name -> {level: value} with the training-label mean under
    key "__default__" for unseen levels.
    """

    kept_columns: list[int]
    kept_names: list[str]
    dropped_names: list[str]
    impute_means: list[float]
    means: list[float]
    stds: list[float]
    encodings: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "schema": STATS_SCHEMA,
            "kept_columns": self.kept_columns,
            "kept_names": self.kept_names,
            "dropped_names": self.dropped_names,
            "impute_means": self.impute_means,
            "means": self.means,
            "stds": self.stds,
            "encodings": self.encodings,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FittedStats":
        if payload.get("schema") != STATS_SCHEMA:
            raise FormatError(f"unexpected stats schema {payload.get('schema')!r}")
        return cls(**{k: v for k, v in payload.items() if k != "schema"})


@dataclass(frozen=True)
class DataSplit:
    train_indices: np.ndarray
    valid_indices: np.ndarray


def load_csv(path: str, label_column: str | None = None) -> Dataset:
    """Parse a headered CSV file into a raw (unpreprocessed) Dataset.

    Empty cells and the literal "NA" are recorded as missing.  Columns whose
    non-missing cells all parse as reals become numeric; any other column is
    categorical and stored as level codes.  Integer-valued labels force a
    classification task; otherwise the task is regression.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, a header row is required") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}"
                )
            rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no data rows")

    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise ConfigError(f"label column {label_column!r} not found in header {header}")
        label_idx = header.index(label_column)

    feature_names = [h for i, h in enumerate(header) if i != label_idx]
    columns = [[row[i] for row in rows] for i in range(len(header)) if i != label_idx]

    n, d = len(rows), len(feature_names)
    features = np.empty((n, d))
    categorical_levels: dict[int, tuple[str, ...]] = {}
    for j, col in enumerate(columns):
        parsed = _parse_numeric(col)
        if parsed is not None:
            features[:, j] = parsed
        else:
            levels = sorted({c for c in col if c not in MISSING_TOKENS})
            code = {level: float(i) for i, level in enumerate(levels)}
            features[:, j] = [code[c] if c not in MISSING_TOKENS else np.nan for c in col]
            categorical_levels[j] = tuple(levels)

    labels = None
    task_kind = UNLABELED
    if label_idx is not None:
        raw = [row[label_idx] for row in rows]
        if any(c in MISSING_TOKENS for c in raw):
            raise ParseError(f"{path}: label column {label_column!r} contains missing values")
        numeric = _parse_numeric(raw)
        if numeric is None:
            levels = sorted(set(raw))
            labels = np.array([levels.index(c) for c in raw], dtype=np.float64)
            task_kind = CLASSIFICATION
        elif np.all(numeric == np.round(numeric)):
            uniq = np.unique(numeric.astype(np.int64))
            remap = {v: i for i, v in enumerate(uniq.tolist())}
            labels = np.array([remap[int(v)] for v in numeric], dtype=np.float64)
            task_kind = CLASSIFICATION
        else:
            labels = numeric
            task_kind = REGRESSION

    return Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(feature_names),
        task_kind=task_kind,
        categorical_levels=categorical_levels,
    )


def _parse_numeric(cells: list[str]) -> np.ndarray | None:
    """Float array with NaN for missing cells, or None if any cell is non-numeric."""
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        if c in MISSING_TOKENS:
            out[i] = np.nan
            continue
        try:
            out[i] = float(c)
        except ValueError:
            return None
    return out


def fit_apply_preprocess(
    train: Dataset, others: list[Dataset], spec: PreprocessSpec
) -> tuple[Dataset, list[Dataset], PreprocessSpec]:
    """Fit preprocessing statistics on ``train`` and apply them to every dataset.

    Steps, in order: drop degenerate columns (constant ones, plus ID-like
    categoricals with one unique value per row), target-encode categoricals
    with smoothed training-label means, impute missing values with training
    means, standardize with training mean/std.
    """
    if train.preprocessed:
        raise ConfigError("dataset is already preprocessed; refusing to fit twice")
    for other in others:
        if other.preprocessed:
            raise ConfigError("dataset is already preprocessed; refusing to apply twice")
        if other.d != train.d or other.feature_names != train.feature_names:
            raise ConfigError("all datasets must share columns with the training split")
    if spec.categorical_encoding == "target_encode" and train.categorical_levels and train.labels is None:
        raise ConfigError("target encoding requires a labeled training dataset")
    if spec.impute != "mean":
        raise ConfigError(f"unsupported imputation {spec.impute!r}")
    if spec.categorical_encoding not in ("target_encode", "none"):
        raise ConfigError(f"unsupported categorical encoding {spec.categorical_encoding!r}")

    X = train.features
    kept: list[int] = []
    dropped: list[str] = []
    for j in range(train.d):
        col = X[:, j]
        finite = col[~np.isnan(col)]
        uniq = np.unique(finite)
        degenerate = uniq.size <= 1
        if j in train.categorical_levels and uniq.size == train.n:
            degenerate = True  # ID-like categorical: one level per row
        if spec.drop_degenerate and degenerate:
            dropped.append(train.feature_names[j])
        else:
            kept.append(j)
    if not kept:
        raise ConfigError("all columns are degenerate; nothing left after preprocessing")

    encodings: dict[str, dict[str, float]] = {}
    if spec.categorical_encoding == "target_encode":
        y = train.labels
        for j in kept:
            if j not in train.categorical_levels:
                continue
            levels = train.categorical_levels[j]
            col = X[:, j]
            global_mean = float(y.mean())
            table = {"__default__": global_mean}
            for code, level in enumerate(levels):
                mask = col == code
                cnt = int(mask.sum())
                if cnt == 0:
                    table[level] = global_mean
                    continue
                level_mean = float(y[mask].mean())
                table[level] = (cnt * level_mean + TARGET_ENCODE_SMOOTHING * global_mean) / (
                    cnt + TARGET_ENCODE_SMOOTHING
                )
            encodings[train.feature_names[j]] = table

    def encode(ds: Dataset) -> np.ndarray:
        out = ds.features[:, kept].copy()
        for pos, j in enumerate(kept):
            name = train.feature_names[j]
            if name not in encodings:
                continue
            table = encodings[name]
            levels = ds.categorical_levels.get(j, ())
            col = ds.features[:, j]
            enc = np.full(ds.n, np.nan)
            for code, level in enumerate(levels):
                enc[col == code] = table.get(level, table["__default__"])
            out[:, pos] = enc
        return out

    train_enc = encode(train)
    impute_means = np.nanmean(train_enc, axis=0)
    train_imp = np.where(np.isnan(train_enc), impute_means, train_enc)
    if spec.standardize:
        means = train_imp.mean(axis=0)
        stds = train_imp.std(axis=0)
        stds = np.where(stds < 1e-12, 1.0, stds)
    else:
        means = np.zeros(len(kept))
        stds = np.ones(len(kept))

    stats = FittedStats(
        kept_columns=list(kept),
        kept_names=[train.feature_names[j] for j in kept],
        dropped_names=dropped,
        impute_means=[float(v) for v in impute_means],
        means=[float(v) for v in means],
        stds=[float(v) for v in stds],
        encodings=encodings,
    )

    def finalize(ds: Dataset, enc: np.ndarray) -> Dataset:
        imp = np.where(np.isnan(enc), impute_means, enc)
        std = (imp - means) / stds
        return Dataset(
            features=std,
            labels=ds.labels,
            feature_names=tuple(stats.kept_names),
            task_kind=ds.task_kind,
            preprocessed=True,
        )

    new_train = finalize(train, train_enc)
    new_others = [finalize(ds, encode(ds)) for ds in others]
    return new_train, new_others, replace(spec, fitted_stats=stats)


def split_75_25(data: Dataset, seed: int) -> DataSplit:
    """Uniformly shuffled 75:25 split with |train| = floor(0.75 n)."""
    if data.n < 4:
        raise ConfigError(f"splitting requires n >= 4, got {data.n}")
    perm = substream(seed, "split").permutation(data.n)
    cut = math.floor(0.75 * data.n)
    return DataSplit(
        train_indices=np.sort(perm[:cut]),
        valid_indices=np.sort(perm[cut:]),
    )


def subset(data: Dataset, indices) -> Dataset:
    """Rows of ``data`` gathered in index order; duplicates allowed."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("empty index set: an empty coreset is not allowed")
    if idx.min() < 0 or idx.max() >= data.n:
        raise IndexError(f"index out of range for dataset with {data.n} rows")
    return Dataset(
        features=data.features[idx],
        labels=None if data.labels is None else data.labels[idx],
        feature_names=data.feature_names,
        task_kind=data.task_kind,
        categorical_levels=dict(data.categorical_levels),
        preprocessed=data.preprocessed,
    )


def array_to_b64(a: np.ndarray) -> str:
    """Little-endian float64 bytes, base64-encoded: exact and portable."""
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def array_from_b64(s: str, shape) -> np.ndarray:
    raw = base64.b64decode(s.encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


_b64 = array_to_b64
_unb64 = array_from_b64


def dataset_to_dict(data: Dataset) -> dict:
    return {
        "schema": DATASET_SCHEMA,
        "n": data.n,
        "d": data.d,
        "feature_names": list(data.feature_names),
        "task_kind": data.task_kind,
        "preprocessed": data.preprocessed,
        "features_b64": _b64(data.features),
        "labels_b64": None if data.labels is None else _b64(data.labels),
    }


def dataset_from_dict(payload: dict) -> Dataset:
    try:
        if payload.get("schema") != DATASET_SCHEMA:
            raise FormatError(f"unexpected dataset schema {payload.get('schema')!r}")
        n, d = int(payload["n"]), int(payload["d"])
        features = _unb64(payload["features_b64"], (n, d))
        labels = None
        if payload["labels_b64"] is not None:
            labels = _unb64(payload["labels_b64"], (n,))
        return Dataset(
            features=features,
            labels=labels,
            feature_names=tuple(payload["feature_names"]),
            task_kind=payload["task_kind"],
            preprocessed=bool(payload["preprocessed"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed dataset payload: {exc}") from exc


def save_dataset(data: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_dict(data), fh)


def load_dataset(path: str) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    return dataset_from_dict(payload)
