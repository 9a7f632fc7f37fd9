"""Schema-driven CSV ingestion, preprocessing to numeric matrices,
stratified splitting, and a synthetic drone-traffic generator for
desk-scale experiments.

Numeric columns are min-max scaled into [0, 1]; categorical columns are
one-hot encoded with a deterministic (sorted) category layout fitted on
training data only. Unseen categories at apply time map to an all-zero
block instead of erroring, since live traffic legitimately contains new
MACs and IPs.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, LabelError, ParseError, SchemaError
from .util import derive_rng, fmt_float, read_json, write_json

ROLES = ("numeric", "categorical", "label", "ignore")

# Default class names for the synthetic generator, one benign class and
# the three attack families seen in Tello-UAV Wi-Fi traffic.
DEFAULT_CLASS_NAMES = (
    "Benign",
    "WPA2 Cracking",
    "WiFi Deauthentication",
    "Tello API Exploit",
)

# Value planted by the generator in its first categorical column as a
# near-deterministic marker of the rare class (a fixed source IP).
RARE_MARKER_VALUE = "192.168.10.1"

_IP_POOL = (
    RARE_MARKER_VALUE,
    "192.168.10.2",
    "192.168.10.3",
    "10.0.0.1",
    "10.0.0.2",
)
_MAC_POOL = (
    "7a:ad:8f:23:25:a7",
    "60:60:1f:5b:4d:0a",
    "ff:ff:ff:ff:ff:ff",
    "34:d2:62:11:9c:f3",
)


@dataclass(frozen=True)
class Column:
    name: str
    role: str


@dataclass(frozen=True)
class Schema:
    """Declares column roles and the ordered label class names."""

    columns: tuple[Column, ...]
    label_classes: tuple[str, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        for c in self.columns:
            if c.role not in ROLES:
                raise SchemaError(f"column {c.name!r}: unknown role {c.role!r}")
        labels = [c for c in self.columns if c.role == "label"]
        if len(labels) != 1:
            raise SchemaError(f"schema must have exactly one label column, got {len(labels)}")
        if not self.feature_columns:
            raise SchemaError("schema has no feature columns")
        if len(set(self.label_classes)) != len(self.label_classes):
            raise SchemaError("label class names must be unique")
        if not self.label_classes:
            raise SchemaError("schema lists no label classes")

    @property
    def label_column(self) -> str:
        return next(c.name for c in self.columns if c.role == "label")

    @property
    def feature_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.role in ("numeric", "categorical"))

    @property
    def numeric_columns(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.role == "numeric")

    @property
    def categorical_columns(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.role == "categorical")

    @property
    def n_classes(self) -> int:
        return len(self.label_classes)

    def to_json_dict(self) -> dict:
        return {
            "columns": [{"name": c.name, "role": c.role} for c in self.columns],
            "label_classes": list(self.label_classes),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Schema":
        try:
            cols = tuple(Column(c["name"], c["role"]) for c in d["columns"])
            classes = tuple(d["label_classes"])
        except (KeyError, TypeError) as e:
            raise SchemaError(f"malformed schema document: {e}") from e
        return cls(cols, classes)

    @classmethod
    def from_file(cls, path: str | Path) -> "Schema":
        return cls.from_json_dict(read_json(path))

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_json_dict())


@dataclass(eq=False)
class Dataset:
    """Rows of mixed feature values plus integer class labels.

    ``rows`` maps feature column name -> float (numeric) or str
    (categorical). Immutable by convention: operations return new
    datasets.
    """

    schema: Schema
    rows: tuple[dict, ...]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.rows) != len(self.labels):
            raise DataError("rows and labels length mismatch")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.schema.n_classes):
            raise LabelError("label index out of range for schema classes")
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return len(self.rows)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.schema.n_classes)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.schema, tuple(self.rows[i] for i in idx), self.labels[idx])


@dataclass(frozen=True)
class Preprocessor:
    """Fitted per-column statistics defining the numeric encoding."""

    numeric_stats: dict[str, tuple[float, float]]
    categorical_maps: dict[str, tuple[str, ...]]
    feature_names: tuple[str, ...]
    column_order: tuple[tuple[str, str], ...]  # (name, role) in encoding order

    @property
    def output_dim(self) -> int:
        return len(self.feature_names)

    def feature_layout(self) -> list[tuple[str, str, slice]]:
        """Blocks of the encoded matrix: (role, column name, column slice)."""
        layout = []
        pos = 0
        for name, role in self.column_order:
            width = 1 if role == "numeric" else len(self.categorical_maps[name])
            layout.append((role, name, slice(pos, pos + width)))
            pos += width
        return layout

    def to_json_dict(self) -> dict:
        return {
            "numeric_stats": {k: [v[0], v[1]] for k, v in self.numeric_stats.items()},
            "categorical_maps": {k: list(v) for k, v in self.categorical_maps.items()},
            "column_order": [list(t) for t in self.column_order],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Preprocessor":
        stats = {k: (float(v[0]), float(v[1])) for k, v in d["numeric_stats"].items()}
        maps = {k: tuple(v) for k, v in d["categorical_maps"].items()}
        order = tuple((n, r) for n, r in d["column_order"])
        return cls(stats, maps, _feature_names(order, maps), order)

    @classmethod
    def from_file(cls, path: str | Path) -> "Preprocessor":
        return cls.from_json_dict(read_json(path))

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_json_dict())


@dataclass(eq=False)
class FeatureMatrix:
    """Fully numeric N x d matrix with per-column names."""

    data: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.feature_names):
            raise DataError("feature matrix shape does not match feature names")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SynthConfig:
    """Desk-scale synthetic traffic: four classes, one of them rare.

    The default rare proportion mirrors the extreme 0.05% rarity of the
    exploit class in real Tello captures. When ``n_categorical >= 1``
    the first categorical column ("src_ip") carries the value
    ``RARE_MARKER_VALUE`` with high probability for the rare class only,
    giving experiments a planted rare-class indicator feature.
    """

    n_rows: int = 5000
    class_proportions: tuple[float, ...] = (0.45, 0.41, 0.1395, 0.0005)
    n_numeric: int = 6
    n_categorical: int = 3
    shift: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.class_proportions) - 1.0) > 1e-9:
            raise DataError("class proportions must sum to 1")
        if any(p < 0 for p in self.class_proportions):
            raise DataError("class proportions must be non-negative")
        if self.n_rows < len(self.class_proportions):
            raise DataError("n_rows smaller than the number of classes")
        if self.n_numeric < 1:
            raise DataError("generator needs at least one numeric feature")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Parse a header CSV under the schema's column roles.

    Label strings are mapped to indices via ``schema.label_classes``.
    Columns with role "ignore" are dropped.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c.name for c in schema.columns if c.name not in header]
        if missing:
            raise SchemaError(f"CSV is missing schema columns: {missing}")
        rows, labels = [], []
        class_index = {name: i for i, name in enumerate(schema.label_classes)}
        for i, rec in enumerate(reader):
            row = {}
            for col in schema.feature_columns:
                raw = rec[col.name]
                if col.role == "numeric":
                    try:
                        row[col.name] = float(raw)
                    except ValueError as e:
                        raise ParseError(
                            f"row {i}: cannot parse {raw!r} as numeric for column {col.name!r}"
                        ) from e
                else:
                    row[col.name] = raw
            label_raw = rec[schema.label_column]
            if label_raw not in class_index:
                raise LabelError(f"row {i}: unknown label {label_raw!r}")
            rows.append(row)
            labels.append(class_index[label_raw])
    return Dataset(schema, tuple(rows), np.array(labels, dtype=np.int64))


def _feature_names(column_order, categorical_maps) -> tuple[str, ...]:
    names = []
    for name, role in column_order:
        if role == "numeric":
            names.append(name)
        else:
            names.extend(f"{name}={cat}" for cat in categorical_maps[name])
    return tuple(names)


def fit_preprocessor(train: Dataset) -> Preprocessor:
    """Fit min-max stats and one-hot layouts from training rows only.

    Categories are laid out in sorted order so the encoding does not
    depend on row order. Constant numeric columns keep max == min and
    encode to 0.
    """
    if len(train) == 0:
        raise DataError("cannot fit a preprocessor on an empty dataset")
    schema = train.schema
    numeric_stats: dict[str, tuple[float, float]] = {}
    categorical_maps: dict[str, tuple[str, ...]] = {}
    for col in schema.feature_columns:
        values = [row[col.name] for row in train.rows]
        if col.role == "numeric":
            numeric_stats[col.name] = (float(min(values)), float(max(values)))
        else:
            categorical_maps[col.name] = tuple(sorted(set(values)))
    order = tuple((c.name, c.role) for c in schema.feature_columns)
    return Preprocessor(numeric_stats, categorical_maps, _feature_names(order, categorical_maps), order)


def apply_preprocessor(p: Preprocessor, ds: Dataset) -> FeatureMatrix:
    """Encode a dataset with fitted statistics.

    Out-of-range numerics are clipped into [0, 1]; categories unseen at
    fit time produce an all-zero one-hot block.
    """
    fitted_cols = {name for name, _ in p.column_order}
    ds_cols = {c.name for c in ds.schema.feature_columns}
    if fitted_cols != ds_cols:
        raise SchemaError(
            f"dataset columns {sorted(ds_cols)} do not match fitted columns {sorted(fitted_cols)}"
        )
    n, d = len(ds), p.output_dim
    X = np.zeros((n, d), dtype=np.float64)
    layout = p.feature_layout()
    for i, row in enumerate(ds.rows):
        for role, name, sl in layout:
            if role == "numeric":
                lo, hi = p.numeric_stats[name]
                v = row[name]
                X[i, sl.start] = 0.0 if hi == lo else min(max((v - lo) / (hi - lo), 0.0), 1.0)
            else:
                cats = p.categorical_maps[name]
                try:
                    X[i, sl.start + cats.index(row[name])] = 1.0
                except ValueError:
                    pass  # unseen category: leave the block at zero
    return FeatureMatrix(X, p.feature_names)


def stratified_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic per-class split into disjoint train and test parts.

    Classes with fewer than 2 samples go entirely to train with a
    warning.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must be in (0, 1)")
    rng = derive_rng(seed, "stratified_split")
    train_idx, test_idx = [], []
    for c in range(ds.schema.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            warnings.warn(
                f"class {ds.schema.label_classes[c]!r} has {len(idx)} sample(s); keeping it in train",
                stacklevel=2,
            )
            train_idx.extend(idx)
            continue
        perm = rng.permutation(idx)
        n_test = _round_half_up(len(idx) * test_fraction)
        test_idx.extend(perm[:n_test])
        train_idx.extend(perm[n_test:])
    train_idx.sort()
    test_idx.sort()
    return ds.subset(train_idx), ds.subset(test_idx)


def _class_counts_for(cfg: SynthConfig) -> np.ndarray:
    """Per-class row counts: round half up, floor at 1, balance on the largest class."""
    counts = np.array(
        [max(1, _round_half_up(p * cfg.n_rows)) for p in cfg.class_proportions], dtype=np.int64
    )
    counts[int(np.argmax(counts))] += cfg.n_rows - counts.sum()
    if counts.min() < 1:
        raise DataError("class proportions leave no room for every class")
    return counts


def _numeric_centers(n_classes: int, n_numeric: int, shift: float) -> np.ndarray:
    # Walsh-style +-1 sign patterns keep every pair of classes apart in
    # several coordinates regardless of the seed.
    signs = np.array(
        [
            [(-1.0) ** bin(c & (j + 1)).count("1") for j in range(n_numeric)]
            for c in range(n_classes)
        ]
    )
    return 5.0 + shift * signs


def synth_ecu_like(cfg: SynthConfig) -> Dataset:
    """Generate a labeled 4-class dataset with one very rare class.

    Numeric features are per-class shifted Gaussians; categorical
    features are per-class biased draws, with the first categorical
    column acting as a rare-class marker. Deterministic under
    ``cfg.seed``.
    """
    class_names = DEFAULT_CLASS_NAMES[: len(cfg.class_proportions)]
    if len(class_names) != len(cfg.class_proportions):
        raise DataError("generator supports at most 4 classes")
    rng = derive_rng(cfg.seed, "synth")
    counts = _class_counts_for(cfg)
    rare_class = int(np.argmin(np.asarray(cfg.class_proportions)))
    centers = _numeric_centers(len(class_names), cfg.n_numeric, cfg.shift)

    columns = [Column(f"num{j}", "numeric") for j in range(cfg.n_numeric)]
    cat_names = []
    for j in range(cfg.n_categorical):
        name = "src_ip" if j == 0 else f"cat{j}"
        cat_names.append(name)
        columns.append(Column(name, "categorical"))
    columns.append(Column("label", "label"))
    schema = Schema(tuple(columns), class_names)

    rows, labels = [], []
    for c, n_c in enumerate(counts):
        numeric = rng.normal(loc=centers[c], scale=0.35, size=(n_c, cfg.n_numeric))
        cat_draws = {}
        for j, name in enumerate(cat_names):
            if j == 0:
                pool = _IP_POOL
                probs = np.full(len(pool), 0.0)
                if c == rare_class:
                    probs[0] = 0.9
                    probs[1:] = 0.1 / (len(pool) - 1)
                else:
                    probs[0] = 0.02
                    preferred = 1 + (c % (len(pool) - 1))
                    probs[preferred] = 0.58
                    rest = [k for k in range(1, len(pool)) if k != preferred]
                    probs[rest] = 0.4 / len(rest)
            else:
                pool = _MAC_POOL
                probs = np.full(len(pool), 0.3 / (len(pool) - 1))
                probs[(c + j) % len(pool)] = 0.7
            cat_draws[name] = rng.choice(len(pool), size=n_c, p=probs)
            cat_draws[name] = [pool[k] for k in cat_draws[name]]
        for i in range(n_c):
            row = {f"num{j}": float(numeric[i, j]) for j in range(cfg.n_numeric)}
            for name in cat_names:
                row[name] = cat_draws[name][i]
            rows.append(row)
            labels.append(c)

    perm = rng.permutation(len(rows))
    rows = tuple(rows[i] for i in perm)
    labels = np.array(labels, dtype=np.int64)[perm]
    return Dataset(schema, rows, labels)


def write_dataset_csv(ds: Dataset, path: str | Path) -> None:
    """Write rows plus the label column (as class names) as a header CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    feature_cols = [c.name for c in ds.schema.feature_columns]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(feature_cols + [ds.schema.label_column])
        for row, label in zip(ds.rows, ds.labels):
            rec = [
                fmt_float(row[c]) if isinstance(row[c], float) else row[c] for c in feature_cols
            ]
            writer.writerow(rec + [ds.schema.label_classes[label]])


def write_feature_csv(fm: FeatureMatrix, path: str | Path) -> None:
    """Feature-name header plus float rows at 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fm.feature_names)
        for row in fm.data:
            writer.writerow([fmt_float(v) for v in row])


def read_feature_csv(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = tuple(next(reader))
        except StopIteration:
            raise DataError(f"empty feature CSV: {path}") from None
        data = [[float(v) for v in row] for row in reader]
    return FeatureMatrix(np.array(data, dtype=np.float64).reshape(len(data), len(names)), names)


def write_labels_csv(labels: np.ndarray, class_names, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for v in labels:
            writer.writerow([int(v)])
    write_json(path.with_name("classes.json"), list(class_names))


def read_labels_csv(path: str | Path) -> tuple[np.ndarray, list[str] | None]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        labels = np.array([int(row[0]) for row in reader], dtype=np.int64)
    classes_path = path.with_name("classes.json")
    classes = read_json(classes_path) if classes_path.exists() else None
    return labels, classes
