"""Typed tabular datasets with binary labels: loading, splitting, normalization."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import BadFractions, MissingColumn, NonBinaryLabel, UnparseableValue

NUMERIC = "numeric"
BOOLEAN = "boolean"
CATEGORICAL = "categorical"
KINDS = (NUMERIC, BOOLEAN, CATEGORICAL)

STD_FLOOR = 1e-12

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    cardinality: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.kind == CATEGORICAL and self.cardinality is not None and self.cardinality < 2:
            raise ValueError(f"categorical feature {self.name!r} needs cardinality >= 2")

    @property
    def unknown_code(self) -> int:
        """Reserved code for category strings never seen at load time."""
        return self.cardinality


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")

    def __len__(self):
        return len(self.features)

    def __getitem__(self, i) -> Feature:
        return self.features[i]

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def kinds(self) -> list[str]:
        return [f.kind for f in self.features]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def fingerprint(self) -> int:
        """CRC32 over names, kinds and cardinalities; stable across processes."""
        text = ";".join(f"{f.name}:{f.kind}:{f.cardinality or 0}" for f in self.features)
        return zlib.crc32(text.encode("utf-8"))

    @classmethod
    def parse(cls, text: str) -> "FeatureSchema":
        """Parse ``name=kind`` lines; ``categorical:K`` pins the cardinality."""
        feats = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"schema line {lineno}: expected name=kind, got {line!r}")
            name, kind = (s.strip() for s in line.split("=", 1))
            card = None
            if ":" in kind:
                kind, card_text = kind.split(":", 1)
                card = int(card_text)
            feats.append(Feature(name, kind.lower(), card))
        return cls(tuple(feats))

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.parse(Path(path).read_text())

    def dumps(self) -> str:
        lines = []
        for f in self.features:
            kind = f.kind if f.cardinality is None else f"{f.kind}:{f.cardinality}"
            lines.append(f"{f.name}={kind}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class Dataset:
    """N x F feature matrix, 0/1 labels and the schema that types each column.

    Categorical columns hold integer codes; ``categories`` keeps the
    string dictionary for each of them (code = position in the tuple).
    """

    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    categories: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise ValueError(f"X has shape {X.shape}, schema has {len(self.schema)} features")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must be a vector with one entry per row")
        if not np.isin(y, (0, 1)).all():
            raise NonBinaryLabel("labels must be 0 or 1")
        for j, feat in enumerate(self.schema):
            if feat.kind == CATEGORICAL and feat.cardinality is not None:
                col = X[:, j]
                if (col < 0).any() or (col >= feat.cardinality).any() or (col != np.round(col)).any():
                    raise ValueError(f"categorical column {feat.name!r} has codes outside [0, {feat.cardinality})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int8))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n_rows

    def take(self, rows) -> "Dataset":
        return replace(self, X=self.X[rows], y=self.y[rows])


def _parse_cell(text, feat, lineno, codes):
    if feat.kind == NUMERIC:
        try:
            value = float(text)
        except ValueError:
            raise UnparseableValue(lineno, feat.name, text) from None
        if not math.isfinite(value):
            raise UnparseableValue(lineno, feat.name, text)
        return value
    if feat.kind == BOOLEAN:
        low = text.lower()
        if low in _TRUE:
            return 1.0
        if low in _FALSE:
            return 0.0
        raise UnparseableValue(lineno, feat.name, text)
    # categorical
    if codes is None:
        raise UnparseableValue(lineno, feat.name, text)
    if text not in codes:
        if codes.frozen:
            return float(feat.unknown_code if feat.cardinality is not None else max(len(codes), 2))
        codes[text] = len(codes)
    return float(codes[text])


class _Codes(dict):
    frozen = False


def load_csv(path, schema: FeatureSchema, label_column: str | None = "label",
             categories: Mapping[str, Sequence[str]] | None = None) -> Dataset:
    """Read a header-first, comma-delimited file into a :class:`Dataset`.

    Categorical strings get dense integer codes in first-seen order. Pass
    ``categories`` (e.g. from a training set) to reuse an existing
    dictionary; strings absent from it map to the feature's UNKNOWN code.
    With ``label_column=None`` the labels are all zero (scoring-only input).
    Empty cells are rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        missing = [n for n in schema.names if n not in header]
        if label_column is not None and label_column not in header:
            missing.append(label_column)
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        col_of = [header.index(n) for n in schema.names]
        label_col = header.index(label_column) if label_column is not None else None

        code_maps = []
        for feat in schema:
            if feat.kind != CATEGORICAL:
                code_maps.append(None)
                continue
            cm = _Codes()
            if categories is not None and feat.name in categories:
                cm.update({s: i for i, s in enumerate(categories[feat.name])})
                cm.frozen = True
            code_maps.append(cm)

        rows, labels = [], []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise UnparseableValue(lineno, "<row>", ",".join(rec))
            values = []
            for feat, j, cm in zip(schema, col_of, code_maps):
                cell = rec[j].strip()
                if cell == "":
                    raise UnparseableValue(lineno, feat.name, cell)
                values.append(_parse_cell(cell, feat, lineno, cm))
            rows.append(values)
            if label_col is None:
                labels.append(0)
                continue
            text = rec[label_col].strip()
            try:
                lab = float(text)
            except ValueError:
                raise NonBinaryLabel(f"row {lineno}: label {text!r} is not 0/1") from None
            if lab not in (0.0, 1.0):
                raise NonBinaryLabel(f"row {lineno}: label {text!r} is not 0/1")
            labels.append(int(lab))

    if not rows:
        raise UnparseableValue(1, "<file>", "no data rows")

    feats, cats = [], {}
    for feat, cm in zip(schema, code_maps):
        if feat.kind == CATEGORICAL:
            names = tuple(cm)
            card = feat.cardinality if feat.cardinality is not None else max(len(names), 2)
            if len(names) > card:
                raise UnparseableValue(0, feat.name, f"{len(names)} categories > declared {card}")
            feat = Feature(feat.name, CATEGORICAL, card)
            cats[feat.name] = names
        feats.append(feat)
    # unknown codes (value == cardinality) are only legal for scoring input
    X = np.array(rows, dtype=np.float64)
    full_schema = FeatureSchema(tuple(feats))
    if categories is not None:
        return _unchecked_dataset(X, np.array(labels), full_schema, cats)
    return Dataset(X, np.array(labels), full_schema, cats)


def save_csv(d: Dataset, path, label_column: str = "label"):
    """Write ``d`` in the format :func:`load_csv` reads; categorical codes
    go back to their strings when a dictionary is known."""
    names = d.schema.names
    dicts = [d.categories.get(f.name) if f.kind == CATEGORICAL else None for f in d.schema]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + [label_column])
        for x, y in zip(d.X.tolist(), d.y.tolist()):
            cells = []
            for v, f, names_j in zip(x, d.schema, dicts):
                if f.kind == NUMERIC:
                    cells.append(repr(v))
                elif names_j is not None:
                    cells.append(names_j[int(v)])
                else:
                    cells.append(str(int(v)))
            w.writerow(cells + [y])


def _unchecked_dataset(X, y, schema, cats):
    ds = object.__new__(Dataset)
    object.__setattr__(ds, "X", X)
    object.__setattr__(ds, "y", np.asarray(y, dtype=np.int8))
    object.__setattr__(ds, "schema", schema)
    object.__setattr__(ds, "categories", cats)
    return ds


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n_val = math.floor(n * fractions[1] + 1e-9)
    n_test = math.floor(n * fractions[2] + 1e-9)
    return n - n_val - n_test, n_val, n_test


def split(d: Dataset, fractions=(0.7, 0.15, 0.15), seed: int = 0):
    """Shuffle rows under ``seed`` and cut into (train, val, test).

    Validation and test sizes are floored; the remainder goes to train.
    """
    n_train, n_val, _ = split_sizes(d.n_rows, fractions)
    perm = np.random.default_rng(seed).permutation(d.n_rows)
    return (d.take(perm[:n_train]),
            d.take(perm[n_train:n_train + n_val]),
            d.take(perm[n_train + n_val:]))


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-numeric-feature standardization fitted on a training split."""

    columns: np.ndarray  # indices of numeric features
    mean: np.ndarray
    std: np.ndarray

    def apply_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        if X.ndim == 1:
            X[self.columns] = (X[self.columns] - self.mean) / self.std
        else:
            X[:, self.columns] = (X[:, self.columns] - self.mean) / self.std
        return X

    def apply(self, d: Dataset) -> Dataset:
        return replace(d, X=self.apply_matrix(d.X))

    def quantized(self) -> "Normalizer":
        """Copy with mean/std rounded to float32, as stored in a config table."""
        std = self.std.astype(np.float32).astype(np.float64)
        # constant columns: a float32 mean no longer cancels exactly, so keep the
        # offset from blowing up through the 1e-12 floor
        std[self.std <= STD_FLOOR] = 1.0
        return Normalizer(self.columns.copy(), self.mean.astype(np.float32).astype(np.float64), std)


def fit_normalizer(train: Dataset) -> Normalizer:
    cols = np.array([j for j, k in enumerate(train.schema.kinds) if k == NUMERIC], dtype=np.int64)
    sub = train.X[:, cols]
    mean = sub.mean(axis=0) if len(cols) else np.zeros(0)
    std = sub.std(axis=0) if len(cols) else np.ones(0)  # population (ddof=0)
    const = (sub.max(axis=0) == sub.min(axis=0)) if len(cols) else np.zeros(0, bool)
    mean[const] = sub[0, const]
    std[const] = 0.0
    return Normalizer(cols, mean, np.maximum(std, STD_FLOOR))


def apply(n: Normalizer, d: Dataset) -> Dataset:
    return n.apply(d)
