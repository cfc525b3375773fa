"""Quantile bins on the top-ranked features and the combined-bin index.

A row's per-feature bin numbers form a tuple ordered by feature importance;
the tuple is read as a mixed-radix number (most important feature = most
significant digit) to give the combined bin id.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from .dataset import BOOLEAN, CATEGORICAL, NUMERIC, Dataset
from .errors import EmptyTrainingSet

MAX_TOTAL_BINS = 2**32  # bin ids are exported as u32


def nearest_rank_quantiles(values, levels) -> np.ndarray:
    """Nearest-rank quantiles: the value at sorted index ``ceil(q*N) - 1``.

    ``levels`` are given as exact fractions ``(k, b)`` so the index is
    computed in integer arithmetic.
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = v.size
    idx = [max(-(-k * n // b) - 1, 0) for k, b in levels]
    return v[idx]


def _round_up_f32(edges: np.ndarray) -> np.ndarray:
    # exported edges are float32; rounding towards +inf keeps every training
    # value that equalled an edge in the lower cell
    e32 = edges.astype(np.float32)
    low = e32.astype(np.float64) < edges
    e32[low] = np.nextafter(e32[low], np.float32(np.inf))
    return e32.astype(np.float64)


def quantile_edges(values, b: int) -> np.ndarray:
    """``b - 1`` cut values at levels k/b, float32-representable, deduplicated.

    A cut at or above the training maximum separates nothing and is
    dropped, so a constant feature ends with a single bin.
    """
    if b < 2:
        raise ValueError("b must be >= 2")
    values = np.asarray(values, dtype=np.float64)
    cuts = np.unique(_round_up_f32(nearest_rank_quantiles(values, [(k, b) for k in range(1, b)])))
    return cuts[cuts < values.max()]


def numeric_digits(values, edges) -> np.ndarray:
    """Cell index of each value; cells are right-closed, so a value equal
    to an edge falls in the lower cell."""
    return np.searchsorted(edges, values, side="left")


@dataclass(frozen=True, eq=False)
class BinnedFeature:
    index: int
    kind: str
    edges: np.ndarray | None = None
    cardinality: int | None = None

    @property
    def radix(self) -> int:
        if self.kind == NUMERIC:
            return len(self.edges) + 1
        if self.kind == BOOLEAN:
            return 2
        return self.cardinality + 1  # last bin is UNKNOWN

    def digits(self, column) -> np.ndarray:
        column = np.asarray(column, dtype=np.float64)
        if self.kind == NUMERIC:
            return numeric_digits(column, self.edges)
        if self.kind == BOOLEAN:
            return (column > 0.5).astype(np.int64)
        codes = column.astype(np.int64)
        return np.where((codes < 0) | (codes >= self.cardinality), self.cardinality, codes)


@dataclass(frozen=True, eq=False)
class BinSpec:
    features: tuple[BinnedFeature, ...]

    @property
    def radices(self) -> tuple[int, ...]:
        return tuple(f.radix for f in self.features)

    @property
    def total_bins(self) -> int:
        return prod(self.radices)

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def indices(self) -> list[int]:
        return [f.index for f in self.features]

    def digits(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not self.features:
            return np.zeros((X.shape[0], 0), dtype=np.int64)
        return np.stack([f.digits(X[:, f.index]) for f in self.features], axis=1)

    def bin_ids(self, X) -> np.ndarray:
        """Combined bin id for every row of a normalized matrix."""
        d = self.digits(X)
        idx = np.zeros(d.shape[0], dtype=np.int64)
        for j, r in enumerate(self.radices):
            idx = idx * r + d[:, j]
        return idx


def mixed_radix(digits, radices) -> int:
    idx = 0
    for d, r in zip(digits, radices):
        if not 0 <= d < r:
            raise ValueError(f"digit {d} out of range for radix {r}")
        idx = idx * r + d
    return idx


def unravel(index: int, radices) -> tuple[int, ...]:
    out = []
    for r in reversed(radices):
        index, d = divmod(index, r)
        out.append(d)
    return tuple(reversed(out))


def fit_bins(train: Dataset, ranking, n: int, b: int) -> BinSpec:
    """Bin the ``n`` best-ranked features of a normalized training set.

    Numeric features get up to ``b`` quantile bins (duplicate cut values
    collapse), Boolean features two bins, categorical features one bin
    per code plus one for UNKNOWN.
    """
    if train.n_rows == 0:
        raise EmptyTrainingSet("cannot fit bins on an empty training set")
    if not 1 <= n <= train.n_features:
        raise ValueError(f"n must be in [1, {train.n_features}], got {n}")
    if b < 2:
        raise ValueError("b must be >= 2")
    feats = []
    for j in list(ranking.order)[:n]:
        feat = train.schema[j]
        if feat.kind == NUMERIC:
            feats.append(BinnedFeature(j, NUMERIC, edges=quantile_edges(train.X[:, j], b)))
        elif feat.kind == BOOLEAN:
            feats.append(BinnedFeature(j, BOOLEAN))
        else:
            feats.append(BinnedFeature(j, CATEGORICAL, cardinality=feat.cardinality))
    spec = BinSpec(tuple(feats))
    if spec.total_bins > MAX_TOTAL_BINS:
        raise ValueError(f"{spec.total_bins} combined bins do not fit 32-bit bin ids")
    return spec


def combined_bin_index(row, spec: BinSpec) -> int:
    """Bin id of a single normalized row (scalar path, no numpy batching)."""
    idx = 0
    for f in spec.features:
        v = float(row[f.index])
        if f.kind == NUMERIC:
            d = int(np.searchsorted(f.edges, v, side="left"))
        elif f.kind == BOOLEAN:
            d = 1 if v > 0.5 else 0
        else:
            c = int(v)
            d = c if 0 <= c < f.cardinality else f.cardinality
        idx = idx * f.radix + d
    return idx
