"""Feature importance orderings: greedy MRMR and GBDT split gain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binning import numeric_digits, quantile_edges
from .dataset import NUMERIC, Dataset
from .gbdt import GbdtModel, GbdtParams, train_gbdt

MRMR = "mrmr"
GBDT_GAIN = "gbdt_gain"


@dataclass(frozen=True)
class FeatureRanking:
    """Features best first, with the score that placed each one."""

    order: tuple[int, ...]
    scores: tuple[float, ...]
    method: str

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError("ranking must be a permutation of feature indices")

    def top(self, k: int) -> list[int]:
        return list(self.order[:k])

    def to_text(self, names=None) -> str:
        lines = ["rank,index,name,score"]
        for r, (j, s) in enumerate(zip(self.order, self.scores), 1):
            name = names[j] if names is not None else str(j)
            lines.append(f"{r},{j},{name},{s:.10g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, method: str = GBDT_GAIN) -> "FeatureRanking":
        order, scores = [], []
        for line in text.strip().splitlines()[1:]:
            parts = line.split(",")
            order.append(int(parts[1]))
            scores.append(float(parts[-1]))
        return cls(tuple(order), tuple(scores), method)


def discretize(d: Dataset, bins: int = 10) -> np.ndarray:
    """Integer-coded copy of the features: numeric columns go to
    equal-frequency bins, Boolean and categorical columns are used as is."""
    out = np.empty(d.X.shape, dtype=np.int64)
    for j, kind in enumerate(d.schema.kinds):
        col = d.X[:, j]
        if kind == NUMERIC:
            out[:, j] = numeric_digits(col, quantile_edges(col, bins))
        else:
            out[:, j] = col.astype(np.int64)
    return out


def mutual_information(a, b) -> float:
    """Plug-in mutual information (nats) of two integer-coded vectors."""
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    na, nb = a.max() + 1, b.max() + 1
    joint = np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb) / a.size
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def rank_mrmr(d: Dataset, discretization_bins: int = 10) -> FeatureRanking:
    """Greedy MRMR, difference form: relevance I(f; y) minus the mean
    I(f; s) over already selected features s. Ties go to the lower index."""
    if discretization_bins < 2:
        raise ValueError("discretization_bins must be >= 2")
    Z = discretize(d, discretization_bins)
    F = Z.shape[1]
    relevance = np.array([mutual_information(Z[:, j], d.y) for j in range(F)])
    redundancy = np.zeros(F)
    remaining = list(range(F))
    order, scores = [], []
    while remaining:
        k = len(order)
        crit = [relevance[j] - (redundancy[j] / k if k else 0.0) for j in remaining]
        i = int(np.argmax(crit))  # first maximum = lowest index among ties
        best = remaining.pop(i)
        order.append(best)
        scores.append(float(crit[i]))
        for j in remaining:
            redundancy[j] += mutual_information(Z[:, j], Z[:, best])
    return FeatureRanking(tuple(order), tuple(scores), MRMR)


def ranking_from_model(model: GbdtModel) -> FeatureRanking:
    """Order features by total split gain; unused features follow by index."""
    gain = model.feature_gain()
    order = sorted(range(len(gain)), key=lambda j: (-gain[j], j))
    return FeatureRanking(tuple(order), tuple(float(gain[j]) for j in order), GBDT_GAIN)


def rank_gbdt_gain(d: Dataset, params: GbdtParams = GbdtParams()) -> FeatureRanking:
    return ranking_from_model(train_gbdt(d, params))
