"""Split combined bins between the first stage and the fallback model.

Bins are ranked by how much the second stage beats the first stage on
validation rows. Taking longer prefixes of that ranking trades coverage
(rows served by the first stage) against the quality of the hybrid
predictor; a tolerance on the quality loss picks the cut.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import SingleClass
from .first_stage import LRwBinsModel
from .gbdt import GbdtModel
from .metrics import accuracy, metric_fn, roc_auc

ACCURACY = "accuracy"
ROC_AUC = "roc_auc"


@dataclass(frozen=True)
class BinReport:
    bin: int
    rows: int
    first_metric: float   # NaN when undefined or the bin has no weights
    second_metric: float
    delta: float          # second - first; +inf marks an ineligible bin


@dataclass(frozen=True)
class CurvePoint:
    cut_index: int
    coverage: float
    hybrid_metric: float
    delta_vs_second_stage: float  # second-stage metric - hybrid metric
    hybrid_accuracy: float
    hybrid_auc: float
    prefix_metric: float          # first-stage metric on the prefix rows only


@dataclass(frozen=True)
class CoverageCurve:
    points: tuple[CurvePoint, ...]
    bin_order: tuple[int, ...]
    metric: str
    second_stage_metric: float

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("cut_index,coverage,hybrid_accuracy,hybrid_auc,delta_vs_second_stage,prefix_metric,added_bin\n")
        for p in self.points:
            added = self.bin_order[p.cut_index - 1] if p.cut_index else ""
            out.write(f"{p.cut_index},{p.coverage:.6f},{p.hybrid_accuracy:.6f},{p.hybrid_auc:.6f},"
                      f"{p.delta_vs_second_stage:.6f},{p.prefix_metric:.6f},{added}\n")
        return out.getvalue()


@dataclass(frozen=True)
class Allocation:
    first_stage_bins: frozenset
    coverage: float
    tolerance: float
    metric: str


@dataclass(frozen=True, eq=False)
class ValidationScores:
    """Both models' scores on a validation set, computed once."""

    bins: np.ndarray
    first: np.ndarray   # NaN on misses
    hit: np.ndarray
    second: np.ndarray
    y: np.ndarray


def score_validation(first: LRwBinsModel, second: GbdtModel, val: Dataset) -> ValidationScores:
    s1, hit = first.predict_proba(val.X)
    return ValidationScores(first.bin_ids(val.X), s1, hit, second.predict_proba(val.X), val.y)


def _safe_metric(fn, scores, y):
    try:
        return fn(scores, y)
    except SingleClass:
        return math.nan


def _scores(first, second, val, scores):
    if scores is None:
        scores = score_validation(first, second, val)
    return scores


def evaluate_per_bin(first: LRwBinsModel, second: GbdtModel, val: Dataset, metric: str = ACCURACY,
                     scores: ValidationScores | None = None) -> list[BinReport]:
    """Metric of both models on the validation rows of every occupied bin."""
    sc = _scores(first, second, val, scores)
    fn = metric_fn(metric)
    order = np.argsort(sc.bins, kind="stable")
    uniq, starts, counts = np.unique(sc.bins[order], return_index=True, return_counts=True)
    reports = []
    for b, s, c in zip(uniq, starts, counts):
        rows = order[s:s + c]
        y = sc.y[rows]
        m2 = _safe_metric(fn, sc.second[rows], y)
        if int(b) in first.weights_by_bin:
            m1 = _safe_metric(fn, sc.first[rows], y)
        else:
            m1 = math.nan
        delta = m2 - m1 if not (math.isnan(m1) or math.isnan(m2)) else math.inf
        reports.append(BinReport(int(b), int(c), m1, m2, delta))
    return reports


def sweep(reports, first: LRwBinsModel, second: GbdtModel, val: Dataset, metric: str = ACCURACY,
          scores: ValidationScores | None = None) -> CoverageCurve:
    """Hybrid quality on the whole validation set for every prefix of the
    eligible bins sorted by ascending delta (ties: bigger bin, then id)."""
    sc = _scores(first, second, val, scores)
    eligible = sorted((r for r in reports if math.isfinite(r.delta)), key=lambda r: (r.delta, -r.rows, r.bin))
    order = tuple(r.bin for r in eligible)
    n = sc.y.size
    kind = ACCURACY if metric_fn(metric) is accuracy else ROC_AUC
    fn = metric_fn(kind)

    # rows of each eligible bin, in sweep order
    pos_of = {b: i for i, b in enumerate(order)}
    rank = np.array([pos_of.get(int(b), -1) for b in sc.bins], dtype=np.int64)

    second_metric = _safe_metric(fn, sc.second, sc.y)
    hybrid = sc.second.copy()
    routed = np.zeros(n, dtype=bool)
    points = []
    for k in range(len(order) + 1):
        if k:
            rows = rank == k - 1
            hybrid[rows] = sc.first[rows]
            routed |= rows
        acc = accuracy(hybrid, sc.y)
        auc = _safe_metric(roc_auc, hybrid, sc.y)
        hm = acc if kind == ACCURACY else auc
        prefix = _safe_metric(fn, sc.first[routed], sc.y[routed]) if routed.any() else math.nan
        points.append(CurvePoint(k, routed.sum() / n, hm, second_metric - hm, acc, auc, prefix))
    return CoverageCurve(tuple(points), order, kind, second_metric)


def select_cutoff(curve: CoverageCurve, second_stage_metric: float | None = None,
                  tolerance: float = 0.002) -> Allocation:
    """Largest-coverage prefix whose quality loss stays within ``tolerance``."""
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    ref = curve.second_stage_metric if second_stage_metric is None else second_stage_metric
    best = None
    for p in curve.points:
        if ref - p.hybrid_metric <= tolerance and (best is None or p.coverage > best.coverage):
            best = p
    if best is None:
        return Allocation(frozenset(), 0.0, tolerance, curve.metric)
    return Allocation(frozenset(curve.bin_order[:best.cut_index]), float(best.coverage), tolerance, curve.metric)


def filter_model(first: LRwBinsModel, a: Allocation) -> LRwBinsModel:
    """Keep weights only for the allocated bins; every other bin misses."""
    return first.filtered(a.first_stage_bins)


def allocate(first: LRwBinsModel, second: GbdtModel, val: Dataset, metric: str = ACCURACY,
             tolerance: float = 0.002):
    """Run the whole allocation: per-bin reports, sweep, cutoff, filter.

    Returns ``(filtered_model, allocation, curve)``.
    """
    sc = score_validation(first, second, val)
    reports = evaluate_per_bin(first, second, val, metric, scores=sc)
    curve = sweep(reports, first, second, val, metric, scores=sc)
    alloc = select_cutoff(curve, curve.second_stage_metric, tolerance)
    return filter_model(first, alloc), alloc, curve
