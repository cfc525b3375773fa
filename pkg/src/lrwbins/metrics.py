"""Classification metrics and the analytic multistage latency model."""

from __future__ import annotations

import numpy as np

from .errors import SingleClass


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # start index of each run of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size, dtype=np.float64)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic.

    Tied (positive, negative) pairs count one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC AUC needs both classes")
    r = average_ranks(scores)
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        return float("nan")
    return float(np.mean((scores >= threshold) == (labels == 1)))


def metric_fn(kind: str):
    """Look up a metric by name: ``"accuracy"`` or ``"roc_auc"``."""
    kind = kind.lower().replace("-", "_")
    if kind in ("accuracy", "acc"):
        return accuracy
    if kind in ("roc_auc", "auc", "rocauc"):
        return roc_auc
    raise ValueError(f"unknown metric {kind!r}")


def projected_multistage_latency(t1: float, t2: float, coverage: float) -> float:
    """Mean latency when the first stage is always tried and a miss adds ``t2``."""
    if not 0.0 <= coverage <= 1.0:
        raise ValueError("coverage must be in [0, 1]")
    return coverage * t1 + (1.0 - coverage) * (t1 + t2)
