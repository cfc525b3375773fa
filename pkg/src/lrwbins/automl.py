"""Exhaustive grid search over the first-stage shape (b, n, m)."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

from .allocation import ACCURACY, allocate
from .binning import fit_bins
from .dataset import Dataset, fit_normalizer
from .errors import EmptyGridAfterBudget
from .first_stage import LRParams, build_plain_lr, score_with_fallback, train_lrwbins
from .gbdt import GbdtModel
from .metrics import accuracy, roc_auc

ALL = "all"
EVALUATED = "evaluated"
SKIPPED = "skipped"


@dataclass(frozen=True)
class TuneGrid:
    b_values: tuple = (2, 3, 4)
    n_values: tuple = (3, 5, 7, 9)
    m_values: tuple = (10, 20, ALL)
    bin_budget: int = 20000

    def __post_init__(self):
        if not (self.b_values and self.n_values and self.m_values):
            raise ValueError("grid must be non-empty")
        if any(b < 2 for b in self.b_values):
            raise ValueError("b values must be >= 2")
        if any(n < 1 for n in self.n_values):
            raise ValueError("n values must be >= 1")
        if any(m != ALL and m < 1 for m in self.m_values):
            raise ValueError("m values must be >= 1 or 'all'")
        if self.bin_budget < 1:
            raise ValueError("bin_budget must be >= 1")


@dataclass(frozen=True)
class MaxAuc:
    def value(self, cell) -> float:
        return cell.val_roc_auc


@dataclass(frozen=True)
class MaxCoverageAtTolerance:
    tolerance: float = 0.002

    def value(self, cell) -> float:
        return cell.coverage_at_tolerance


@dataclass(frozen=True)
class TuneCell:
    b: int
    n: int
    m: int | str
    status: str
    total_bins: int
    trained_bins: int = 0
    val_roc_auc: float = math.nan
    val_accuracy: float = math.nan
    coverage_at_tolerance: float = math.nan


@dataclass
class TuneResult:
    cells: list[TuneCell]
    winner: TuneCell
    objective: object = field(default_factory=MaxAuc)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("b,n,m,status,total_bins,trained_bins,val_roc_auc,val_accuracy,coverage_at_tolerance,winner\n")
        for c in self.cells:
            out.write(f"{c.b},{c.n},{c.m},{c.status},{c.total_bins},{c.trained_bins},{c.val_roc_auc:.6f},"
                      f"{c.val_accuracy:.6f},{c.coverage_at_tolerance:.6f},{int(c is self.winner)}\n")
        return out.getvalue()


def _m_count(m, F):
    return F if m == ALL else min(int(m), F)


def tune(train: Dataset, val: Dataset, ranking, grid: TuneGrid = TuneGrid(), objective=MaxAuc(),
         second: GbdtModel | None = None, params: LRParams = LRParams(),
         tolerance: float = 0.002) -> TuneResult:
    """Evaluate every in-budget cell on ``val`` and pick the best.

    ``train`` and ``val`` are raw (unnormalized). Misses are scored by a
    plain global LR over the same m features when measuring validation
    AUC and accuracy. Coverage needs ``second``; without it coverage is
    NaN and only MaxAuc is allowed. Ties go to fewer total bins, then
    smaller m.
    """
    if isinstance(objective, MaxCoverageAtTolerance):
        if second is None:
            raise ValueError("MaxCoverageAtTolerance needs a second-stage model")
        tolerance = objective.tolerance
    F = train.n_features
    norm = fit_normalizer(train).quantized()
    train_n = norm.apply(train)
    plain = {}
    cells = []
    for b in grid.b_values:
        for n in grid.n_values:
            n_eff = min(n, F)
            try:
                spec = fit_bins(train_n, ranking, n_eff, b)
            except ValueError:
                spec = None  # beyond 32-bit bin ids, certainly over budget
            total = spec.total_bins if spec is not None else b ** n_eff
            for m in grid.m_values:
                if spec is None or total > grid.bin_budget:
                    cells.append(TuneCell(b, n, m, SKIPPED, total))
                    continue
                k = _m_count(m, F)
                model = train_lrwbins(train_n, spec, ranking.top(k), params, norm)
                if k not in plain:
                    plain[k] = build_plain_lr(train, ranking, k, params)
                scores, _ = score_with_fallback(model, plain[k], val.X)
                cov = math.nan
                if second is not None:
                    cov = allocate(model, second, val, ACCURACY, tolerance)[1].coverage
                cells.append(TuneCell(b, n, m, EVALUATED, total, len(model.weights_by_bin),
                                      roc_auc(scores, val.y), accuracy(scores, val.y), cov))
    done = [c for c in cells if c.status == EVALUATED]
    if not done:
        raise EmptyGridAfterBudget(f"every cell exceeds bin_budget={grid.bin_budget}")
    winner = min(done, key=lambda c: (-objective.value(c), c.total_bins, _m_count(c.m, F)))
    return TuneResult(cells, winner, objective)
