"""Side-by-side quality report for plain LR, LRwBins, GBDT and the hybrid."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import SingleClass
from .first_stage import LRwBinsModel, score_with_fallback
from .gbdt import GbdtModel
from .metrics import accuracy, roc_auc


@dataclass(frozen=True)
class ModelRow:
    model: str
    roc_auc: float
    accuracy: float
    n_rows: int
    coverage: float = math.nan    # rows scored by a first stage (hybrid, lrwbins)
    delta_auc: float = math.nan   # GBDT minus this model
    delta_acc: float = math.nan


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ModelRow, ...]

    def __getitem__(self, name) -> ModelRow:
        for r in self.rows:
            if r.model == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("model,roc_auc,accuracy,n_rows,coverage,delta_auc,delta_acc\n")
        for r in self.rows:
            out.write(f"{r.model},{r.roc_auc:.6f},{r.accuracy:.6f},{r.n_rows},{r.coverage:.6f},"
                      f"{r.delta_auc:.6f},{r.delta_acc:.6f}\n")
        return out.getvalue()


def _auc(s, y):
    try:
        return roc_auc(s, y)
    except SingleClass:
        return math.nan


def hybrid_scores(first, second: GbdtModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Allocated first stage on hits, GBDT on misses."""
    s, hit = first.predict_proba(X)
    if not hit.all():
        s[~hit] = second.predict_proba(np.atleast_2d(X)[~hit])
    return s, hit


def evaluate(test: Dataset, second: GbdtModel, plain: LRwBinsModel | None = None,
             lrwbins: LRwBinsModel | None = None, hybrid_first: LRwBinsModel | None = None) -> EvalReport:
    """Score every supplied model on ``test``.

    ``lrwbins`` is the unfiltered first stage judged on its own (misses
    go to ``plain``); ``hybrid_first`` is the allocated first stage with
    GBDT fallback.
    """
    y = test.y
    g = second.predict_proba(test.X)
    g_auc, g_acc = _auc(g, y), accuracy(g, y)
    rows = []

    def add(name, s, cov=math.nan):
        a, c = _auc(s, y), accuracy(s, y)
        rows.append(ModelRow(name, a, c, int(y.size), cov, g_auc - a, g_acc - c))

    if plain is not None:
        add("lr", plain.predict_proba(test.X)[0])
    if lrwbins is not None:
        if plain is None:
            raise ValueError("LRwBins on its own needs the plain LR for its misses")
        s, hit = score_with_fallback(lrwbins, plain, test.X)
        add("lrwbins", s, float(hit.mean()))
    rows.append(ModelRow("gbdt", g_auc, g_acc, int(y.size), 0.0, 0.0, 0.0))
    if hybrid_first is not None:
        s, hit = hybrid_scores(hybrid_first, second, test.X)
        add("hybrid", s, float(hit.mean()))
    return EvalReport(tuple(rows))
