"""End-to-end fit: second stage, ranking, first stage, allocation."""

from __future__ import annotations

from dataclasses import dataclass

from .allocation import ACCURACY, Allocation, CoverageCurve, allocate
from .dataset import Dataset
from .first_stage import LRParams, LRwBinsModel, build_lrwbins, build_plain_lr
from .gbdt import GbdtModel, GbdtParams, train_gbdt
from .ranking import GBDT_GAIN, MRMR, FeatureRanking, rank_mrmr, ranking_from_model


@dataclass
class Fitted:
    gbdt: GbdtModel
    ranking: FeatureRanking
    plain: LRwBinsModel       # one global LR over the top m features
    lrwbins: LRwBinsModel     # every trained bin
    first: LRwBinsModel       # allocated bins only
    allocation: Allocation
    curve: CoverageCurve


def fit(train: Dataset, val: Dataset, b: int = 3, n: int = 7, m: int = 20, tolerance: float = 0.002,
        metric: str = ACCURACY, ranking: str = GBDT_GAIN, gbdt_params: GbdtParams = GbdtParams(),
        lr_params: LRParams = LRParams()) -> Fitted:
    """Train both stages on ``train`` and allocate bins on ``val``.

    ``n`` is capped at the number of features. With ``ranking="gbdt_gain"``
    the second-stage model's own split gains order the features.
    """
    gbdt = train_gbdt(train, gbdt_params)
    if ranking == GBDT_GAIN:
        rk = ranking_from_model(gbdt)
    elif ranking == MRMR:
        rk = rank_mrmr(train)
    else:
        raise ValueError(f"unknown ranking method {ranking!r}")
    n = min(n, train.n_features)
    full = build_lrwbins(train, rk, n, b, m, lr_params)
    plain = build_plain_lr(train, rk, m, lr_params)
    first, alloc, curve = allocate(full, gbdt, val, metric, tolerance)
    return Fitted(gbdt, rk, plain, full, first, alloc, curve)
