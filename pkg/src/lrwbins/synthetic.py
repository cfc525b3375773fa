"""Seeded synthetic binary-classification data with region-dependent structure.

The label follows a different linear model in each region of a few
coarse feature cuts, so local LRs beat a global one. Half the regions
(``color`` in the upper two codes) add a strong interaction that only a
tree ensemble captures, so a fixed share of rows needs the fallback
whatever the sample size. Numeric values are rounded
to two decimals, like most logged measurements.
"""

from __future__ import annotations

import numpy as np

from .dataset import BOOLEAN, CATEGORICAL, NUMERIC, Dataset, Feature, FeatureSchema

SCHEMA = FeatureSchema((
    Feature("x0", NUMERIC), Feature("x1", NUMERIC), Feature("x2", NUMERIC),
    Feature("x3", NUMERIC), Feature("x4", NUMERIC), Feature("flag", BOOLEAN),
    Feature("color", CATEGORICAL, 4), Feature("shape", CATEGORICAL, 6),
))


def make_dataset(n_rows: int, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    num = np.round(rng.standard_normal((n_rows, 5)), 2)
    flag = (rng.random(n_rows) < 0.3).astype(np.float64)
    color = rng.integers(0, 4, n_rows)
    shape = rng.choice(6, n_rows, p=[0.3, 0.25, 0.2, 0.1, 0.1, 0.05])
    # region id from three coarse cuts
    region = (num[:, 0] > 0).astype(int) * 4 + (num[:, 1] > 0).astype(int) * 2 + (color >= 2)
    # fixed per-region coefficients (independent of ``seed``)
    coef = np.random.default_rng(12345).normal(0.0, 1.2, (8, 6))
    z = coef[region, 0] + np.einsum("ij,ij->i", coef[region, 1:], np.c_[num[:, 2:5], flag, shape / 5.0])
    z += np.where(color >= 2, 2.5 * np.sin(2.0 * num[:, 3]) * num[:, 4], 0.0)
    y = (rng.random(n_rows) < 1.0 / (1.0 + np.exp(-z))).astype(np.int64)
    X = np.c_[num, flag, color, shape].astype(np.float64)
    cats = {"color": ("red", "green", "blue", "gray"), "shape": ("a", "b", "c", "d", "e", "f")}
    return Dataset(X, y, SCHEMA, cats)
