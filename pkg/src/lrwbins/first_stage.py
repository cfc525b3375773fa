"""Per-bin logistic regression: the LRwBins first stage.

Each combined bin with enough training rows gets its own LR over the m
inference features. Scoring a row means normalizing it, finding its bin
and applying the logistic function to that bin's weights; a bin without
weights is a miss and the row belongs to the second stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .binning import BinSpec, combined_bin_index, fit_bins
from .dataset import CATEGORICAL, Dataset, Normalizer, fit_normalizer
from .errors import NonFiniteInput
from .logistic import expit, log1pexp, logit, sigmoid

__all__ = ["sigmoid", "LRWeights", "LRParams", "LRwBinsModel", "train_lr",
           "train_lrwbins", "build_lrwbins", "build_plain_lr", "predict_first_stage",
           "score_with_fallback"]

RATE_CLAMP = 1e-6


@dataclass(frozen=True, eq=False)
class LRWeights:
    bias: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not (math.isfinite(self.bias) and np.isfinite(w).all()):
            raise NonFiniteInput("LR weights must be finite")
        object.__setattr__(self, "weights", w)

    def margin(self, Z) -> np.ndarray:
        return self.bias + np.asarray(Z) @ self.weights


@dataclass(frozen=True)
class LRParams:
    l2: float = 1.0
    tol: float = 1e-6
    max_iter: int = 500
    min_bin_rows: int = 30
    seed: int = 0
    # pseudo-rows pulling a categorical level's log-odds toward the prior
    encoding_smoothing: float = 10.0


def _objective(Z, y, w, b, l2):
    z = b + Z @ w
    n = y.size
    return (np.sum(log1pexp(z) - y * z) + 0.5 * l2 * (w @ w)) / n, z


def train_lr(rows, labels, l2: float = 1.0, tol: float = 1e-6, max_iter: int = 500,
             seed: int = 0, history: list | None = None) -> LRWeights:
    """L2-regularized logistic regression by full-batch gradient descent.

    The objective is ``(sum of log-losses + l2/2 * |w|^2) / N`` with an
    unpenalized bias. Each step starts from a Barzilai-Borwein length and
    backtracks (halving) until the Armijo condition with c = 1e-4 holds,
    so the objective never increases; ``history`` (if given) receives the
    objective after every accepted step. Stops when the gradient's max-norm
    drops below ``tol`` or after ``max_iter`` steps. A single-class input
    returns zero weights and the clamped class log-odds as bias. Descent
    starts from zero weights, so ``seed`` does not change the result.
    """
    Z = np.asarray(rows, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    y = np.asarray(labels, dtype=np.float64)
    if Z.shape[0] < 1:
        raise ValueError("need at least one row")
    if l2 < 0:
        raise ValueError("l2 must be >= 0")
    if not (np.isfinite(Z).all() and np.isfinite(y).all()):
        raise NonFiniteInput("rows and labels must be finite")
    n, m = Z.shape
    rate = min(max(y.mean(), RATE_CLAMP), 1.0 - RATE_CLAMP)
    if y.min() == y.max():
        return LRWeights(logit(rate), np.zeros(m))

    theta = np.zeros(m + 1)
    theta[0] = logit(rate)

    def grad(th, z):
        r = expit(z) - y
        return np.concatenate(([r.sum()], Z.T @ r + l2 * th[1:])) / n

    f, z = _objective(Z, y, theta[1:], theta[0], l2)
    g = grad(theta, z)
    if history is not None:
        history.append(f)
    step = 1.0
    prev_theta = prev_g = None
    for _ in range(max_iter):
        if np.max(np.abs(g)) < tol:
            break
        if prev_theta is not None:
            s = theta - prev_theta
            dg = g - prev_g
            sy = s @ dg
            if sy > 0:
                step = (s @ s) / sy
        gg = g @ g
        while True:
            cand = theta - step * g
            f_new, z_new = _objective(Z, y, cand[1:], cand[0], l2)
            if f_new <= f - 1e-4 * step * gg:
                break
            step *= 0.5
            if step < 1e-16:
                break
        if f_new > f:
            break  # no descent possible at machine precision
        prev_theta, prev_g = theta, g
        theta, f, z = cand, f_new, z_new
        g = grad(theta, z)
        if history is not None:
            history.append(f)
    return LRWeights(float(theta[0]), theta[1:])


def category_log_odds(codes, y, cardinality: int, smoothing: float) -> np.ndarray:
    """Smoothed log-odds of each category relative to the overall rate.

    Returns ``cardinality + 1`` values; the last (UNKNOWN) is 0, as is any
    level never seen in training. Values are float32-representable.
    """
    codes = np.asarray(codes, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    prior = min(max(y.mean(), RATE_CLAMP), 1.0 - RATE_CLAMP)
    pos = np.bincount(codes, y, minlength=cardinality + 1)[: cardinality + 1]
    tot = np.bincount(codes, minlength=cardinality + 1)[: cardinality + 1]
    a = smoothing
    rate = (pos + a * prior) / (tot + a)
    rate = np.clip(rate, RATE_CLAMP, 1.0 - RATE_CLAMP)
    out = np.log(rate / (1.0 - rate)) - logit(prior)
    out[tot == 0] = 0.0
    out[cardinality] = 0.0
    return out.astype(np.float32).astype(np.float64)


@dataclass(eq=False)
class LRwBinsModel:
    spec: BinSpec
    inference_features: tuple[int, ...]
    weights_by_bin: dict[int, LRWeights]
    normalizer: Normalizer
    min_bin_rows: int
    encodings: dict[int, np.ndarray] = field(default_factory=dict)
    n_features: int | None = None
    categories: dict[int, tuple[str, ...]] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.inference_features)

    def inputs(self, Xn) -> np.ndarray:
        """LR input matrix from normalized rows: numeric and Boolean values
        as they are, categorical codes replaced by their log-odds."""
        Xn = np.atleast_2d(Xn)
        Z = Xn[:, list(self.inference_features)].astype(np.float64, copy=True)
        for col, j in enumerate(self.inference_features):
            table = self.encodings.get(j)
            if table is not None:
                codes = Xn[:, j].astype(np.int64)
                codes = np.where((codes < 0) | (codes >= table.size), table.size - 1, codes)
                Z[:, col] = table[codes]
        return Z

    def bin_ids(self, X) -> np.ndarray:
        return self.spec.bin_ids(self.normalizer.apply_matrix(np.atleast_2d(X)))

    def predict_proba(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Scores for raw rows and a hit mask; misses score NaN."""
        Xn = self.normalizer.apply_matrix(np.atleast_2d(X))
        bins = self.spec.bin_ids(Xn)
        Z = self.inputs(Xn)
        scores = np.full(len(bins), np.nan)
        hit = np.zeros(len(bins), dtype=bool)
        uniq, inv = np.unique(bins, return_inverse=True)
        for u_i, b in enumerate(uniq):
            w = self.weights_by_bin.get(int(b))
            if w is None:
                continue
            rows = inv == u_i
            scores[rows] = expit(w.margin(Z[rows]))
            hit[rows] = True
        return scores, hit

    def filtered(self, bins) -> "LRwBinsModel":
        keep = {int(b) for b in bins}
        return replace(self, weights_by_bin={b: w for b, w in self.weights_by_bin.items() if b in keep})


def _encodings_for(train: Dataset, inference_features, smoothing):
    enc = {}
    for j in inference_features:
        feat = train.schema[j]
        if feat.kind == CATEGORICAL:
            enc[j] = category_log_odds(train.X[:, j], train.y, feat.cardinality, smoothing)
    return enc


def train_lrwbins(train: Dataset, spec: BinSpec, inference_features, params: LRParams = LRParams(),
                  normalizer: Normalizer | None = None) -> LRwBinsModel:
    """Fit one LR per combined bin holding at least ``min_bin_rows`` rows.

    ``train`` must already be normalized by ``normalizer`` (identity if
    omitted).
    """
    inference_features = tuple(int(j) for j in inference_features)
    if not inference_features:
        raise ValueError("inference_features must be non-empty")
    if normalizer is None:
        normalizer = Normalizer(np.zeros(0, dtype=np.int64), np.zeros(0), np.ones(0))
    model = LRwBinsModel(spec, inference_features, {}, normalizer, params.min_bin_rows,
                         _encodings_for(train, inference_features, params.encoding_smoothing),
                         train.n_features)
    bins = spec.bin_ids(train.X)
    Z = model.inputs(train.X)
    order = np.argsort(bins, kind="stable")
    uniq, starts, counts = np.unique(bins[order], return_index=True, return_counts=True)
    for b, s, c in zip(uniq, starts, counts):
        if c < params.min_bin_rows:
            continue
        rows = order[s:s + c]
        model.weights_by_bin[int(b)] = train_lr(Z[rows], train.y[rows], params.l2, params.tol,
                                                params.max_iter, params.seed)
    return model


def build_lrwbins(train_raw: Dataset, ranking, n: int = 7, b: int = 3, m: int = 20,
                  params: LRParams = LRParams()) -> LRwBinsModel:
    """Normalize, bin the top ``n`` features and train on the top ``m``.

    The normalizer is rounded to float32 first so that the exported table
    reproduces bin assignments exactly.
    """
    norm = fit_normalizer(train_raw).quantized()
    train = norm.apply(train_raw)
    spec = fit_bins(train, ranking, n, b)
    model = train_lrwbins(train, spec, ranking.top(m), params, norm)
    model.categories = _used_categories(train_raw, model)
    return model


def build_plain_lr(train_raw: Dataset, ranking, m: int = 20, params: LRParams = LRParams()) -> LRwBinsModel:
    """Single global LR over the top ``m`` features (an LRwBins with one bin)."""
    norm = fit_normalizer(train_raw).quantized()
    train = norm.apply(train_raw)
    model = train_lrwbins(train, BinSpec(()), ranking.top(m), replace(params, min_bin_rows=1), norm)
    model.categories = _used_categories(train_raw, model)
    return model


def _used_categories(d: Dataset, model: LRwBinsModel) -> dict[int, tuple[str, ...]]:
    used = set(model.spec.indices) | set(model.inference_features)
    return {j: tuple(d.categories[d.schema[j].name]) for j in sorted(used)
            if d.schema[j].kind == CATEGORICAL and d.schema[j].name in d.categories}


def predict_first_stage(model: LRwBinsModel, row) -> float | None:
    """Score one raw row, or ``None`` (a miss) when its bin has no weights."""
    xn = model.normalizer.apply_matrix(np.asarray(row, dtype=np.float64))
    w = model.weights_by_bin.get(combined_bin_index(xn, model.spec))
    if w is None:
        return None
    z = model.inputs(xn[None, :])[0]
    return sigmoid(w.bias + float(z @ w.weights))


def score_with_fallback(model: LRwBinsModel, fallback: LRwBinsModel, X) -> tuple[np.ndarray, np.ndarray]:
    """LRwBins scores with misses filled by ``fallback`` (normally the plain
    global LR), so LRwBins can be judged as a standalone model."""
    scores, hit = model.predict_proba(X)
    if not hit.all():
        scores[~hit] = fallback.predict_proba(np.atleast_2d(X)[~hit])[0]
    return scores, hit
