"""Gradient-boosted regression trees with logistic loss (the second stage).

Trees are grown level by level with an exact greedy split search: for
every numeric feature, each boundary between adjacent distinct values
present in an open node is a candidate.
Categorical features split one code against the rest.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import CATEGORICAL, Dataset
from .errors import SchemaMismatch, SingleClassDataset
from .logistic import expit, logistic_loss, sigmoid


@dataclass(frozen=True)
class GbdtParams:
    num_trees: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    min_child_rows: int = 20
    l2_leaf: float = 1.0
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 0:
            raise ValueError("num_trees must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")
        if self.min_child_rows < 1:
            raise ValueError("min_child_rows must be >= 1")
        if self.l2_leaf < 0:
            raise ValueError("l2_leaf must be >= 0")


@dataclass(eq=False)
class Tree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf.

    A row goes left when ``x < threshold`` (numeric) or ``x == threshold``
    (categorical code).
    """

    feature: np.ndarray
    threshold: np.ndarray
    categorical: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            v = X[active, self.feature[nd]]
            thr = self.threshold[nd]
            go_left = np.where(self.categorical[nd], v == thr, v < thr)
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_values(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_index(X)]

    def leaf_value(self, row) -> float:
        i = 0
        while self.feature[i] >= 0:
            v = row[self.feature[i]]
            t = self.threshold[i]
            go_left = (v == t) if self.categorical[i] else (v < t)
            i = self.left[i] if go_left else self.right[i]
        return float(self.value[i])


@dataclass(eq=False)
class GbdtModel:
    trees: list[Tree]
    base_score: float
    n_features: int
    feature_kinds: tuple[str, ...]
    schema_fingerprint: int
    categories: dict[int, tuple[str, ...]] = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list, repr=False)

    def margin(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        m = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            m += t.predict_values(X)
        return m

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.margin(X))

    def feature_gain(self) -> np.ndarray:
        """Total split gain per feature summed over every tree."""
        out = np.zeros(self.n_features)
        for t in self.trees:
            internal = t.feature >= 0
            np.add.at(out, t.feature[internal], t.gain[internal])
        return out


def predict_gbdt(model: GbdtModel, row) -> float:
    """Probability for one row; the scalar path used by the RPC server."""
    if len(row) != model.n_features:
        raise SchemaMismatch(f"expected {model.n_features} features, got {len(row)}")
    m = model.base_score
    for t in model.trees:
        m += t.leaf_value(row)
    return sigmoid(m)


def _midpoint(lo, hi):
    mid = lo + (hi - lo) / 2.0
    return mid if mid > lo else hi


class _Grower:
    def __init__(self, X, kinds, cardinalities, params):
        self.X = X
        self.params = params
        self.lam = params.l2_leaf
        self.cat = [k == CATEGORICAL for k in kinds]
        self.is_cat = np.array(self.cat, dtype=bool)
        self.n_codes = []
        self.uniques = []
        self.sorted_rows = {}
        self.orders = []  # per-row category code or rank among distinct values
        for j in range(X.shape[1]):
            if self.cat[j]:
                codes = X[:, j].astype(np.int64)
                k = cardinalities[j] + 1 if cardinalities[j] else 0
                self.n_codes.append(max(k, int(codes.max()) + 1))
                self.uniques.append(None)
                self.orders.append(codes)
            else:
                uniq, rank = np.unique(X[:, j], return_inverse=True)
                self.sorted_rows[j] = np.argsort(X[:, j], kind="stable")
                self.n_codes.append(0)
                self.uniques.append(uniq)
                self.orders.append(rank.astype(np.int64))

    def _score(self, G, H):
        return G * G / (H + self.lam)

    def grow(self, g, h, rows_mask):
        p = self.params
        X = self.X
        N = X.shape[0]
        feature, threshold, categorical, left, right, gain = [-1], [0.0], [False], [-1], [-1], [0.0]
        node_of = np.zeros(N, dtype=np.int64)  # tree node each row sits in
        pos = np.where(rows_mask, 0, -1)       # index into the open frontier, -1 = closed
        frontier = [0]
        cnt = rows_mask.astype(np.float64)

        for _ in range(p.max_depth):
            K = len(frontier)
            if K == 0:
                break
            live = pos >= 0
            rows = np.flatnonzero(live)
            lv = (rows, pos[rows], g[rows], h[rows], cnt[rows])
            Gt = np.bincount(lv[1], lv[2], minlength=K)
            Ht = np.bincount(lv[1], lv[3], minlength=K)
            Ct = np.bincount(lv[1], lv[4], minlength=K)
            parent = self._score(Gt, Ht)

            best_gain = np.zeros(K)
            best_feat = np.full(K, -1)
            best_thr = np.zeros(K)
            for j in range(X.shape[1]):
                if self.cat[j]:
                    res = self._best_categorical(j, lv, K, Gt, Ht, Ct, parent)
                else:
                    res = self._best_numeric(j, pos, lv, g, h, cnt, K, Gt, Ht, Ct, parent)
                if res is None:
                    continue
                gk, tk = res
                better = gk > best_gain
                best_gain[better] = gk[better]
                best_feat[better] = j
                best_thr[better] = tk[better]

            new_frontier = []
            child_left = np.full(K, -1)   # tree node ids of the children
            child_right = np.full(K, -1)
            for k, nid in enumerate(frontier):
                if best_feat[k] < 0:
                    continue
                j = int(best_feat[k])
                feature[nid], threshold[nid], categorical[nid], gain[nid] = j, best_thr[k], self.cat[j], best_gain[k]
                child_left[k], child_right[k] = len(feature), len(feature) + 1
                for _side in range(2):
                    feature.append(-1)
                    threshold.append(0.0)
                    categorical.append(False)
                    left.append(-1)
                    right.append(-1)
                    gain.append(0.0)
                left[nid], right[nid] = child_left[k], child_right[k]
                new_frontier += [child_left[k], child_right[k]]

            # route rows of split nodes into the children; a child's frontier
            # position is its index in new_frontier
            first_child = np.full(K, -1)
            first_child[best_feat >= 0] = 2 * np.arange(int((best_feat >= 0).sum()))
            new_pos = np.full(N, -1)
            moving = np.flatnonzero(live & (best_feat[np.maximum(pos, 0)] >= 0))
            if moving.size:
                k = pos[moving]
                j = best_feat[k]
                v = X[moving, j]
                thr = best_thr[k]
                go_left = np.where(self.is_cat[j], v == thr, v < thr)
                node_of[moving] = np.where(go_left, child_left[k], child_right[k])
                new_pos[moving] = first_child[k] + np.where(go_left, 0, 1)
            pos = new_pos
            frontier = new_frontier

        n_nodes = len(feature)
        Gn = np.bincount(node_of[rows_mask], g[rows_mask], minlength=n_nodes)
        Hn = np.bincount(node_of[rows_mask], h[rows_mask], minlength=n_nodes)
        value = -Gn / (Hn + self.lam) * p.learning_rate
        is_leaf = np.array(feature) < 0
        value[~is_leaf] = 0.0
        return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                    np.array(categorical, dtype=bool), np.array(left, dtype=np.int64),
                    np.array(right, dtype=np.int64), value, np.array(gain, dtype=np.float64))

    def _best_numeric(self, j, pos, lv, g, h, cnt, K, Gt, Ht, Ct, parent):
        uniq = self.uniques[j]
        U = uniq.size
        if U < 2:
            return None
        if K * U > 2 * pos.size:
            return self._best_numeric_sorted(j, pos, g, h, cnt, K, Gt, Ht, Ct, parent)
        # histogram over the feature's distinct training values: each
        # boundary between adjacent values present in a node is scored once
        rows, pl, gl, hl, cl_ = lv
        key = pl * U + self.orders[j][rows]
        size = K * U
        cl = np.bincount(key, cl_, minlength=size).reshape(K, U)
        GL = np.cumsum(np.bincount(key, gl, minlength=size).reshape(K, U), axis=1)
        HL = np.cumsum(np.bincount(key, hl, minlength=size).reshape(K, U), axis=1)
        CL = np.cumsum(cl, axis=1)
        CR = Ct[:, None] - CL
        m = self.params.min_child_rows
        ok = (cl > 0) & (CL >= m) & (CR >= m)
        if not ok.any():
            return None
        GR = Gt[:, None] - GL
        HR = Ht[:, None] - HL
        gain = np.full((K, U), -np.inf)
        gain[ok] = 0.5 * (self._score(GL[ok], HL[ok]) + self._score(GR[ok], HR[ok])
                          - np.broadcast_to(parent[:, None], (K, U))[ok])
        u = np.argmax(gain, axis=1)
        best = gain[np.arange(K), u]
        best_thr = np.zeros(K)
        for k in np.flatnonzero(np.isfinite(best)):
            lo = uniq[u[k]]
            hi = uniq[u[k] + 1 + int(np.argmax(cl[k, u[k] + 1:] > 0))]
            best_thr[k] = _midpoint(lo, hi)
        return np.where(np.isfinite(best), best, 0.0), best_thr

    def _best_numeric_sorted(self, j, pos, g, h, cnt, K, Gt, Ht, Ct, parent):
        # many distinct values: scan rows in value order, grouped by node
        o = self.sorted_rows[j]
        pn = pos[o]
        keep = pn >= 0
        o = o[keep]
        pn = pn[keep].astype(np.int16)
        s = np.argsort(pn, kind="stable")
        o = o[s]
        pn = pn[s].astype(np.int64)
        v = self.X[o, j]
        cg = np.cumsum(g[o])
        ch = np.cumsum(h[o])
        cc = np.cumsum(cnt[o])
        starts = np.searchsorted(pn, np.arange(K), side="left")
        prev = np.maximum(starts - 1, 0)
        has_prev = starts > 0
        GL = cg - np.where(has_prev, cg[prev], 0.0)[pn]
        HL = ch - np.where(has_prev, ch[prev], 0.0)[pn]
        CL = cc - np.where(has_prev, cc[prev], 0.0)[pn]
        CR = Ct[pn] - CL
        m = self.params.min_child_rows
        ok = np.zeros(o.size, dtype=bool)
        ok[:-1] = (pn[:-1] == pn[1:]) & (v[:-1] != v[1:])
        ok &= (CL >= m) & (CR >= m)
        if not ok.any():
            return None
        cand = np.flatnonzero(ok)
        kc = pn[cand]
        gc = 0.5 * (self._score(GL[cand], HL[cand]) + self._score(Gt[kc] - GL[cand], Ht[kc] - HL[cand])
                    - parent[kc])
        best = np.full(K, -np.inf)
        np.maximum.at(best, kc, gc)
        # first candidate (lowest value) reaching the node maximum
        hit = gc == best[kc]
        first = np.full(K, o.size)
        np.minimum.at(first, kc[hit], cand[hit])
        best_thr = np.zeros(K)
        for k in np.flatnonzero(np.isfinite(best)):
            best_thr[k] = _midpoint(v[first[k]], v[first[k] + 1])
        return np.where(np.isfinite(best), best, 0.0), best_thr

    def _best_categorical(self, j, lv, K, Gt, Ht, Ct, parent):
        rows, pl, gl, hl, cl = lv
        nc = self.n_codes[j]
        key = pl * nc + self.orders[j][rows]
        GL = np.bincount(key, gl, minlength=K * nc).reshape(K, nc)
        HL = np.bincount(key, hl, minlength=K * nc).reshape(K, nc)
        CL = np.bincount(key, cl, minlength=K * nc).reshape(K, nc)
        GR = Gt[:, None] - GL
        HR = Ht[:, None] - HL
        CR = Ct[:, None] - CL
        m = self.params.min_child_rows
        ok = (CL >= m) & (CR >= m)
        if not ok.any():
            return None
        gain = np.full((K, nc), -np.inf)
        gain[ok] = 0.5 * (self._score(GL, HL) + self._score(GR, HR) - parent[:, None])[ok]
        code = np.argmax(gain, axis=1)
        best = gain[np.arange(K), code]
        best = np.where(np.isfinite(best), best, 0.0)
        return best, code.astype(np.float64)


def train_gbdt(train: Dataset, params: GbdtParams = GbdtParams()) -> GbdtModel:
    """Newton boosting on logistic loss.

    Each round fits one tree to gradients ``p - y`` and hessians
    ``p(1 - p)``; leaves hold ``-G/(H + l2_leaf) * learning_rate``.
    """
    X, y = train.X, train.y.astype(np.float64)
    N = X.shape[0]
    if N < 2 or y.min() == y.max():
        raise SingleClassDataset("GBDT training needs at least two rows and both classes")
    rate = y.mean()
    base = math.log(rate / (1.0 - rate))
    kinds = tuple(train.schema.kinds)
    cats = {j: tuple(train.categories[f.name]) for j, f in enumerate(train.schema)
            if f.kind == CATEGORICAL and f.name in train.categories}
    model = GbdtModel([], base, X.shape[1], kinds, train.schema.fingerprint(), cats)
    margin = np.full(N, base)
    model.loss_history.append(logistic_loss(margin, y))
    if params.num_trees == 0:
        return model

    grower = _Grower(X, kinds, [f.cardinality for f in train.schema], params)
    rng = np.random.default_rng(params.seed)
    all_rows = np.ones(N, dtype=bool)
    for _ in range(params.num_trees):
        p = expit(margin)
        g = p - y
        h = p * (1.0 - p)
        if params.subsample < 1.0:
            rows = rng.random(N) < params.subsample
            if not rows.any():
                rows[rng.integers(N)] = True
        else:
            rows = all_rows
        tree = grower.grow(g, h, rows)
        model.trees.append(tree)
        margin += tree.predict_values(X)
        loss = logistic_loss(margin, y)
        if params.subsample == 1.0 and loss > model.loss_history[-1] + 1e-12:
            warnings.warn(f"training loss rose in round {len(model.trees)}: "
                          f"{model.loss_history[-1]:.6g} -> {loss:.6g}", RuntimeWarning)
        model.loss_history.append(loss)
    return model
