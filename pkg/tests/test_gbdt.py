import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrwbins.dataset import BOOLEAN, CATEGORICAL, NUMERIC, Dataset, Feature, FeatureSchema
from lrwbins.errors import SchemaMismatch, SingleClassDataset
from lrwbins.gbdt import GbdtModel, GbdtParams, Tree, predict_gbdt, train_gbdt
from lrwbins.logistic import sigmoid


def brute_force(model, row):
    """Reference evaluator: recursive walk following the stated split rule."""
    def walk(t, i):
        if t.feature[i] < 0:
            return t.value[i]
        v, thr = row[t.feature[i]], t.threshold[i]
        left = v == thr if t.categorical[i] else v < thr
        return walk(t, t.left[i] if left else t.right[i])
    return 1.0 / (1.0 + math.exp(-(model.base_score + sum(walk(t, 0) for t in model.trees))))


def stump(left, right, thr=0.0):
    return Tree(np.array([0, -1, -1]), np.array([thr, 0, 0.0]), np.array([False, False, False]),
                np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([0, left, right]), np.zeros(3))


def test_empty_ensemble_and_stump():
    m = GbdtModel([], 0.0, 1, (NUMERIC,), 0)
    assert predict_gbdt(m, [3.0]) == 0.5
    m.trees.append(stump(2.0, -2.0))
    assert predict_gbdt(m, [-1.0]) == pytest.approx(0.8808, abs=5e-5)
    assert predict_gbdt(m, [1.0]) == pytest.approx(0.1192, abs=5e-5)
    assert predict_gbdt(m, [0.0]) == sigmoid(-2.0)  # not < threshold -> right
    with pytest.raises(SchemaMismatch):
        predict_gbdt(m, [1.0, 2.0])
    with pytest.raises(SchemaMismatch):
        m.predict_proba(np.zeros((2, 3)))


def test_zero_trees_predicts_the_base_rate(synth):
    tr = synth[0]
    m = train_gbdt(tr, GbdtParams(num_trees=0))
    np.testing.assert_allclose(m.predict_proba(tr.X[:5]), tr.y.mean(), atol=1e-12)


def test_step_function_stump():
    x = np.arange(100, dtype=float)
    d = Dataset(x[:, None], (x >= 37).astype(int), FeatureSchema((Feature("x", NUMERIC),)))
    m = train_gbdt(d, GbdtParams(num_trees=1, max_depth=1, learning_rate=1.0, min_child_rows=1))
    t = m.trees[0]
    assert t.feature[0] == 0 and t.threshold[0] == 36.5
    assert np.mean((m.predict_proba(d.X) >= 0.5) == d.y) == 1.0


def test_categorical_one_vs_rest():
    codes = np.arange(200) % 4
    d = Dataset(codes[:, None].astype(float), (codes == 2).astype(int),
                FeatureSchema((Feature("c", CATEGORICAL, 4),)))
    m = train_gbdt(d, GbdtParams(num_trees=1, max_depth=1, learning_rate=1.0))
    t = m.trees[0]
    assert t.categorical[0] and t.threshold[0] == 2.0


def test_single_class_rejected():
    d = Dataset(np.zeros((5, 1)), np.ones(5, dtype=int), FeatureSchema((Feature("x", NUMERIC),)))
    with pytest.raises(SingleClassDataset):
        train_gbdt(d)


@pytest.mark.parametrize("bad", [dict(num_trees=-1), dict(max_depth=0), dict(learning_rate=0.0),
                                 dict(learning_rate=1.5), dict(subsample=0.0), dict(subsample=1.1)])
def test_param_validation(bad):
    with pytest.raises(ValueError):
        GbdtParams(**bad)


def test_matches_brute_force_on_hundred_rows(synth, synth_gbdt):
    X = synth[2].X[:100]
    batch = synth_gbdt.predict_proba(X)
    for i, row in enumerate(X):
        ref = brute_force(synth_gbdt, row)
        assert abs(batch[i] - ref) <= 1e-9
        assert abs(predict_gbdt(synth_gbdt, row) - ref) <= 1e-9


def test_loss_history_non_increasing_and_depth_bound(synth_gbdt):
    h = synth_gbdt.loss_history
    assert len(h) == 31
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))
    assert all(t.depth() <= 4 for t in synth_gbdt.trees)
    for t in synth_gbdt.trees:
        internal = t.feature >= 0
        assert np.isfinite(t.threshold[internal]).all()


def test_deterministic(synth):
    tr = synth[0]
    p = GbdtParams(num_trees=5, max_depth=3, subsample=0.7, seed=4)
    a, b = train_gbdt(tr, p), train_gbdt(tr, p)
    assert np.array_equal(a.predict_proba(tr.X), b.predict_proba(tr.X))


@st.composite
def small_problem(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    n = draw(st.integers(4, 120))
    X = np.c_[np.round(rng.standard_normal(n), 1), rng.integers(0, 2, n), rng.integers(0, 3, n)]
    y = rng.integers(0, 2, n)
    y[:2] = (0, 1)
    schema = FeatureSchema((Feature("a", NUMERIC), Feature("b", BOOLEAN), Feature("c", CATEGORICAL, 3)))
    params = GbdtParams(num_trees=draw(st.integers(1, 6)), max_depth=draw(st.integers(1, 4)),
                        min_child_rows=draw(st.integers(1, 10)), learning_rate=draw(st.floats(0.05, 1.0)))
    return Dataset(X.astype(float), y, schema), params


@given(small_problem())
def test_properties_on_random_problems(prob):
    d, params = prob
    m = train_gbdt(d, params)
    h = m.loss_history
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))
    for t in m.trees:
        assert t.depth() <= params.max_depth
        leaves = t.leaf_index(d.X)
        assert (t.feature[leaves] < 0).all()  # every row lands on exactly one leaf
        counts = np.bincount(leaves, minlength=t.n_nodes)[t.feature < 0]
        if t.n_nodes > 1:
            assert counts.min() >= params.min_child_rows
    p = m.predict_proba(d.X)
    for i in range(min(10, d.n_rows)):
        assert abs(p[i] - brute_force(m, d.X[i])) <= 1e-9
