import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import write_csv
from lrwbins.dataset import (BOOLEAN, CATEGORICAL, NUMERIC, Dataset, Feature, FeatureSchema, apply,
                             fit_normalizer, load_csv, split, split_sizes)
from lrwbins.errors import BadFractions, MissingColumn, NonBinaryLabel, UnparseableValue

SCHEMA = FeatureSchema.parse("x=numeric\nflag=boolean\ncolor=categorical\n")


def test_schema_parse_and_dump_round_trip():
    s = FeatureSchema.parse("# comment\na=numeric\nb=categorical:5\nc=boolean\n")
    assert s.names == ["a", "b", "c"]
    assert s[1].cardinality == 5
    assert FeatureSchema.parse(s.dumps()) == s
    assert s.fingerprint() == FeatureSchema.parse(s.dumps()).fingerprint()


def test_schema_rejects_duplicates_and_tiny_cardinality():
    with pytest.raises(ValueError):
        FeatureSchema.parse("a=numeric\na=boolean\n")
    with pytest.raises(ValueError):
        Feature("c", CATEGORICAL, 1)


def test_minimal_csv(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["x", "label"], [[1.5, 0], [2.5, 1]])
    d = load_csv(p, FeatureSchema.parse("x=numeric"))
    assert (d.n_rows, d.n_features) == (2, 1)
    assert d.y.tolist() == [0, 1]


def test_categorical_codes_first_seen(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["color", "x", "flag", "label"],
                  [["red", 1, "true", 0], ["blue", 2, "no", 1], ["red", 3, 1, 0], ["green", 4, 0, 1]])
    d = load_csv(p, SCHEMA)
    assert d.categories["color"] == ("red", "blue", "green")
    assert d.X[:, 2].tolist() == [0, 1, 0, 2]
    assert d.X[:, 1].tolist() == [1, 0, 1, 0]
    assert d.schema[2].cardinality == 3


def test_frozen_dictionary_maps_unseen_to_unknown(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["x", "flag", "color", "label"], [[1, 0, "purple", 0], [2, 1, "red", 1]])
    d = load_csv(p, SCHEMA, categories={"color": ("red", "blue")})
    assert d.X[:, 2].tolist() == [2, 0]  # 2 == UNKNOWN for cardinality 2


def test_label_two_is_rejected(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["x", "label"], [[1, 0], [2, 2]])
    with pytest.raises(NonBinaryLabel):
        load_csv(p, FeatureSchema.parse("x=numeric"))


def test_missing_column(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["x", "label"], [[1, 0]])
    with pytest.raises(MissingColumn):
        load_csv(p, FeatureSchema.parse("x=numeric\ny=numeric"))


def test_unparseable_value_reports_row_and_column(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["x", "label"], [[1, 0], ["abc", 1]])
    with pytest.raises(UnparseableValue) as e:
        load_csv(p, FeatureSchema.parse("x=numeric"))
    assert e.value.row == 3 and e.value.column == "x"


def test_empty_cell_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,label\n1,0\n,1\n")
    with pytest.raises(UnparseableValue):
        load_csv(p, FeatureSchema.parse("x=numeric"))


def test_aci_shape(aci):
    # 14 features plus the label column; the UCI training file has 32,561 rows
    assert aci.n_features == 14
    assert 30000 < aci.n_rows < 35000
    assert set(np.unique(aci.y)) == {0, 1}


def _toy(n):
    return Dataset(np.arange(n, dtype=float)[:, None], np.arange(n) % 2, FeatureSchema.parse("x=numeric"))


def test_split_sizes_examples():
    assert split_sizes(10, (0.6, 0.2, 0.2)) == (6, 2, 2)
    assert split_sizes(7, (0.5, 0.25, 0.25)) == (5, 1, 1)
    tr, va, te = split(_toy(10), (0.6, 0.2, 0.2), seed=7)
    assert (tr.n_rows, va.n_rows, te.n_rows) == (6, 2, 2)


def test_split_is_deterministic():
    a = split(_toy(50), seed=7)
    b = split(_toy(50), seed=7)
    for x, y in zip(a, b):
        assert np.array_equal(x.X, y.X)


@pytest.mark.parametrize("fr", [(0.5, 0.5, 0.5), (0.0, 0.5, 0.5), (-0.1, 0.6, 0.5), (0.7, 0.3)])
def test_bad_fractions(fr):
    with pytest.raises(BadFractions):
        split(_toy(10), fr)


@given(n=st.integers(1, 300), seed=st.integers(0, 2**31 - 1),
       w=st.tuples(st.integers(1, 20), st.integers(1, 20), st.integers(1, 20)))
def test_split_partitions_rows(n, seed, w):
    fr = tuple(x / sum(w) for x in w)
    parts = split(_toy(n), fr, seed)
    ids = np.concatenate([p.X[:, 0] for p in parts])
    assert sorted(ids.tolist()) == list(range(n))
    tr, va, te = (p.n_rows for p in parts)
    assert va == int(np.floor(fr[1] * n + 1e-9)) and te == int(np.floor(fr[2] * n + 1e-9))


def test_normalizer_population_std_and_constant_feature():
    X = np.array([[1.0, 5.0, 1.0], [2.0, 5.0, 0.0], [3.0, 5.0, 1.0]])
    d = Dataset(X, np.array([0, 1, 0]), FeatureSchema.parse("a=numeric\nb=numeric\nc=boolean"))
    out = apply(fit_normalizer(d), d)
    np.testing.assert_allclose(out.X[:, 0], [-1.2247448714, 0.0, 1.2247448714], atol=1e-9)
    assert out.X[:, 1].tolist() == [0.0, 0.0, 0.0]
    assert out.X[:, 2].tolist() == [1.0, 0.0, 1.0]


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60), st.integers(0, 1000))
def test_normalized_numeric_has_zero_mean_unit_std(vals, seed):
    x = np.array(vals)
    if np.ptp(x) < 1e-3 * max(1.0, np.abs(x).max()):
        return  # near-constant columns lose precision; handled by the constant-feature rule
    d = Dataset(np.c_[x, np.arange(x.size) % 2], np.arange(x.size) % 2,
                FeatureSchema.parse("a=numeric\nb=boolean"))
    out = apply(fit_normalizer(d), d)
    assert abs(out.X[:, 0].mean()) < 1e-9
    assert abs(out.X[:, 0].std() - 1.0) < 1e-9
    assert np.array_equal(out.X[:, 1], d.X[:, 1])


def test_save_and_load_round_trip(tmp_path):
    from lrwbins.dataset import save_csv
    from lrwbins.synthetic import make_dataset
    d = make_dataset(300, seed=5)
    p = tmp_path / "s.csv"
    save_csv(d, p)
    back = load_csv(p, d.schema, categories=d.categories)
    assert np.array_equal(back.X, d.X) and np.array_equal(back.y, d.y)
    assert p.read_text().splitlines()[0] == ",".join(d.schema.names + ["label"])
