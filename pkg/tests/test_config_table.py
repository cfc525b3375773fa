import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrwbins.allocation import allocate
from lrwbins.config_table import (FirstStageTable, export_first_stage, export_second_stage, gbdt_from_bytes,
                                  gbdt_to_bytes, import_first_stage, import_second_stage)
from lrwbins.dataset import NUMERIC, Dataset, Feature, FeatureSchema
from lrwbins.errors import CorruptTable, SchemaMismatch, VersionMismatch
from lrwbins.first_stage import build_lrwbins, predict_first_stage
from lrwbins.gbdt import GbdtModel, GbdtParams, predict_gbdt, train_gbdt
from lrwbins.ranking import FeatureRanking, ranking_from_model


@pytest.fixture(scope="module")
def allocated(synth, synth_gbdt):
    tr, va, te = synth
    full = build_lrwbins(tr, ranking_from_model(synth_gbdt), n=4, b=3, m=8)
    first = allocate(full, synth_gbdt, va)[0]
    return first, te


@pytest.fixture(scope="module")
def table_bytes(allocated):
    return FirstStageTable.from_model(allocated[0]).to_bytes()


def test_round_trip_is_byte_exact(allocated, tmp_path):
    first, _ = allocated
    p = tmp_path / "m.lrwb"
    size = export_first_stage(first, p)
    assert size == p.stat().st_size
    t = import_first_stage(p)
    assert t.to_bytes() == p.read_bytes()
    assert export_first_stage(t, tmp_path / "again.lrwb") == size
    assert sum(t.section_sizes().values()) == size
    assert t.entries == len(first.weights_by_bin)
    assert set(t.bin_ids.tolist()) == set(first.weights_by_bin)
    assert list(t.bin_ids) == sorted(t.bin_ids)


def test_table_predictions_match_model(allocated, table_bytes):
    first, te = allocated
    t = FirstStageTable.from_bytes(table_bytes)
    s, hit = first.predict_proba(te.X)
    s2, hit2 = t.predict_many(te.X)
    assert np.array_equal(hit, hit2)
    assert np.max(np.abs(s[hit] - s2[hit])) <= 1e-6
    for i in range(300):
        p = t.predict(te.X[i])
        q = predict_first_stage(first, te.X[i])
        assert (p is None) == (q is None)
        if p is not None:
            assert abs(p - q) <= 1e-6
    back = t.to_model()
    assert np.array_equal(back.predict_proba(te.X)[1], hit)


def test_wrong_row_length(table_bytes):
    t = FirstStageTable.from_bytes(table_bytes)
    with pytest.raises(SchemaMismatch):
        t.predict([0.0] * (t.n_features + 1))


def test_zero_allocated_bins(allocated):
    first, te = allocated
    t = FirstStageTable.from_model(first.filtered([]))
    data = t.to_bytes()
    back = FirstStageTable.from_bytes(data)
    assert back.entries == 0 and back.to_bytes() == data
    assert back.section_sizes()["weights"] == 4
    assert not back.predict_many(te.X)[1].any()


def test_edge_payload_for_seven_numeric_features():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((500, 7))
    d = Dataset(X, rng.integers(0, 2, 500), FeatureSchema(tuple(Feature(f"x{j}", NUMERIC) for j in range(7))))
    model = build_lrwbins(d, FeatureRanking(tuple(range(7)), (0.0,) * 7, "given"), n=7, b=3, m=7)
    t = FirstStageTable.from_model(model)
    assert sum(len(e) for e in t.edges.values()) == 14
    # 14 edges x 4 bytes of payload plus a 2-byte count per feature
    assert t.section_sizes()["quantiles"] == 56 + 7 * 2
    assert t.section_sizes()["encodings"] == 0


@given(st.data())
def test_any_single_byte_corruption_is_detected(table_bytes, data):
    i = data.draw(st.integers(0, len(table_bytes) - 1))
    flip = data.draw(st.integers(1, 255))
    bad = bytearray(table_bytes)
    bad[i] ^= flip
    with pytest.raises(CorruptTable):
        FirstStageTable.from_bytes(bytes(bad))


@given(st.data())
def test_truncation_is_detected(table_bytes, data):
    k = data.draw(st.integers(0, len(table_bytes) - 1))
    with pytest.raises(CorruptTable):
        FirstStageTable.from_bytes(table_bytes[:k])


def _with_version(data, v):
    body = bytearray(data[:-4])
    body[4:6] = struct.pack("<H", v)
    return bytes(body) + struct.pack("<I", zlib.crc32(body))


def test_version_mismatch(table_bytes, synth_gbdt):
    with pytest.raises(VersionMismatch):
        FirstStageTable.from_bytes(_with_version(table_bytes, 99))
    with pytest.raises(VersionMismatch):
        gbdt_from_bytes(_with_version(gbdt_to_bytes(synth_gbdt), 2))


def test_wrong_magic(table_bytes, synth_gbdt):
    with pytest.raises(CorruptTable):
        gbdt_from_bytes(table_bytes)
    with pytest.raises(CorruptTable):
        FirstStageTable.from_bytes(gbdt_to_bytes(synth_gbdt))


def test_gbdt_round_trip_is_exact(synth, synth_gbdt, tmp_path):
    te = synth[2]
    p = tmp_path / "m.gbdt"
    size = export_second_stage(synth_gbdt, p)
    back = import_second_stage(p)
    assert size == p.stat().st_size and gbdt_to_bytes(back) == p.read_bytes()
    assert np.array_equal(back.predict_proba(te.X), synth_gbdt.predict_proba(te.X))
    assert all(predict_gbdt(back, r) == predict_gbdt(synth_gbdt, r) for r in te.X[:50])
    assert back.categories == synth_gbdt.categories


def test_empty_ensemble_round_trip(synth):
    m = train_gbdt(synth[0], GbdtParams(num_trees=0))
    back = gbdt_from_bytes(gbdt_to_bytes(m))
    assert back.trees == [] and np.array_equal(back.predict_proba(synth[2].X), m.predict_proba(synth[2].X))


def test_gbdt_corruption(synth_gbdt):
    data = gbdt_to_bytes(synth_gbdt)
    for cut in (0, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(CorruptTable):
            gbdt_from_bytes(data[:cut])


def test_unwritable_path(allocated, tmp_path):
    with pytest.raises(OSError):
        export_first_stage(allocated[0], tmp_path / "missing" / "m.lrwb")
