import numpy as np
import pytest

from lrwbins.allocation import allocate
from lrwbins.bench import bench, calibrate_injection, mixed_rows, split_hits
from lrwbins.config_table import FirstStageTable
from lrwbins.first_stage import build_lrwbins
from lrwbins.metrics import projected_multistage_latency
from lrwbins.ranking import ranking_from_model
from lrwbins.rpc import FIRST, Client, LatencyInjector, serve


@pytest.fixture(scope="module")
def setup(synth, synth_gbdt):
    tr, va, te = synth
    full = build_lrwbins(tr, ranking_from_model(synth_gbdt), n=4, b=3, m=8)
    table = FirstStageTable.from_model(allocate(full, synth_gbdt, va)[0])
    with serve(synth_gbdt, injector=LatencyInjector(0.5)) as h:
        yield table, te, h


def test_mixed_rows_hit_fraction(setup):
    table, te, _ = setup
    rows = mixed_rows(table, te.X, 0.3, 200, seed=1)
    hits, misses = split_hits(table, rows)
    assert (len(hits), len(misses)) == (60, 140)
    assert rows == mixed_rows(table, te.X, 0.3, 200, seed=1)
    with pytest.raises(ValueError):
        mixed_rows(table, te.X, 1.5, 10)


def test_report_sandwich_and_audit(setup):
    table, te, h = setup
    rows = mixed_rows(table, te.X, 0.5, 100, seed=2)
    with Client(h.address) as cl:
        rep = bench(table, cl, rows, batch_sizes=(10, 100), repetitions=2, server=h)
    for r in rep.rows:
        assert r.projected_multistage_ms == projected_multistage_latency(r.mean_first_ms, r.mean_second_ms,
                                                                         r.coverage)
        # multistage never beats the first stage alone, nor loses to first + second
        assert r.mean_first_ms <= r.mean_multistage_ms <= r.mean_first_ms + r.mean_second_ms * 1.5
        assert r.speedup_vs_second == pytest.approx(r.mean_second_ms / r.mean_multistage_ms)
    assert rep.rows[1].coverage == 0.5
    # every wire request during multistage runs is a miss; hits cost nothing on the wire
    assert rep.server_requests == rep.second_routed == sum(s != FIRST for run in rep.routes for s in run)
    csv = rep.to_csv().splitlines()
    assert csv[0].startswith("batch_size,") and len(csv) == 3
    o = rep.overall()
    assert o.batch_size == 110


def test_routing_is_deterministic(setup):
    table, te, h = setup
    rows = mixed_rows(table, te.X, 0.5, 50, seed=3)
    with Client(h.address) as cl:
        a = bench(table, cl, rows, batch_sizes=(50,), repetitions=2)
        b = bench(table, cl, rows, batch_sizes=(50,), repetitions=1)
    assert a.routes[0] == a.routes[1] == b.routes[0]


def test_calibration_moves_delay_towards_ratio(setup, synth_gbdt):
    table, te, _ = setup
    with serve(synth_gbdt) as h, Client(h.address) as cl:
        d = calibrate_injection(table, cl, te.X, ratio=500.0, samples=50, rounds=3, server=h, iterations=2)
        assert d > 0 and h.delay_ms == d
        assert calibrate_injection(table, cl, te.X, ratio=0.0, samples=50, rounds=3) == 0.0
