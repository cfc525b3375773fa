"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line (echoed in the terminal summary) and
then asserts on it. Datasets that are not present fail their criterion;
they are never skipped. Run only this file with::

    pytest -v tests/test_acceptance.py
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lrwbins.allocation import ACCURACY
from lrwbins.bench import bench, calibrate_injection, mixed_rows
from lrwbins.config_table import FirstStageTable
from lrwbins.data_files import load_named, search_dirs
from lrwbins.dataset import split
from lrwbins.gbdt import GbdtParams
from lrwbins.pipeline import fit
from lrwbins.report import evaluate
from lrwbins.rpc import Client, serve_in_subprocess
from lrwbins.synthetic import make_dataset

SEEDS = range(20)
TESTS = Path(__file__).resolve().parent


def record(cid, ok, detail):
    line = f"{cid} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def missing(cid, stem, what):
    record(cid, False, f"{what}: dataset '{stem}' not available "
                       f"(looked for {stem}.csv and {stem}.schema in {', '.join(map(str, search_dirs()))})")


def run_seeds(d, seeds, **kw):
    """Default pipeline on every seed; returns per-seed summaries."""
    out = []
    for s in seeds:
        tr, va, te = split(d, seed=s)
        f = fit(tr, va, **kw)
        rep = evaluate(te, f.gbdt, f.plain, f.lrwbins, f.first)
        out.append(dict(seed=s, fitted=f, test=te, lr=rep["lr"], lrwbins=rep["lrwbins"], gbdt=rep["gbdt"],
                        hybrid=rep["hybrid"], coverage=f.allocation.coverage))
    return out


def mean(runs, model, field="roc_auc"):
    return float(np.mean([getattr(r[model], field) for r in runs]))


@pytest.fixture(scope="module")
def aci_runs():
    d = load_named("adult")
    if d is None:
        return None, 0.0
    t = time.perf_counter()
    runs = run_seeds(d, SEEDS, b=3, n=7, m=20)
    return runs, time.perf_counter() - t


def test_c1_aci_model_quality(aci_runs):
    runs, secs = aci_runs
    if runs is None:
        missing("C1", "adult", "ACI model quality")
    lr, lw, gb = mean(runs, "lr"), mean(runs, "lrwbins"), mean(runs, "gbdt")
    sd = lambda m: float(np.std([r[m].roc_auc for r in runs]))  # noqa: E731
    ok = lr >= 0.88 and lw >= 0.88 and lw >= lr - 0.005 and gb >= 0.90 and secs <= 600
    record("C1", ok, f"ACI test ROC AUC over {len(runs)} seeds: LR {lr:.4f}±{sd('lr'):.4f} (>=0.88), "
                     f"LRwBins {lw:.4f}±{sd('lrwbins'):.4f} (>=0.88 and >=LR-0.005), "
                     f"GBDT {gb:.4f}±{sd('gbdt'):.4f} (>=0.90); runtime {secs:.0f}s (<=600s)")


def test_c2_banknote_ordering():
    d = load_named("banknote")
    if d is None:
        missing("C2", "banknote", "Banknote ordering")
    runs = run_seeds(d, SEEDS, b=3, n=7, m=20)
    lr, lw, gb = mean(runs, "lr"), mean(runs, "lrwbins"), mean(runs, "gbdt")
    record("C2", lw >= lr + 0.03 and gb >= lw,
           f"Banknote mean ROC AUC over {len(runs)} seeds: LR {lr:.4f}, LRwBins {lw:.4f} (>=LR+0.03), "
           f"GBDT {gb:.4f} (>=LRwBins)")


def test_c3_aci_coverage_at_tolerance(aci_runs):
    runs, _ = aci_runs
    if runs is None:
        missing("C3-ACI", "adult", "ACI coverage")
    cov = float(np.mean([r["coverage"] for r in runs]))
    d_auc = mean(runs, "hybrid", "delta_auc")
    d_acc = mean(runs, "hybrid", "delta_acc")
    test_cov = mean(runs, "hybrid", "coverage")
    record("C3-ACI", cov >= 0.30 and d_auc <= 0.01,
           f"ACI accuracy tolerance 0.002, mean over {len(runs)} seeds: selected coverage {cov:.3f} (>=0.30), "
           f"test coverage {test_cov:.3f}, GBDT-hybrid dAUC {d_auc:.4f} (<=0.01), dAcc {d_acc:.4f}; "
           f"worst seed coverage {min(r['coverage'] for r in runs):.3f}")


def test_c3_higgs_coverage_at_tolerance():
    d = load_named("higgs")
    if d is None:
        missing("C3-Higgs", "higgs", "Higgs coverage")
    run = run_seeds(d, [0], b=3, n=7, m=20, tolerance=0.002, metric=ACCURACY)[0]
    d_acc = run["hybrid"].delta_acc
    record("C3-Higgs", run["coverage"] >= 0.55 and d_acc <= 0.005,
           f"Higgs ({d.n_rows} rows): selected coverage {run['coverage']:.3f} (>=0.55), "
           f"GBDT-hybrid dAcc {d_acc:.4f} (<=0.005)")


def test_c4_latency_model(aci_runs):
    runs, _ = aci_runs
    if runs is None:
        missing("C4", "adult", "latency model")
    t0 = time.perf_counter()
    r = runs[0]
    table = FirstStageTable.from_bytes(FirstStageTable.from_model(r["fitted"].first).to_bytes())
    te = r["test"]
    rows = mixed_rows(table, te.X, 0.5, 1000, seed=0)
    with serve_in_subprocess(r["fitted"].gbdt) as h, Client(h.address) as cl:
        inj = calibrate_injection(table, cl, rows, ratio=5.0, server=h)
        rep = bench(table, cl, rows, batch_sizes=(10, 100, 1000), repetitions=10, server=h)
    secs = time.perf_counter() - t0
    o = rep.overall()
    target = 0.7 * o.mean_second_ms
    rel = o.mean_multistage_ms / target - 1.0
    audit = rep.server_requests == rep.second_routed
    ok = abs(rel) <= 0.15 and o.speedup_vs_second >= 1.2 and secs <= 120 and audit
    record("C4", ok, f"t1 {o.mean_first_ms * 1e3:.1f}us, t2 {o.mean_second_ms * 1e3:.1f}us "
                     f"(ratio {o.mean_second_ms / o.mean_first_ms:.2f}, injected {inj * 1e3:.1f}us), coverage "
                     f"{o.coverage:.2f}; multistage {o.mean_multistage_ms * 1e3:.1f}us vs 0.7*t2 "
                     f"{target * 1e3:.1f}us ({rel:+.1%}, within 15%), formula projection "
                     f"{o.projected_multistage_ms * 1e3:.1f}us; speedup {o.speedup_vs_second:.2f} (>=1.2); "
                     f"wire requests {rep.server_requests} == second-routed {rep.second_routed}; "
                     f"runtime {secs:.0f}s (<=120s)")


def _max_gap(model, X):
    """Largest |model - table| over every row; hit masks must agree exactly."""
    table = FirstStageTable.from_bytes(FirstStageTable.from_model(model).to_bytes())
    s, hit = model.predict_proba(X)
    s2, hit2 = table.predict_many(X)
    if not np.array_equal(hit, hit2):
        return math.inf, int(np.sum(hit != hit2))
    return (float(np.max(np.abs(s[hit] - s2[hit]))) if hit.any() else 0.0), 0


def test_c5_engine_equivalence(aci_runs, synth):
    checked, worst, bad = [], 0.0, 0
    runs, _ = aci_runs
    sets = []
    if runs is not None:
        d = load_named("adult")
        sets += [("ACI", r["fitted"], d.X) for r in runs]
    tr, va, te = synth
    sets.append(("synthetic", fit(tr, va, b=3, n=4, m=8, gbdt_params=GbdtParams(30, 4)), te.X))
    for name, f, X in sets:
        for model in (f.first, f.lrwbins, f.plain):
            gap, n_bad = _max_gap(model, X)
            worst, bad = max(worst, gap), bad + n_bad
        checked.append(name)
    absent = [s for s in ("adult", "banknote", "higgs") if load_named(s) is None]
    where = ", ".join(f"{k} x{checked.count(k)}" for k in dict.fromkeys(checked))
    record("C5", worst <= 1e-6 and bad == 0 and not absent,
           f"training-side vs .lrwb table, all rows of {where} fitted models; allocated, full and plain "
           f"tables: max |diff| {worst:.2e} (<=1e-6), hit-mask disagreements {bad}"
           + (f"; not checked, dataset missing: {', '.join(absent)}" if absent else ""))


PROPERTY_TESTS = [
    "test_binning.py::test_bins_partition_rows_and_stay_in_range",
    "test_binning.py::test_value_on_edge_goes_to_lower_cell",
    "test_binning.py::test_raising_a_numeric_value_never_lowers_its_digit",
    "test_metrics.py::test_auc_matches_pairwise_oracle",
    "test_gbdt.py::test_loss_history_non_increasing_and_depth_bound",
    "test_gbdt.py::test_deterministic",
    "test_gbdt.py::test_properties_on_random_problems",
    "test_first_stage.py::test_objective_never_increases",
    "test_first_stage.py::test_single_class_rule",
    "test_first_stage.py::test_recovers_known_coefficients_like_newton",
    "test_allocation.py::test_curve_invariants_on_synthetic_data",
    "test_allocation.py::test_coverage_grows_with_tolerance",
    "test_config_table.py::test_round_trip_is_byte_exact",
    "test_config_table.py::test_any_single_byte_corruption_is_detected",
]


def test_c6_property_suites():
    ids = [str(TESTS / t) for t in PROPERTY_TESTS]
    r = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
                       capture_output=True, text=True, cwd=TESTS.parent)
    tail = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr.strip()[-200:]
    record("C6", r.returncode == 0, f"{len(PROPERTY_TESTS)} property suites, no datasets needed: {tail}")


def test_c7_scaling_smoke():
    # coarse bins stay well filled at both sizes, so coverage reflects the data, not bin sparsity
    kw = dict(b=2, n=5, m=20, gbdt_params=GbdtParams(num_trees=100, max_depth=6, learning_rate=0.2))
    cov, secs = {}, {}
    for n_rows in (100_000, 1_000_000):
        t = time.perf_counter()
        tr, va, _ = split(make_dataset(n_rows, seed=0), seed=0)
        cov[n_rows] = fit(tr, va, **kw).allocation.coverage
        secs[n_rows] = time.perf_counter() - t
    rel = abs(cov[1_000_000] - cov[100_000]) / cov[100_000]
    record("C7", cov[100_000] > 0 and rel <= 0.10,
           f"synthetic coverage 100k rows {cov[100_000]:.4f} ({secs[100_000]:.0f}s), 1M rows "
           f"{cov[1_000_000]:.4f} ({secs[1_000_000]:.0f}s); relative difference {rel:.1%} (<=10%)")


if __name__ == "__main__":
    sys.exit(pytest.main(["-v", __file__]))
