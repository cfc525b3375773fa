"""Walk through the two-stage pipeline on the adult census income data.

Trains the GBDT, ranks features by its split gain, builds one LR per
combined bin, allocates bins on the validation split and reports test
quality for every model. Expects ``data/adult.csv`` (label ``income``).

    python demos/aci_walkthrough.py [--seed 0]
"""

import argparse
import time

import numpy as np

from lrwbins.data_files import load_named
from lrwbins.dataset import split
from lrwbins.pipeline import fit
from lrwbins.report import evaluate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    d = load_named("adult")
    if d is None:
        raise SystemExit("data/adult.csv not found")
    tr, va, te = split(d, seed=a.seed)
    print(f"{d.n_rows} rows, {d.n_features} features; split {tr.n_rows}/{va.n_rows}/{te.n_rows}")

    t = time.perf_counter()
    f = fit(tr, va, b=3, n=7, m=20)
    print(f"fit in {time.perf_counter() - t:.1f}s")

    names = d.schema.names
    print("top features by gain:", ", ".join(names[j] for j in f.ranking.order[:7]))
    print(f"bins: {f.lrwbins.spec.total_bins} possible, {len(f.lrwbins.weights_by_bin)} trained, "
          f"{len(f.allocation.first_stage_bins)} kept for the first stage")

    # the curve: coverage grows as bins are added in order of how little they lose
    pts = f.curve.points
    for p in pts[:: max(1, len(pts) // 8)] + (pts[-1],):
        print(f"  coverage {p.coverage:5.3f}  hybrid acc {p.hybrid_accuracy:.4f}  auc {p.hybrid_auc:.4f}")
    print(f"selected coverage {f.allocation.coverage:.3f} at accuracy tolerance {f.allocation.tolerance}")

    rep = evaluate(te, f.gbdt, f.plain, f.lrwbins, f.first)
    print("\ntest split:")
    for r in rep.rows:
        cov = "" if np.isnan(r.coverage) else f"  coverage {r.coverage:.3f}"
        print(f"  {r.model:8s} auc {r.roc_auc:.4f}  acc {r.accuracy:.4f}{cov}")


if __name__ == "__main__":
    main()
