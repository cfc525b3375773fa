"""Export both stages to binary tables, reload them and serve the fallback.

Uses seeded synthetic data so it runs anywhere in well under a minute.
The reloaded first-stage table answers hits locally; misses travel to a
GBDT server on loopback. The demo checks that the tables reproduce the
training-side models and prints where each row was scored.

    python demos/tables_and_serving.py
"""

import tempfile
from pathlib import Path

import numpy as np

from lrwbins.config_table import (export_first_stage, export_second_stage, import_first_stage,
                                  import_second_stage)
from lrwbins.dataset import split
from lrwbins.gbdt import GbdtParams
from lrwbins.pipeline import fit
from lrwbins.rpc import Client, multistage_predict, serve
from lrwbins.synthetic import make_dataset


def main():
    tr, va, te = split(make_dataset(20000, seed=1), seed=0)
    f = fit(tr, va, b=2, n=4, m=8, gbdt_params=GbdtParams(num_trees=60, max_depth=5, learning_rate=0.3))
    print(f"coverage on validation {f.allocation.coverage:.3f}")

    with tempfile.TemporaryDirectory() as tmp:
        p1, p2 = Path(tmp) / "first.lrwb", Path(tmp) / "second.gbdt"
        n1, n2 = export_first_stage(f.first, p1), export_second_stage(f.gbdt, p2)
        print(f"{p1.name}: {n1} bytes, {p2.name}: {n2} bytes")
        table, gbdt = import_first_stage(p1), import_second_stage(p2)
    for k, v in table.section_sizes().items():
        print(f"  {k:12s} {v}")

    s, hit = f.first.predict_proba(te.X)
    s2, hit2 = table.predict_many(te.X)
    print(f"same hits: {np.array_equal(hit, hit2)}, max |diff| {np.max(np.abs(s[hit] - s2[hit])):.2e}")
    print(f"gbdt bit-exact after reload: {np.array_equal(gbdt.predict_proba(te.X), f.gbdt.predict_proba(te.X))}")

    with serve(gbdt) as h, Client(h.address) as cl:
        routes = []
        for row in te.X[:200].tolist():
            p, where = multistage_predict(table, cl, row)
            routes.append(where)
        print(f"200 rows: {routes.count('first')} scored locally, {routes.count('second')} sent over RPC; "
              f"server saw {h.requests} requests")


if __name__ == "__main__":
    main()
