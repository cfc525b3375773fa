"""Measure first-stage, second-stage and multistage latency over loopback.

The GBDT server runs in a child process. Its injected delay is tuned live
until a remote call costs about ``--ratio`` times a local table lookup.
Rows are then mixed at 50% first-stage coverage, and the measured
multistage time is compared with the projection ``c*t1 + (1-c)*(t1+t2)``.

    python demos/latency_loopback.py [--ratio 5]
"""

import argparse

from lrwbins.bench import bench, calibrate_injection, mixed_rows
from lrwbins.config_table import FirstStageTable
from lrwbins.dataset import split
from lrwbins.gbdt import GbdtParams
from lrwbins.pipeline import fit
from lrwbins.rpc import Client, serve_in_subprocess
from lrwbins.synthetic import make_dataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ratio", type=float, default=5.0)
    a = ap.parse_args()

    tr, va, te = split(make_dataset(20000, seed=1), seed=0)
    f = fit(tr, va, b=2, n=4, m=8, gbdt_params=GbdtParams(num_trees=60, max_depth=5, learning_rate=0.3))
    table = FirstStageTable.from_model(f.first)
    rows = mixed_rows(table, te.X, 0.5, 1000, seed=0)

    with serve_in_subprocess(f.gbdt) as h, Client(h.address) as cl:
        inj = calibrate_injection(table, cl, rows, ratio=a.ratio, server=h)
        print(f"injected delay {inj * 1e3:.1f}us")
        rep = bench(table, cl, rows, batch_sizes=(10, 100, 1000), repetitions=5, server=h)

    print(rep.to_csv())
    o = rep.overall()
    print(f"t1 {o.mean_first_ms * 1e3:.1f}us  t2 {o.mean_second_ms * 1e3:.1f}us  "
          f"multistage {o.mean_multistage_ms * 1e3:.1f}us (projected {o.projected_multistage_ms * 1e3:.1f}us)")
    print(f"speedup over always calling the server: {o.speedup_vs_second:.2f}x")
    print(f"server requests {rep.server_requests}, rows routed to it {rep.second_routed}")


if __name__ == "__main__":
    main()
