"""Loopback latency benchmark for first-stage, second-stage and multistage inference.

Each path is timed per row with a wall clock and averaged. Batches of
different sizes are timed separately so per-call overheads show up as a
trend across rows of the report.
"""

from __future__ import annotations

import gc
import io
from contextlib import contextmanager
import threading
import time
from dataclasses import dataclass

import numpy as np

from .metrics import projected_multistage_latency
from .rpc import FIRST, Client, multistage_predict


@dataclass(frozen=True)
class LatencyRow:
    batch_size: int
    mean_first_ms: float
    mean_second_ms: float
    mean_multistage_ms: float
    projected_multistage_ms: float
    speedup_vs_second: float
    coverage: float
    second_routed: int


@dataclass
class LatencyReport:
    rows: list[LatencyRow]
    server_requests: int | None = None  # server counter delta over the multistage runs
    routes: list[list[str]] | None = None  # per repetition, for the determinism check

    @property
    def second_routed(self) -> int:
        return sum(r.second_routed for r in self.rows)

    def overall(self) -> LatencyRow:
        """Row-weighted means across all batch sizes."""
        w = np.array([r.batch_size for r in self.rows], dtype=float)

        def avg(name):
            return float(np.average([getattr(r, name) for r in self.rows], weights=w))
        t1, t2, tm, c = avg("mean_first_ms"), avg("mean_second_ms"), avg("mean_multistage_ms"), avg("coverage")
        return LatencyRow(int(w.sum()), t1, t2, tm, projected_multistage_latency(t1, t2, c), t2 / tm, c,
                          self.second_routed)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("batch_size,mean_first_ms,mean_second_ms,mean_multistage_ms,projected_multistage_ms,"
                  "speedup_vs_second,coverage,second_routed\n")
        for r in self.rows:
            out.write(f"{r.batch_size},{r.mean_first_ms:.6f},{r.mean_second_ms:.6f},{r.mean_multistage_ms:.6f},"
                      f"{r.projected_multistage_ms:.6f},{r.speedup_vs_second:.4f},{r.coverage:.4f},"
                      f"{r.second_routed}\n")
        return out.getvalue()


def split_hits(table, rows) -> tuple[list, list]:
    hits, misses = [], []
    for r in rows:
        (hits if table.predict(r) is not None else misses).append(r)
    return hits, misses


def mixed_rows(table, rows, coverage: float, count: int, seed: int = 0) -> list:
    """``count`` rows of which a ``coverage`` fraction hit the first stage,
    in a seeded random order. Rows are reused cyclically if needed."""
    if not 0.0 <= coverage <= 1.0:
        raise ValueError("coverage must be in [0, 1]")
    hits, misses = split_hits(table, [list(map(float, r)) for r in rows])
    k = int(round(coverage * count))
    if (k and not hits) or (count - k and not misses):
        raise ValueError("not enough hit or miss rows for the requested coverage")
    picked = [hits[i % len(hits)] for i in range(k)] + [misses[i % len(misses)] for i in range(count - k)]
    order = np.random.default_rng(seed).permutation(count)
    return [picked[i] for i in order]


@contextmanager
def _no_gc():
    # a collection landing inside one timed loop skews that path only
    was = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()


def time_first(table, rows) -> float:
    """Mean ms per row of first-stage scoring."""
    with _no_gc():
        t = time.perf_counter()
        for r in rows:
            table.predict(r)
        return (time.perf_counter() - t) * 1e3 / max(len(rows), 1)


def time_second(client: Client, rows) -> float:
    with _no_gc():
        t = time.perf_counter()
        for r in rows:
            client.predict(r)
        return (time.perf_counter() - t) * 1e3 / max(len(rows), 1)


def time_multistage(table, client: Client, rows) -> tuple[float, list[str]]:
    stages = []
    with _no_gc():
        t = time.perf_counter()
        for r in rows:
            stages.append(multistage_predict(table, client, r)[1])
        return (time.perf_counter() - t) * 1e3 / max(len(rows), 1), stages


def _paired_medians(table, client, first_rows, second_rows, rounds):
    t1s, t2s = [], []
    for _ in range(rounds):
        t1s.append(time_first(table, first_rows))
        t2s.append(time_second(client, second_rows))
    return float(np.median(t1s)), float(np.median(t2s))


def calibrate_injection(table, client: Client, rows, ratio: float = 5.0, samples: int = 200,
                        rounds: int = 15, server=None, iterations: int = 4) -> float:
    """Server delay (ms) bringing the remote path to ``ratio`` times the
    first-stage time; never negative.

    Both paths are timed in alternating short rounds and summarized by the
    median round, so a burst of background load hits both alike. With a
    ``server`` handle the delay is applied live and corrected against the
    measured ratio for ``iterations`` passes; otherwise one delay-free
    measurement decides it.

    As in :func:`bench`, the first stage is timed on the rows that hit and
    the remote path on all of ``rows``, so passing the benchmark workload
    calibrates exactly what will be measured.
    """
    rows = [list(map(float, r)) for r in rows]
    hits, _ = split_hits(table, rows)
    first_rows, second_rows = (hits or rows)[:samples], rows[:samples]
    time_first(table, first_rows)  # warm up
    time_second(client, second_rows)
    delay = server.delay_ms if server is not None else 0.0
    for _ in range(iterations if server is not None else 1):
        t1, t2 = _paired_medians(table, client, first_rows, second_rows, rounds)
        delay = max(0.0, delay + ratio * t1 - t2)
        if server is not None:
            server.set_delay(delay)
    return delay


def bench(table, client: Client, rows, batch_sizes=(1, 10, 100, 1000), repetitions: int = 3,
          server=None) -> LatencyReport:
    """Time the three paths per batch size.

    ``rows`` is the multistage workload, usually built by :func:`mixed_rows`.
    The pure first-stage path only scores rows that hit; the pure
    second-stage path sends every row over the wire. Each batch size is
    run ``repetitions`` times over the same rows in the same order.
    ``server`` (a handle with a ``requests`` counter) enables the audit of
    wire traffic during the multistage runs.
    """
    rows = [list(map(float, r)) for r in rows]
    if not rows:
        raise ValueError("no rows to benchmark")
    hits, _ = split_hits(table, rows)
    out, routes = [], []
    requests = 0
    for bsz in batch_sizes:
        batch = [rows[i % len(rows)] for i in range(bsz)]
        first_batch = [hits[i % len(hits)] for i in range(bsz)] if hits else []
        t1s, t2s, tms, cov, routed = [], [], [], [], 0
        for _ in range(repetitions):
            if first_batch:
                t1s.append(time_first(table, first_batch))
            t2s.append(time_second(client, batch))
            before = server.requests if server is not None else 0
            tm, stages = time_multistage(table, client, batch)
            if server is not None:
                requests += server.requests - before
            tms.append(tm)
            routes.append(stages)
            n_second = sum(s != FIRST for s in stages)
            routed += n_second
            cov.append(1.0 - n_second / bsz)
        t1 = float(np.mean(t1s)) if t1s else 0.0
        t2 = float(np.mean(t2s))
        tm = float(np.mean(tms))
        c = float(np.mean(cov))
        out.append(LatencyRow(bsz, t1, t2, tm, projected_multistage_latency(t1, t2, c), t2 / tm, c, routed))
    return LatencyReport(out, requests if server is not None else None, routes)


def bench_workers(table, address, row_sets, batch_sizes=(1, 10, 100, 1000), repetitions: int = 3,
                  timeout: float = 1.0) -> LatencyReport:
    """Run :func:`bench` on ``len(row_sets)`` threads, one client each,
    and average the per-batch means across workers."""
    reports = [None] * len(row_sets)
    errors = []

    def run(i):
        try:
            with Client(address, timeout) as cl:
                reports[i] = bench(table, cl, row_sets[i], batch_sizes, repetitions)
        except Exception as e:  # noqa: BLE001 - re-raised below
            errors.append(e)

    threads = [threading.Thread(target=run, args=(i,)) for i in range(len(row_sets))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    rows = []
    for k, bsz in enumerate(batch_sizes):
        per = [r.rows[k] for r in reports]
        t1 = float(np.mean([p.mean_first_ms for p in per]))
        t2 = float(np.mean([p.mean_second_ms for p in per]))
        tm = float(np.mean([p.mean_multistage_ms for p in per]))
        c = float(np.mean([p.coverage for p in per]))
        rows.append(LatencyRow(bsz, t1, t2, tm, projected_multistage_latency(t1, t2, c), t2 / tm, c,
                               sum(p.second_routed for p in per)))
    return LatencyReport(rows)
