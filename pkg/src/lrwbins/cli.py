"""Command-line entry point: ``lrwbins <command> [options]``.

Commands: train, tune, allocate, export, serve, predict, eval, bench.
Every option can also come from a JSON file given with ``--config``
(keys are option names, dashes or underscores); options given on the
command line win over the file. Reports are CSV on stdout or ``--out``.
On failure a single line ``error: <Kind>: <message>`` goes to stderr and
the exit code is 1; usage errors exit with 2.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from . import __version__
from .allocation import ACCURACY, ROC_AUC, allocate
from .automl import ALL, MaxAuc, MaxCoverageAtTolerance, TuneGrid, tune
from .bench import bench, bench_workers, calibrate_injection, mixed_rows
from .config_table import export_first_stage, export_second_stage, import_first_stage, import_second_stage
from .dataset import FeatureSchema, load_csv, split
from .errors import LRwBinsError
from .first_stage import LRParams
from .gbdt import GbdtParams, train_gbdt
from .pipeline import fit
from .ranking import GBDT_GAIN, MRMR, rank_mrmr, ranking_from_model
from .report import evaluate
from .rpc import Client, LatencyInjector, multistage_predict, serve_in_subprocess, serve_until_signal

FIRST_TABLE = "model.lrwb"
FULL_TABLE = "full.lrwb"
PLAIN_TABLE = "plain.lrwb"
SECOND_FILE = "model.gbdt"
META = "meta.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _floats(v):
    return [float(x) for x in (v.split(",") if isinstance(v, str) else v)]


def _ints(v):
    return [int(x) for x in (v.split(",") if isinstance(v, str) else v)]


def _m_values(v):
    return [ALL if str(x).strip() == ALL else int(x) for x in (v.split(",") if isinstance(v, str) else v)]


# --- option groups ---------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--out", help="output path (file or directory, per command)")


def _data_opts(p):
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--schema", help="schema file (default: the data path with a .schema suffix)")
    p.add_argument("--label", help="label column (default: 'label', or the only non-feature column)")
    p.add_argument("--seed", type=int, default=0, help="split and model seed")
    p.add_argument("--fractions", default="0.7,0.15,0.15", help="train,val,test fractions")


def _model_opts(p):
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--min-child-rows", type=int, default=20)
    p.add_argument("--gbdt-l2", type=float, default=1.0)
    p.add_argument("--subsample", type=float, default=1.0)
    p.add_argument("--lr-l2", type=float, default=1.0)
    p.add_argument("--min-bin-rows", type=int, default=30)
    p.add_argument("--ranking", choices=[GBDT_GAIN, MRMR], default=GBDT_GAIN)


def _dir_opt(p):
    p.add_argument("--model-dir", default="model", help="directory written by 'train'")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="lrwbins", description="Two-stage tabular inference with LR per combined bin.")
    parser.add_argument("--version", action="version", version=f"lrwbins {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    p = subs["train"] = sub.add_parser("train", help="fit both stages and allocate bins")
    _common(p), _data_opts(p), _model_opts(p)
    p.add_argument("--b", type=int, default=3, help="quantile bins per numeric feature")
    p.add_argument("--n", type=int, default=7, help="features used for binning")
    p.add_argument("--m", type=int, default=20, help="features used by each LR")
    p.add_argument("--tolerance", type=float, default=0.002)
    p.add_argument("--metric", choices=[ACCURACY, ROC_AUC], default=ACCURACY)

    p = subs["tune"] = sub.add_parser("tune", help="grid search over b, n, m")
    _common(p), _data_opts(p), _model_opts(p)
    p.add_argument("--b-values", default="2,3,4")
    p.add_argument("--n-values", default="3,5,7,9")
    p.add_argument("--m-values", default="10,20,all")
    p.add_argument("--bin-budget", type=int, default=20000)
    p.add_argument("--objective", choices=["auc", "coverage"], default="auc")
    p.add_argument("--tolerance", type=float, default=0.002)

    p = subs["allocate"] = sub.add_parser("allocate", help="re-run the coverage sweep and cutoff")
    _common(p), _dir_opt(p)
    p.add_argument("--tolerance", type=float, default=0.002)
    p.add_argument("--metric", choices=[ACCURACY, ROC_AUC], default=ACCURACY)
    p.add_argument("--dry-run", action="store_true", help="print the curve without rewriting the table")

    p = subs["export"] = sub.add_parser("export", help="copy the tables and report their section sizes")
    _common(p), _dir_opt(p)

    p = subs["serve"] = sub.add_parser("serve", help="serve the second stage over TCP")
    _common(p), _dir_opt(p)
    p.add_argument("--model", help=".gbdt file (default: <model-dir>/model.gbdt)")
    p.add_argument("--listen", default="127.0.0.1:7070", help="host:port")
    p.add_argument("--inject-latency-ms", type=float, default=0.0)
    p.add_argument("--jitter-ms", type=float, default=0.0)

    p = subs["predict"] = sub.add_parser("predict", help="score rows with the multistage model")
    _common(p), _dir_opt(p)
    p.add_argument("--row", help="one row of feature values in schema order, comma separated")
    p.add_argument("--data", help="CSV of rows to score (header with feature names)")
    p.add_argument("--label", help="label column to ignore in --data")
    p.add_argument("--connect", help="host:port of a second-stage server (default: score misses locally)")
    p.add_argument("--timeout", type=float, default=1.0)

    p = subs["eval"] = sub.add_parser("eval", help="quality report on the test split")
    _common(p), _dir_opt(p)
    p.add_argument("--data", help="override the data path recorded at training time")

    p = subs["bench"] = sub.add_parser("bench", help="latency benchmark over loopback")
    _common(p), _dir_opt(p)
    p.add_argument("--connect", help="host:port of a running server (default: start one)")
    p.add_argument("--inject-latency-ms", type=float, help="server delay; default: calibrated to --ratio")
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--ratio", type=float, default=5.0, help="target second/first latency ratio")
    p.add_argument("--coverage", type=float, default=0.5, help="fraction of rows routed to the first stage")
    p.add_argument("--rows", type=int, default=1000)
    p.add_argument("--batch-sizes", default="1,10,100,1000")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timeout", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="row order seed")
    return parser, subs


def parse_args(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            parser.error(f"cannot read config {args.config}: {e}")
        if not isinstance(cfg, dict):
            parser.error("config file must hold a JSON object")
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known - {"config", "help"})
        if unknown:
            sp.error(f"unknown config key(s): {', '.join(unknown)}")
        # file values replace defaults; flags given on the command line still win
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


# --- helpers ---------------------------------------------------------------

def _write(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _schema_path(args):
    return Path(args.schema) if args.schema else Path(args.data).with_suffix(".schema")


def _label_for(path, schema, label):
    if label:
        return label
    with open(path) as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    if "label" in header:
        return "label"
    extra = [h for h in header if h not in schema.names]
    if len(extra) == 1:
        return extra[0]
    raise LRwBinsError(f"cannot tell the label column among {extra}; pass --label")


def _load(args):
    if not args.data:
        raise LRwBinsError("--data is required")
    schema = FeatureSchema.load(_schema_path(args))
    label = _label_for(args.data, schema, args.label)
    d = load_csv(args.data, schema, label_column=label)
    return d, schema, label


def _gbdt_params(a):
    return GbdtParams(a.trees, a.depth, a.learning_rate, a.min_child_rows, a.gbdt_l2, a.subsample, a.seed)


def _lr_params(a):
    return LRParams(l2=a.lr_l2, min_bin_rows=a.min_bin_rows, seed=a.seed)


def _meta(d):
    return json.loads((Path(d) / META).read_text())


def _split_from_meta(meta, data=None):
    schema = FeatureSchema.parse(meta["schema"])
    d = load_csv(data or meta["data"], schema, label_column=meta["label"])
    return split(d, tuple(meta["fractions"]), meta["seed"])


def _categories_by_name(meta, gbdt):
    schema = FeatureSchema.parse(meta["schema"])
    return schema, {schema[j].name: v for j, v in gbdt.categories.items()}


def _encode_row(text, schema, cats):
    vals = [v.strip() for v in text.split(",")]
    if len(vals) != len(schema):
        raise LRwBinsError(f"--row has {len(vals)} values, schema has {len(schema)} features")
    row = []
    for f, v in zip(schema, vals):
        if f.kind == "categorical" and f.name in cats:
            names = cats[f.name]
            row.append(float(names.index(v)) if v in names else float(len(names)))
        elif f.kind == "boolean":
            row.append(1.0 if v.lower() in ("1", "true", "t", "yes", "y") else 0.0)
        else:
            row.append(float(v))
    return row


# --- commands --------------------------------------------------------------

def cmd_train(a):
    d, schema, label = _load(a)
    fractions = tuple(_floats(a.fractions))
    tr, va, te = split(d, fractions, a.seed)
    f = fit(tr, va, a.b, a.n, a.m, a.tolerance, a.metric, a.ranking, _gbdt_params(a), _lr_params(a))
    out = Path(a.out or "model")
    out.mkdir(parents=True, exist_ok=True)
    size = export_first_stage(f.first, out / FIRST_TABLE)
    export_first_stage(f.lrwbins, out / FULL_TABLE)
    export_first_stage(f.plain, out / PLAIN_TABLE)
    export_second_stage(f.gbdt, out / SECOND_FILE)
    (out / "ranking.csv").write_text(f.ranking.to_text(schema.names))
    (out / "curve.csv").write_text(f.curve.to_csv())
    meta = {"data": str(Path(a.data).resolve()), "schema": d.schema.dumps(), "label": label,
            "seed": a.seed, "fractions": list(fractions), "b": a.b, "n": min(a.n, d.n_features), "m": a.m,
            "tolerance": a.tolerance, "metric": a.metric, "ranking": a.ranking}
    (out / META).write_text(json.dumps(meta, indent=2) + "\n")
    print(f"coverage={f.allocation.coverage:.6f} allocated_bins={len(f.allocation.first_stage_bins)} "
          f"trained_bins={len(f.lrwbins.weights_by_bin)} total_bins={f.lrwbins.spec.total_bins} "
          f"table_bytes={size} out={out}")
    return 0


def cmd_tune(a):
    d, schema, _ = _load(a)
    tr, va, _te = split(d, tuple(_floats(a.fractions)), a.seed)
    gbdt = train_gbdt(tr, _gbdt_params(a))
    rk = ranking_from_model(gbdt) if a.ranking == GBDT_GAIN else rank_mrmr(tr)
    grid = TuneGrid(tuple(_ints(a.b_values)), tuple(_ints(a.n_values)), tuple(_m_values(a.m_values)),
                    a.bin_budget)
    obj = MaxAuc() if a.objective == "auc" else MaxCoverageAtTolerance(a.tolerance)
    res = tune(tr, va, rk, grid, obj, gbdt, _lr_params(a), a.tolerance)
    _write(res.to_csv(), a.out)
    w = res.winner
    print(f"winner b={w.b} n={w.n} m={w.m} val_roc_auc={w.val_roc_auc:.6f} "
          f"coverage={w.coverage_at_tolerance:.6f}", file=sys.stderr)
    return 0


def cmd_allocate(a):
    meta = _meta(a.model_dir)
    _tr, va, _te = _split_from_meta(meta)
    full = import_first_stage(Path(a.model_dir) / FULL_TABLE).to_model()
    gbdt = import_second_stage(Path(a.model_dir) / SECOND_FILE)
    first, alloc, curve = allocate(full, gbdt, va, a.metric, a.tolerance)
    _write(curve.to_csv(), a.out)
    if not a.dry_run:
        export_first_stage(first, Path(a.model_dir) / FIRST_TABLE)
    print(f"coverage={alloc.coverage:.6f} allocated_bins={len(alloc.first_stage_bins)} "
          f"tolerance={a.tolerance} metric={a.metric}", file=sys.stderr)
    return 0


def cmd_export(a):
    src = Path(a.model_dir)
    table = import_first_stage(src / FIRST_TABLE)
    lines = ["file,section,bytes"]
    for k, v in table.section_sizes().items():
        lines.append(f"{FIRST_TABLE},{k},{v}")
    lines.append(f"{FIRST_TABLE},total,{(src / FIRST_TABLE).stat().st_size}")
    lines.append(f"{SECOND_FILE},total,{(src / SECOND_FILE).stat().st_size}")
    if a.out:
        dst = Path(a.out)
        dst.mkdir(parents=True, exist_ok=True)
        for name in (FIRST_TABLE, SECOND_FILE):
            shutil.copyfile(src / name, dst / name)
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_serve(a):
    gbdt = import_second_stage(a.model or Path(a.model_dir) / SECOND_FILE)
    inj = LatencyInjector(a.inject_latency_ms, a.jitter_ms)

    def ready(addr):
        print(f"listening {addr[0]}:{addr[1]}", flush=True)
    n = serve_until_signal(gbdt, a.listen, inj, ready)
    print(f"stopped requests={n}", file=sys.stderr)
    return 0


class _LocalSecond:
    def __init__(self, gbdt):
        from .gbdt import predict_gbdt
        self._f = predict_gbdt
        self.gbdt = gbdt

    def predict(self, row):
        return self._f(self.gbdt, row)

    def close(self):
        pass


def cmd_predict(a):
    src = Path(a.model_dir)
    meta = _meta(src)
    table = import_first_stage(src / FIRST_TABLE)
    gbdt = import_second_stage(src / SECOND_FILE)
    schema, cats = _categories_by_name(meta, gbdt)
    if a.row is not None:
        rows = [_encode_row(a.row, schema, cats)]
    elif a.data:
        label = a.label
        if label is None:
            with open(a.data) as fh:
                header = [h.strip() for h in fh.readline().split(",")]
            label = meta["label"] if meta["label"] in header else None
        rows = load_csv(a.data, schema, label_column=label, categories=cats).X.tolist()
    else:
        raise LRwBinsError("give --row or --data")
    second = Client(a.connect, a.timeout) if a.connect else _LocalSecond(gbdt)
    try:
        lines = ["probability,stage"]
        for r in rows:
            p, stage = multistage_predict(table, second, r)
            lines.append(f"{p:.10g},{stage}")
    finally:
        second.close()
    _write("\n".join(lines) + "\n", a.out)
    return 0


def cmd_eval(a):
    src = Path(a.model_dir)
    meta = _meta(src)
    _tr, _va, te = _split_from_meta(meta, a.data)
    gbdt = import_second_stage(src / SECOND_FILE)
    rep = evaluate(te, gbdt, import_first_stage(src / PLAIN_TABLE).to_model(),
                   import_first_stage(src / FULL_TABLE).to_model(), import_first_stage(src / FIRST_TABLE))
    _write(rep.to_csv(), a.out)
    return 0


def cmd_bench(a):
    src = Path(a.model_dir)
    meta = _meta(src)
    _tr, _va, te = _split_from_meta(meta)
    table = import_first_stage(src / FIRST_TABLE)
    sizes = _ints(a.batch_sizes)
    sets = [mixed_rows(table, te.X, a.coverage, a.rows, a.seed + k) for k in range(max(a.workers, 1))]
    handle = None
    address = a.connect
    try:
        if address is None:
            gbdt = import_second_stage(src / SECOND_FILE)
            handle = serve_in_subprocess(gbdt, "127.0.0.1:0",
                                         LatencyInjector(a.inject_latency_ms or 0.0, a.jitter_ms))
            address = handle.address
            inj = a.inject_latency_ms
            if inj is None:
                # tune the live server's delay until the remote path is ``ratio`` x the first stage
                with Client(address, a.timeout) as cl:
                    inj = calibrate_injection(table, cl, sets[0], a.ratio, server=handle)
            print(f"inject_latency_ms={inj:.6f}", file=sys.stderr)
        if a.workers > 1:
            rep = bench_workers(table, address, sets, sizes, a.repetitions, a.timeout)
        else:
            with Client(address, a.timeout) as cl:
                rep = bench(table, cl, sets[0], sizes, a.repetitions, handle)
    finally:
        if handle is not None:
            handle.stop()
    _write(rep.to_csv(), a.out)
    o = rep.overall()
    print(f"mean_first_ms={o.mean_first_ms:.6f} mean_second_ms={o.mean_second_ms:.6f} "
          f"mean_multistage_ms={o.mean_multistage_ms:.6f} projected_multistage_ms={o.projected_multistage_ms:.6f} "
          f"speedup_vs_second={o.speedup_vs_second:.4f}", file=sys.stderr)
    return 0


COMMANDS = {"train": cmd_train, "tune": cmd_tune, "allocate": cmd_allocate, "export": cmd_export,
            "serve": cmd_serve, "predict": cmd_predict, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    try:
        return COMMANDS[args.command](args)
    except (LRwBinsError, OSError, ValueError, KeyError) as e:
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
