"""
Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from .errors import ConfigError, FlowcommError

logger = logging.getLogger("flowcomm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def _date(s: str) -> date:
    try:
        return date.fromisoformat(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {s!r}") from None


def _window(s: str) -> tuple[date, date]:
    start, sep, end = s.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError("window must look like START:END (ISO dates)")
    return _date(start), _date(end)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowcomm", description="Flow-community detection over transaction ledgers.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("ingest", help="parse, validate and partition a ledger")
    s.add_argument("--input", required=True, type=Path)
    s.add_argument("--segments", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--top-fraction", type=float, default=0.000001)

    s = sub.add_parser("build-graph", help="build the temporal graph of sequential transactions")
    s.add_argument("--ledger", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--window-days", type=int, default=7)
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("append", help="append one day of transactions to a ledger and its graph")
    s.add_argument("--ledger", required=True, type=Path)
    s.add_argument("--graph", required=True, type=Path)
    s.add_argument("--input", required=True, type=Path, help="ledger file holding that day's transactions")
    s.add_argument("--day", required=True, type=_date)

    s = sub.add_parser("weights", help="derive second-order weights and stamp them on the graph")
    s.add_argument("--graph", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("prune", help="drop weak edges from a weighted graph")
    s.add_argument("--graph", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--theta", type=float, default=0.1)

    s = sub.add_parser("communities", help="size-capped Leiden per analysis window")
    s.add_argument("--graph", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--window-days", type=int, default=7)
    s.add_argument("--stride-days", type=int, default=7)
    s.add_argument("--max-size", type=int, default=150)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--quality", choices=["modularity", "cpm"], default="modularity")
    s.add_argument("--resolution", type=float, default=1.0)
    s.add_argument("--restarts", type=int, default=2, help="independent optimisations, best kept")
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("score", help="flag communities against the risk criteria")
    s.add_argument("--communities", required=True, type=Path, help="communities.csv")
    s.add_argument("--segments", required=True, type=Path)
    s.add_argument("--risk-config", required=True, type=Path)
    s.add_argument("--graph", required=True, type=Path, help="pruned weighted graph")
    s.add_argument("--ledger", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("baseline", help="motif-search baseline flows and scores")
    s.add_argument("--graph", required=True, type=Path, help="unpruned temporal graph")
    s.add_argument("--ledger", required=True, type=Path)
    s.add_argument("--segments", required=True, type=Path)
    s.add_argument("--risk-config", required=True, type=Path)
    s.add_argument("--hops", required=True, type=int, nargs="+")
    s.add_argument("--window", type=_window, help="START:END, default the whole graph")
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("synth", help="generate a synthetic ledger with labelled typologies")
    s.add_argument("--config", type=Path, help="YAML with background/injections; default the benchmark")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("runtime", help="append a ledger day by day and time every step")
    s.add_argument("--input", required=True, type=Path)
    s.add_argument("--segments", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path, help="directory; the series goes to runtime.csv")
    s.add_argument("--window-days", type=int, default=7)
    s.add_argument("--analysis-days", type=int, help="trailing window clustered per batch, default --window-days")
    s.add_argument("--initial-days", type=int, default=0, help="days loaded before timing starts")
    s.add_argument("--theta", type=float, default=0.1)
    s.add_argument("--max-size", type=int, default=150)
    s.add_argument("--risk-config", type=Path)

    s = sub.add_parser("report", help="recompute a report table from a run directory")
    s.add_argument("--run", required=True, type=Path)
    s.add_argument("--kind", required=True, choices=["space", "runtime", "flows", "coverage", "diversity"])
    s.add_argument("--labels", type=Path, help="ground-truth labels (coverage)")
    s.add_argument("--out", type=Path, help="write CSV here instead of stdout")

    s = sub.add_parser("run", help="end-to-end pipeline from a config file")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--no-resume", action="store_true", help="recompute every stage")
    s.add_argument("--stop-after", help="stop after this stage")
    return p


def _cmd_ingest(a):
    from .pipeline import ingest

    led = ingest(a.input, a.segments, a.out, a.top_fraction)
    return {"partitions": len(led.partitions), "transactions": led.total_rows}


def _cmd_build_graph(a):
    from .ledger import PartitionedLedger
    from .temporal import build_temporal_graph

    store = build_temporal_graph(PartitionedLedger.open(a.ledger), a.window_days, a.out, workers=a.workers)
    return {"edges": store.n_edges, "partitions": len(store.partitions)}


def _cmd_append(a):
    from .ledger import PartitionedLedger, load_ledger
    from .temporal import TemporalGraphStore, append_batch

    frame, rejects = load_ledger(a.input)
    store, led = append_batch(TemporalGraphStore.open(a.graph, weighted=False), PartitionedLedger.open(a.ledger), a.day, frame)
    return {"edges": store.n_edges, "transactions": led.total_rows, "rejected": len(rejects)}


def _cmd_weights(a):
    from .pipeline import compute_and_apply_weights
    from .temporal import TemporalGraphStore

    store = compute_and_apply_weights(TemporalGraphStore.open(a.graph, weighted=False), a.out)
    return {"edges": store.n_edges}


def _cmd_prune(a):
    from .pipeline import prune
    from .temporal import TemporalGraphStore

    store = prune(TemporalGraphStore.open(a.graph, weighted=True), a.theta, a.out)
    return {"edges": store.n_edges}


def _cmd_communities(a):
    from .community import LeidenConfig
    from .pipeline import WindowConfig, communities
    from .temporal import TemporalGraphStore

    cfg = LeidenConfig(a.quality, a.resolution, a.max_size, a.seed, restarts=a.restarts)
    if a.window_days < 1:
        raise ConfigError("--window-days must be >= 1")
    res = communities(TemporalGraphStore.open(a.graph, weighted=True), cfg, WindowConfig(a.window_days, a.stride_days),
                      a.out, a.workers)
    return {"windows": len(res), "communities": sum(len(c) for _, _, c in res)}


def _cmd_score(a):
    from .community import read_communities
    from .ledger import PartitionedLedger, load_segments
    from .pipeline import score_windows
    from .risk import load_risk_config
    from .temporal import TemporalGraphStore

    store = TemporalGraphStore.open(a.graph, weighted=True)
    windows_csv = a.communities.with_name("windows.csv")
    wins = read_communities(a.communities, store, windows_csv)
    reports = score_windows(wins, PartitionedLedger.open(a.ledger), load_segments(a.segments),
                            load_risk_config(a.risk_config), a.out)
    return {"communities": len(reports), "flagged": sum(r.flagged for r in reports)}


def _cmd_baseline(a):
    from .ledger import PartitionedLedger, load_segments
    from .pipeline import baseline
    from .risk import load_risk_config
    from .temporal import TemporalGraphStore

    store = TemporalGraphStore.open(a.graph, weighted=None)
    if a.window:
        bounds = [a.window]
    elif store.first_day is not None:
        bounds = [(store.first_day, store.last_day)]
    else:
        bounds = []
    flows, seconds = baseline(store, PartitionedLedger.open(a.ledger), load_segments(a.segments),
                              load_risk_config(a.risk_config), tuple(a.hops), bounds, a.out)
    return {"flows": dict(zip(flows["hops"].tolist(), flows["motif_flows"].tolist())),
            "seconds": {h: round(s, 3) for h, s in seconds.items()}}


def _cmd_synth(a):
    from . import synth

    if a.config:
        bg, inj, wd = synth.load_synth_config(a.config)
    else:
        bg, inj, wd = synth.BENCHMARK_BACKGROUND, list(synth.MIXED_TYPOLOGIES), 7
    res = synth.generate(bg, inj, seed=a.seed, out_dir=a.out, window_days=wd)
    return {"transactions": len(res.ledger), "labeled_transactions": int(res.labels["transaction_id"].nunique()),
            "files": {k: str(v) for k, v in res.files.items()}}


def _cmd_runtime(a):
    from .community import LeidenConfig
    from .ledger import load_ledger, load_segments
    from .pipeline import batched_append_runtime
    from .report import runtime_report, write_table
    from .risk import RiskConfig, load_risk_config

    frame, rejects = load_ledger(a.input)
    risk = load_risk_config(a.risk_config) if a.risk_config else RiskConfig()
    a.out.mkdir(parents=True, exist_ok=True)
    rows = batched_append_runtime(frame, load_segments(a.segments), a.out / "work", a.window_days, a.theta,
                                  LeidenConfig(max_comm_size=a.max_size), risk, a.analysis_days, a.initial_days)
    write_table(rows, a.out / "runtime.csv")
    _, fits = runtime_report(rows)
    total = fits.set_index("step").loc["total"] if len(fits) else None
    return {"batches": int(rows["batch"].nunique()), "rejected": len(rejects),
            "r_squared": None if total is None else float(total["r_squared"])}


def _cmd_report(a):
    import pandas as pd

    from . import report
    from .pipeline import flows_table, read_cases

    run = a.run
    if a.kind == "space":
        table = report.space_report(run)
    elif a.kind == "diversity":
        table = report.diversity_report(pd.read_csv(run / "score" / "audit.csv", keep_default_na=False))
    elif a.kind == "runtime":
        path = run / "runtime.csv"
        if not path.exists():
            raise ConfigError(f"{path} not found; runtime series come from the batched append experiment")
        _, table = report.runtime_report(pd.read_csv(path))
    elif a.kind == "flows":
        if not (run / "baseline" / "flows.csv").exists():
            raise ConfigError("run has no baseline stage; set baseline_hops in the config")
        table = flows_table(run, with_timings=True)
    else:
        from .synth import evaluate_coverage, read_labels

        if a.labels is None:
            raise ConfigError("coverage needs --labels")
        methods = {"communities": read_cases(run / "score" / "cases.csv")}
        for p in sorted((run / "baseline").glob("cases_h*.csv")):
            methods[f"motif_{p.stem.split('_')[1]}"] = read_cases(p)
        table = report.coverage_report(evaluate_coverage(methods, read_labels(a.labels)))
    if a.out:
        report.write_table(table, a.out)
    else:
        table.to_csv(sys.stdout, index=False)
    return None


def _cmd_run(a):
    from .pipeline import run_pipeline

    m = run_pipeline(a.config, a.out, resume=not a.no_resume, stop_after=a.stop_after)
    return {"completed": m["completed"], "ran": m["ran"]}


COMMANDS = {
    "ingest": _cmd_ingest,
    "build-graph": _cmd_build_graph,
    "append": _cmd_append,
    "weights": _cmd_weights,
    "prune": _cmd_prune,
    "communities": _cmd_communities,
    "score": _cmd_score,
    "baseline": _cmd_baseline,
    "synth": _cmd_synth,
    "runtime": _cmd_runtime,
    "report": _cmd_report,
    "run": _cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors, which is also our config-error code
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        summary = COMMANDS[args.verb](args)
    except FlowcommError as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - last-resort guard keeps the exit-code contract
        logger.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    if summary is not None:
        print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
