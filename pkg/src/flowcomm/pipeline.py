"""
End-to-end orchestration.

A run directory holds one sub-directory per stage::

    ingest/       ledger/ (partitioned), rejects.csv, removed_*.csv, segments.csv
    graph/        store/ (temporal edges)
    weights/      second_order.csv, graph/ (weighted edges)
    prune/        graph/ (pruned edges), prune_report.csv
    communities/  communities.csv, windows.csv
    score/        audit.csv, cases.csv
    baseline/     audit_h<k>.csv, cases_h<k>.csv, flows.csv   (only with baseline hops)
    report/       space.csv, diversity.csv, flows.csv, coverage.csv

Each finished stage writes ``_stage.json`` with sha256 hashes of its files,
the digest of the config slice it depends on and the digests of its inputs.
``manifest.json`` at the run root is the checkpoint: on resume a stage is
skipped only when its recorded inputs, config and file hashes all still
match.  Wall-clock timings go to ``timings.json``, which no hash covers.
"""

from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import pandas as pd
import yaml

from . import storage
from .community import LeidenConfig, detect_communities, read_communities, run_windows, window_bounds, write_communities, write_windows
from .errors import ConfigError, CorruptStoreError, FlowcommError, StageError
from .ledger import (
    PartitionedLedger,
    SchemaConfig,
    day_of,
    load_ledger,
    load_segments,
    remove_super_connected,
    write_partitions,
    write_rejects,
    write_segments,
)
from .motifs import MotifSpec, c1_endpoint_filter, count_motif_flows, find_motif_flows, score_motif_flows
from .report import coverage_report, diversity_report, flows_report, space_report, write_table
from .risk import RiskConfig, score_community, transaction_map, write_audit, write_cases
from .second_order import CooccurrenceCounts, apply_weights, compute_weights, derive_second_order, write_second_order, prune_weak_edges
from .temporal import TemporalGraphStore, append_batch, build_temporal_graph, edges_in_window_frame

logger = logging.getLogger(__name__)

STAGES = ("ingest", "graph", "weights", "prune", "communities", "score", "baseline", "report")
STAGE_FILE = "_stage.json"
RUN_MANIFEST = "manifest.json"
TIMINGS = "timings.json"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowConfig:
    length_days: int = 7
    stride_days: int = 7


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob the method leaves open, with working defaults.

    None of the defaults below is a published production value; those were
    never disclosed.  They are chosen to behave sensibly on desk-scale data.
    """

    ledger: Path
    segments: Path
    labels: Path | None = None
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    segment_vocabulary: tuple[str, ...] | None = None
    top_fraction: float = 0.000001
    window_days: int = 7
    theta: float = 0.1
    leiden: LeidenConfig = field(default_factory=LeidenConfig)
    windows: WindowConfig = field(default_factory=WindowConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    baseline_hops: tuple[int, ...] = ()
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.top_fraction <= 1.0:
            raise ConfigError(f"top_fraction must be in [0, 1], got {self.top_fraction}")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must be in [0, 1], got {self.theta}")
        if int(self.window_days) < 1:
            raise ConfigError(f"window_days must be >= 1, got {self.window_days}")
        if self.windows.length_days < 1 or self.windows.stride_days <= 0:
            raise ConfigError("analysis windows need length_days >= 1 and stride_days > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for h in self.baseline_hops:
            MotifSpec(int(h))

    @classmethod
    def from_dict(cls, raw: Mapping, base: Path | None = None) -> "PipelineConfig":
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        for key in ("ledger", "segments"):
            if key not in raw:
                raise ConfigError(f"config needs '{key}'")
        base = base or Path.cwd()

        def path(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else (base / p).resolve()

        try:
            return cls(
                ledger=path(raw["ledger"]),
                segments=path(raw["segments"]),
                labels=path(raw.get("labels")),
                schema=SchemaConfig(**raw.get("schema", {})),
                segment_vocabulary=tuple(raw["segment_vocabulary"]) if raw.get("segment_vocabulary") else None,
                top_fraction=float(raw.get("top_fraction", 0.000001)),
                window_days=int(raw.get("window_days", 7)),
                theta=float(raw.get("theta", 0.1)),
                leiden=LeidenConfig(**raw.get("leiden", {})),
                windows=WindowConfig(**raw.get("windows", {})),
                risk=RiskConfig.from_dict(raw.get("risk", {})),
                baseline_hops=tuple(int(h) for h in raw.get("baseline_hops", ())),
                workers=int(raw.get("workers", 1)),
            )
        except TypeError as e:
            raise ConfigError(f"bad config: {e}") from e

    def to_dict(self) -> dict:
        return {
            "ledger": str(self.ledger),
            "segments": str(self.segments),
            "labels": str(self.labels) if self.labels else None,
            "schema": asdict(self.schema),
            "segment_vocabulary": list(self.segment_vocabulary) if self.segment_vocabulary else None,
            "top_fraction": self.top_fraction,
            "window_days": self.window_days,
            "theta": self.theta,
            "leiden": asdict(self.leiden),
            "windows": asdict(self.windows),
            "risk": self.risk.to_dict(),
            "baseline_hops": list(self.baseline_hops),
            "workers": self.workers,
        }


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return PipelineConfig.from_dict(raw, base=path.parent.resolve())


# ---------------------------------------------------------------------------
# Stage bodies (also used directly by the CLI verbs)
# ---------------------------------------------------------------------------


def ingest(
    ledger_path: Path,
    segments_path: Path,
    out: Path,
    top_fraction: float,
    schema: SchemaConfig | None = None,
    vocabulary=None,
) -> PartitionedLedger:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    frame, rejects = load_ledger(ledger_path, schema)
    write_rejects(out / "rejects.csv", rejects)
    segments = load_segments(segments_path, vocabulary)
    write_segments(out / "segments.csv", segments.values())
    kept, removed = remove_super_connected(frame, top_fraction)
    pd.DataFrame({"account": removed}, dtype=object).to_csv(out / "removed_accounts.csv", index=False)
    gone = set(removed)
    dropped = frame[frame["source"].isin(gone) | frame["target"].isin(gone)]
    dropped[["id"]].sort_values("id").to_csv(out / "removed_transactions.csv", index=False)
    return write_partitions(kept, out / "ledger")


def compute_and_apply_weights(graph: TemporalGraphStore, out: Path) -> TemporalGraphStore:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    s = compute_weights(derive_second_order(graph))
    write_second_order(out / "second_order.csv", s)
    return apply_weights(graph, s, out / "graph")


def prune(weighted: TemporalGraphStore, theta: float, out: Path) -> TemporalGraphStore:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    pruned, report = prune_weak_edges(weighted, theta, out / "graph")
    pd.DataFrame(report.as_rows()).to_csv(out / "prune_report.csv", index=False, float_format="%.17g")
    return pruned


def communities(graph: TemporalGraphStore, cfg: LeidenConfig, windows: WindowConfig, out: Path, workers: int = 1):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_windows(graph, windows.length_days, windows.stride_days, cfg, weighted=True, workers=workers)
    write_communities(out / "communities.csv", result)
    write_windows(out / "windows.csv", result)
    return result


def score_windows(windows, ledger: PartitionedLedger, segments, risk: RiskConfig, out: Path):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    txns = transaction_map(ledger.read_all())
    reports = [score_community(c, txns, risk, segments, wid) for wid, _, comms in windows for c in comms]
    write_audit(out / "audit.csv", reports)
    write_cases(out / "cases.csv", reports)
    return reports


def baseline(
    graph: TemporalGraphStore,
    ledger: PartitionedLedger,
    segments,
    risk: RiskConfig,
    hops: tuple[int, ...],
    bounds: list[tuple[date, date]],
    out: Path,
) -> tuple[pd.DataFrame, dict[int, float]]:
    """Motif flows per hop over the unpruned graph; returns (flow counts, seconds per hop).

    Every flow is counted, but only flows whose endpoint accounts can pass C1
    are materialised and written to the audit table; the rest cannot be
    flagged (see :func:`flowcomm.motifs.c1_endpoint_filter`).
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    txns = transaction_map(ledger.read_all())
    rows, seconds = [], {}
    frames = [edges_in_window_frame(graph, *b) for b in bounds]
    keep = c1_endpoint_filter(risk, segments)
    for h in hops:
        spec = MotifSpec(h)
        t0 = time.perf_counter()
        reports, n_flows, n_paths = [], 0, 0
        for wid, edges in enumerate(frames):
            nf, np_ = count_motif_flows(edges, spec)
            n_flows += nf
            n_paths += np_
            flows = find_motif_flows(edges, spec, keep)
            for r in score_motif_flows(flows, txns, risk, segments, short_circuit=True):
                reports.append(replace(r, window_id=wid))
        seconds[h] = time.perf_counter() - t0
        write_audit(out / f"audit_h{h}.csv", reports)
        write_cases(out / f"cases_h{h}.csv", reports)
        rows.append({"hops": h, "motif_flows": n_flows, "motif_paths": n_paths})
    flows = pd.DataFrame(rows, columns=["hops", "motif_flows", "motif_paths"])
    flows.to_csv(out / "flows.csv", index=False)
    return flows, seconds


def read_cases(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype=str, keep_default_na=False)


def flows_table(run: Path, with_timings: bool = False) -> pd.DataFrame:
    """Motif flow counts per hop next to the community count of the same run.

    Wall-clock seconds are measurements, not results, so they are only
    joined in on request and never written into a stage directory.
    """
    run = Path(run)
    b = pd.read_csv(run / "baseline" / "flows.csv")
    timings = _read_timings(run).get("baseline_hops", {}) if with_timings else {}
    b["motif_seconds"] = [timings.get(str(h), np.nan) for h in b["hops"]]
    b["community_flows"] = len(pd.read_csv(run / "score" / "audit.csv", keep_default_na=False))
    return flows_report(b.to_dict("records"))


def write_reports(run: Path, out: Path, labels: Path | None = None) -> dict[str, Path]:
    """Every report table recomputed from the run's persisted artifacts."""
    from .synth import evaluate_coverage, read_labels

    run, out = Path(run), Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"space": write_table(space_report(run), out / "space.csv")}
    audit = pd.read_csv(run / "score" / "audit.csv", keep_default_na=False)
    files["diversity"] = write_table(diversity_report(audit), out / "diversity.csv")
    if (run / "baseline" / "flows.csv").exists():
        files["flows"] = write_table(flows_table(run), out / "flows.csv")
    if labels is not None:
        methods = {"communities": read_cases(run / "score" / "cases.csv")}
        for p in sorted((run / "baseline").glob("cases_h*.csv")):
            methods[f"motif_{p.stem.split('_')[1]}"] = read_cases(p)
        cov = evaluate_coverage(methods, read_labels(labels))
        files["coverage"] = write_table(coverage_report(cov), out / "coverage.csv")
    return files


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def _file_digest(path: Path | None) -> str | None:
    return storage.sha256_file(path) if path is not None and Path(path).exists() else None


def _stage_config(cfg: PipelineConfig) -> dict[str, Any]:
    d = cfg.to_dict()
    return {
        "ingest": {
            "ledger": _file_digest(cfg.ledger),
            "segments": _file_digest(cfg.segments),
            "schema": d["schema"],
            "vocabulary": d["segment_vocabulary"],
            "top_fraction": cfg.top_fraction,
        },
        "graph": {"window_days": cfg.window_days},
        "weights": {},
        "prune": {"theta": cfg.theta},
        "communities": {"leiden": d["leiden"], "windows": d["windows"]},
        "score": {"risk": d["risk"]},
        "baseline": {"hops": d["baseline_hops"], "risk": d["risk"], "windows": d["windows"]},
        "report": {"labels": _file_digest(cfg.labels)},
    }


_INPUTS = {
    "ingest": (),
    "graph": ("ingest",),
    "weights": ("graph",),
    "prune": ("weights",),
    "communities": ("prune",),
    "score": ("communities", "ingest"),
    "baseline": ("graph", "ingest", "communities"),
    "report": ("ingest", "graph", "prune", "score", "baseline"),
}


def _read_timings(run: Path) -> dict:
    p = Path(run) / TIMINGS
    return json.loads(p.read_text()) if p.exists() else {}


def _has_marker(root: Path) -> bool:
    return any(p.name == storage.INCOMPLETE for p in root.rglob(storage.INCOMPLETE))


def stage_record(root: Path) -> dict | None:
    p = Path(root) / STAGE_FILE
    if not p.exists():
        return None
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError:
        return None


def _valid(root: Path, config_digest: str, inputs: dict) -> dict | None:
    rec = stage_record(root)
    if rec is None or _has_marker(root):
        return None
    if rec.get("config") != config_digest or rec.get("inputs") != inputs:
        return None
    if storage.sha256_tree(root, exclude=(STAGE_FILE,)) != rec.get("files"):
        return None
    return rec


def run_pipeline(
    cfg: PipelineConfig | str | Path,
    run_dir: str | Path,
    resume: bool = True,
    stop_after: str | None = None,
) -> dict:
    """Run (or resume) every stage and return the run manifest.

    A failing stage raises :class:`StageError` naming the stage; stages that
    finished before it stay valid and are reused by the next call.
    """
    if not isinstance(cfg, PipelineConfig):
        cfg = load_config(cfg)
    if stop_after is not None and stop_after not in STAGES:
        raise ConfigError(f"unknown stage {stop_after!r}")
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    storage.write_json(run / "config.json", cfg.to_dict())
    slices = _stage_config(cfg)
    digests: dict[str, str] = {}
    timings = _read_timings(run) if resume else {}
    timings.setdefault("stages", {})
    state: dict[str, Any] = {}
    ran: list[str] = []

    for stage in STAGES:
        root = run / stage
        if stage == "baseline" and not cfg.baseline_hops:
            if root.exists():
                shutil.rmtree(root)
            digests[stage] = storage.digest(None)
            continue
        inputs = {k: digests[k] for k in _INPUTS[stage] if k in digests}
        conf = storage.digest(slices[stage])
        rec = _valid(root, conf, inputs) if resume else None
        if rec is not None:
            digests[stage] = rec["digest"]
            logger.info("stage %s: up to date", stage)
        else:
            logger.info("stage %s: running", stage)
            if root.exists():
                shutil.rmtree(root)
            root.mkdir(parents=True)
            t0 = time.perf_counter()
            try:
                _run_stage(stage, cfg, run, state, timings)
            except FlowcommError as e:
                _write_manifest(run, cfg, digests, failed=stage)
                raise StageError(stage, e) from e
            except Exception as e:  # unexpected failures still name the stage
                _write_manifest(run, cfg, digests, failed=stage)
                raise StageError(stage, e) from e
            timings["stages"][stage] = time.perf_counter() - t0
            files = storage.sha256_tree(root, exclude=(STAGE_FILE,))
            d = storage.digest({"files": files, "config": conf, "inputs": inputs})
            storage.write_json(root / STAGE_FILE, {"stage": stage, "config": conf, "inputs": inputs,
                                                   "files": files, "digest": d})
            digests[stage] = d
            ran.append(stage)
        if stage == stop_after:
            break
    storage.write_json(run / TIMINGS, timings)
    manifest = _write_manifest(run, cfg, digests)
    manifest["ran"] = ran
    return manifest


def _write_manifest(run: Path, cfg: PipelineConfig, digests: dict, failed: str | None = None) -> dict:
    manifest = {
        "version": storage.FORMAT_VERSION,
        "config": storage.digest(_stage_config(cfg)),
        "completed": [s for s in STAGES if s in digests],
        "stages": dict(digests),
        "failed": failed,
    }
    storage.write_json(run / RUN_MANIFEST, manifest)
    return manifest


def _ledger(run: Path, state: dict) -> PartitionedLedger:
    if "ledger" not in state:
        state["ledger"] = PartitionedLedger.open(run / "ingest" / "ledger")
    return state["ledger"]


def _segments(run: Path, state: dict) -> dict:
    if "segments" not in state:
        state["segments"] = load_segments(run / "ingest" / "segments.csv")
    return state["segments"]


def _windows(run: Path, state: dict):
    if "windows" not in state:
        store = TemporalGraphStore.open(run / "prune" / "graph", weighted=True)
        state["windows"] = read_communities(
            run / "communities" / "communities.csv", store, run / "communities" / "windows.csv"
        )
    return state["windows"]


def _run_stage(stage: str, cfg: PipelineConfig, run: Path, state: dict, timings: dict) -> None:
    out = run / stage
    if stage == "ingest":
        state["ledger"] = ingest(cfg.ledger, cfg.segments, out, cfg.top_fraction, cfg.schema, cfg.segment_vocabulary)
    elif stage == "graph":
        build_temporal_graph(_ledger(run, state), cfg.window_days, out / "store", workers=cfg.workers)
    elif stage == "weights":
        compute_and_apply_weights(TemporalGraphStore.open(run / "graph" / "store"), out)
    elif stage == "prune":
        prune(TemporalGraphStore.open(run / "weights" / "graph", weighted=True), cfg.theta, out)
    elif stage == "communities":
        store = TemporalGraphStore.open(run / "prune" / "graph", weighted=True)
        state["windows"] = communities(store, cfg.leiden, cfg.windows, out, cfg.workers)
    elif stage == "score":
        score_windows(_windows(run, state), _ledger(run, state), _segments(run, state), cfg.risk, out)
    elif stage == "baseline":
        graph = TemporalGraphStore.open(run / "graph" / "store")
        bounds = [b for _, b, _ in _windows(run, state)]
        if not bounds and graph.first_day is not None:
            bounds = window_bounds(graph.first_day, graph.last_day, cfg.windows.length_days, cfg.windows.stride_days)
        _, seconds = baseline(graph, _ledger(run, state), _segments(run, state), cfg.risk, cfg.baseline_hops, bounds, out)
        timings["baseline_hops"] = {str(h): s for h, s in seconds.items()}
    elif stage == "report":
        write_reports(run, out, cfg.labels)
    else:  # pragma: no cover
        raise ConfigError(f"unknown stage {stage!r}")


def stage_digests(run_dir: str | Path) -> dict[str, dict[str, str]]:
    """File hashes of every finished stage, for determinism comparisons."""
    run = Path(run_dir)
    out = {}
    for stage in STAGES:
        rec = stage_record(run / stage)
        if rec is not None:
            out[stage] = rec["files"]
    return out


# ---------------------------------------------------------------------------
# Coverage comparison on the synthetic benchmark
# ---------------------------------------------------------------------------

COVERAGE_METHODS = ("communities", "communities_unweighted", "motifs")


def _window_edges(edges: pd.DataFrame, bounds: list[tuple[date, date]]):
    sd = edges["src_ts"].to_numpy() // 86_400
    dd = edges["dst_ts"].to_numpy() // 86_400
    for wid, (start, end) in enumerate(bounds):
        a = (start - date(1970, 1, 1)).days
        b = (end - date(1970, 1, 1)).days
        yield wid, (start, end), edges[(sd >= a) & (dd <= b)]


def benchmark_reports(
    frame: pd.DataFrame,
    segments,
    delta_w_days: int,
    theta: float,
    leiden: LeidenConfig,
    risk: RiskConfig,
    windows: WindowConfig,
    hops: tuple[int, ...] = (2, 3),
    methods: tuple[str, ...] = COVERAGE_METHODS,
) -> dict[str, list]:
    """Case reports per method for one in-memory ledger.

    ``communities`` runs Leiden on the pruned, weighted graph;
    ``communities_unweighted`` runs it on the unpruned graph with unit
    weights; ``motifs`` scores type-2 motif flows of the given hop counts.
    All methods share the analysis windows and risk criteria.
    """
    from .ledger import SECONDS_PER_DAY
    from .second_order import lookup_weights
    from .temporal import join_sequential

    unknown = set(methods) - set(COVERAGE_METHODS)
    if unknown:
        raise ConfigError(f"unknown method(s) {sorted(unknown)}")
    edges = join_sequential(frame, frame, delta_w_days * SECONDS_PER_DAY)
    edges = edges.assign(w=lookup_weights(edges, compute_weights(derive_second_order(edges))))
    txns = transaction_map(frame)
    first, last = day_of(int(frame["timestamp"].min())), day_of(int(frame["timestamp"].max()))
    bounds = window_bounds(first, last, windows.length_days, windows.stride_days)
    keep = c1_endpoint_filter(risk, segments)

    reports: dict[str, list] = {m: [] for m in methods}
    for wid, b, e in _window_edges(edges, bounds):
        if "communities" in reports:
            for c in detect_communities(e[e["w"] >= theta], leiden, weighted=True, window=b):
                reports["communities"].append(score_community(c, txns, risk, segments, wid, short_circuit=True))
        if "communities_unweighted" in reports:
            for c in detect_communities(e, leiden, weighted=False, window=b):
                reports["communities_unweighted"].append(
                    score_community(c, txns, risk, segments, wid, short_circuit=True))
        if "motifs" in reports:
            for h in hops:
                flows = find_motif_flows(e, MotifSpec(h), keep)
                for r in score_motif_flows(flows, txns, risk, segments, short_circuit=True):
                    reports["motifs"].append(replace(r, window_id=wid))
    return reports


def _benchmark_defaults(delta_w_days, theta, leiden, risk, windows):
    from . import synth

    return (
        delta_w_days or synth.BENCHMARK_DELTA_W_DAYS,
        synth.BENCHMARK_THETA if theta is None else theta,
        leiden or LeidenConfig(),
        risk or synth.BENCHMARK_RISK,
        windows or WindowConfig(*synth.BENCHMARK_WINDOW),
    )


def coverage_benchmark(
    seed: int,
    background=None,
    typologies=None,
    delta_w_days: int | None = None,
    theta: float | None = None,
    leiden: LeidenConfig | None = None,
    risk: RiskConfig | None = None,
    windows: WindowConfig | None = None,
    hops: tuple[int, ...] = (2, 3),
):
    """Coverage of every method on one mixed-typology synthetic ledger.

    Returns ``(coverage by method, case reports by method)``.
    """
    from . import synth

    background = background or synth.BENCHMARK_BACKGROUND
    typologies = synth.MIXED_TYPOLOGIES if typologies is None else typologies
    dw, theta, leiden, risk, windows = _benchmark_defaults(delta_w_days, theta, leiden, risk, windows)
    res = synth.generate(background, typologies, seed=seed, window_days=dw)
    reports = benchmark_reports(res.ledger, res.segments, dw, theta, leiden, risk, windows, hops)
    return synth.evaluate_coverage(reports, res.labels), reports


def background_flag_rate(
    seed: int,
    background=None,
    delta_w_days: int | None = None,
    theta: float | None = None,
    leiden: LeidenConfig | None = None,
    risk: RiskConfig | None = None,
    windows: WindowConfig | None = None,
) -> tuple[int, int]:
    """(transactions, flagged communities) on a ledger with nothing injected."""
    from . import synth

    background = background or synth.BENCHMARK_BACKGROUND
    dw, theta, leiden, risk, windows = _benchmark_defaults(delta_w_days, theta, leiden, risk, windows)
    res = synth.generate(background, [], seed=seed, window_days=dw)
    reports = benchmark_reports(res.ledger, res.segments, dw, theta, leiden, risk, windows,
                                methods=("communities",))
    return len(res.ledger), sum(r.flagged for r in reports["communities"])


def flow_explosion(
    frame: pd.DataFrame,
    window_days: int,
    hops: tuple[int, ...] = (2, 3, 4, 5),
    theta: float = 0.0,
    leiden: LeidenConfig | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> pd.DataFrame:
    """Motif flow counts and detection time per hop beside one community count.

    Motif flows are materialised per hop (path enumeration plus grouping),
    which is what a motif-search detector has to do before scoring.  The
    community count comes from a single Leiden run over the whole ledger and
    does not depend on any hop parameter.
    """
    from .ledger import SECONDS_PER_DAY, normalize_frame
    from .second_order import lookup_weights
    from .temporal import join_sequential

    frame = normalize_frame(frame)
    edges = join_sequential(frame, frame, window_days * SECONDS_PER_DAY)
    rows = []
    for h in hops:
        t0 = clock()
        flows = find_motif_flows(edges, MotifSpec(h))
        secs = clock() - t0
        rows.append({"hops": h, "motif_flows": len(flows), "motif_paths": sum(f.n_paths for f in flows),
                     "motif_seconds": secs})
    weighted = edges.assign(w=lookup_weights(edges, compute_weights(derive_second_order(edges))))
    n_comm = len(detect_communities(weighted[weighted["w"] >= theta], leiden or LeidenConfig()))
    for r in rows:
        r["community_flows"] = n_comm
    return flows_report(rows)


# ---------------------------------------------------------------------------
# Batched append runtime experiment
# ---------------------------------------------------------------------------


def batched_append_runtime(
    frame: pd.DataFrame,
    segments,
    root: str | Path,
    window_days: int,
    theta: float,
    leiden: LeidenConfig,
    risk: RiskConfig,
    analysis_days: int | None = None,
    initial_days: int = 0,
    clock: Callable[[], float] = time.perf_counter,
) -> pd.DataFrame:
    """Append a ledger one day at a time and time each step per batch.

    Steps per batch: ``graph`` (ledger + edge append), ``weights`` (running
    co-occurrence counts, weights for the new edges), ``communities`` (Leiden
    on the trailing analysis window, pruned at ``theta``) and ``score``.
    The first ``initial_days`` days are loaded up front and not timed.
    Returns rows ``(batch, day, step, seconds, transactions, edges)``.
    """
    from .ledger import normalize_frame

    root = Path(root)
    frame = normalize_frame(frame)
    days = frame["timestamp"].to_numpy() // 86_400
    all_days = sorted(set(days.tolist()))
    if not all_days:
        return pd.DataFrame(columns=["batch", "day", "step", "seconds", "transactions", "edges"])
    analysis_days = analysis_days or window_days
    first = all_days[0]
    initial = [d for d in all_days if d < first + initial_days]
    seed_frame = frame[np.isin(days, initial)]
    ledger = write_partitions(seed_frame, root / "ledger")
    store = build_temporal_graph(ledger, window_days, root / "graph")
    counts = CooccurrenceCounts()
    for k in store.keys():
        counts.add(store.read_partition(k))
    weighted: dict[tuple, pd.DataFrame] = {}
    for k in store.keys():
        e = store.read_partition(k)
        weighted[k] = e.assign(w=counts.weights(e))

    txns: dict = {}
    from .risk import transaction_map as _tmap

    txns.update(_tmap(seed_frame))
    rows = []
    batch = 0
    for dn in all_days:
        if dn in initial:
            continue
        d = day_of(dn * 86_400)
        new = frame[days == dn]

        t0 = clock()
        before = set(store.partitions)
        store, ledger = append_batch(store, ledger, d, new)
        added = [k for k in store.keys() if k not in before]
        new_edges = [store.read_partition(k) for k in added]
        t1 = clock()

        for e in new_edges:
            counts.add(e)
        for k, e in zip(added, new_edges):
            weighted[k] = e.assign(w=counts.weights(e))
        txns.update(_tmap(new))
        t2 = clock()

        start = d - timedelta(days=analysis_days - 1)
        keys = [k for k in weighted if k[0] >= start and k[1] <= d]
        edges = pd.concat([weighted[k] for k in keys], ignore_index=True) if keys else None
        comms = []
        if edges is not None:
            edges = edges[edges["w"] >= theta]
            comms = detect_communities(edges, leiden, weighted=True, window=(start, d))
        t3 = clock()

        for c in comms:
            score_community(c, txns, risk, segments, batch, short_circuit=True)
        t4 = clock()

        n_new = int(sum(len(e) for e in new_edges))
        for step, secs in (("graph", t1 - t0), ("weights", t2 - t1), ("communities", t3 - t2), ("score", t4 - t3)):
            rows.append((batch, d.isoformat(), step, secs, len(new), n_new))
        batch += 1
    return pd.DataFrame(rows, columns=["batch", "day", "step", "seconds", "transactions", "edges"])
