"""
Accounting and comparison tables.

Every number here is recomputed from persisted artifacts (or from explicit
measurement records passed in), never carried over from memory of a run.
Outputs are plain delimited tables meant for any plotting tool.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import CorruptStoreError
from .ledger import PartitionedLedger
from .risk import CaseReport
from .temporal import TemporalGraphStore

logger = logging.getLogger(__name__)

SPACE_STAGES = ("initial", "pre-processed", "T created", "pruned")
EMPTY_MARKER = "<no cases>"


# ---------------------------------------------------------------------------
# Space explosion / implosion
# ---------------------------------------------------------------------------


def _touched(store: TemporalGraphStore) -> int:
    ids: set[str] = set()
    for k in store.keys():
        part = store.read_partition(k)
        ids.update(part["src_txn"])
        ids.update(part["dst_txn"])
    return len(ids)


def _count_rows(path: Path) -> int:
    if not path.exists():
        raise CorruptStoreError(f"missing stage artifact {path}")
    with open(path) as fh:
        return max(sum(1 for _ in fh) - 1, 0)


def space_report(run_dir: str | Path) -> pd.DataFrame:
    """(stage, transactions, edges) recounted from a run's artifacts.

    ``transactions`` for the graph stages counts transactions with at least one
    incident edge; stranded transactions are not part of the graph.
    """
    run = Path(run_dir)
    ledger = PartitionedLedger.open(run / "ingest" / "ledger")
    kept = ledger.total_rows
    removed = _count_rows(run / "ingest" / "removed_transactions.csv")
    graph = TemporalGraphStore.open(run / "graph" / "store")
    pruned = TemporalGraphStore.open(run / "prune" / "graph", weighted=True)
    rows = [
        ("initial", kept + removed, 0),
        ("pre-processed", kept, 0),
        ("T created", _touched(graph), graph.n_edges),
        ("pruned", _touched(pruned), pruned.n_edges),
    ]
    return pd.DataFrame(rows, columns=["stage", "transactions", "edges"])


# ---------------------------------------------------------------------------
# Runtime per batch
# ---------------------------------------------------------------------------


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line; returns (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.ptp(x) == 0:
        return 0.0, float(y.mean()) if len(y) else 0.0, float("nan")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def runtime_report(records: pd.DataFrame | Iterable[Mapping]) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Per-step series plus a linear fit of cumulative time against cumulative volume.

    ``records`` rows carry ``batch``, ``step``, ``seconds`` and ``transactions``
    (the batch's transaction count).  Returns ``(series, fits)``; ``fits`` has
    one row per step plus ``total`` with slope (seconds per transaction),
    intercept and R².
    """
    series = pd.DataFrame(list(records) if not isinstance(records, pd.DataFrame) else records)
    if series.empty:
        return pd.DataFrame(columns=["batch", "step", "seconds", "transactions"]), pd.DataFrame(
            columns=["step", "batches", "slope", "intercept", "r_squared", "first_seconds", "last_seconds"]
        )
    series = series[["batch", "step", "seconds", "transactions"]].sort_values(["batch", "step"], kind="stable")
    per_batch = series.groupby("batch").agg(seconds=("seconds", "sum"), transactions=("transactions", "first"))
    fits = []
    groups = [(s, g.set_index("batch")) for s, g in series.groupby("step", sort=True)]
    groups.append(("total", per_batch))
    for step, g in groups:
        g = g.sort_index()
        cx = g["transactions"].cumsum().to_numpy()
        cy = g["seconds"].cumsum().to_numpy()
        slope, intercept, r2 = linear_fit(cx, cy)
        fits.append((step, len(g), slope, intercept, r2, float(g["seconds"].iloc[0]), float(g["seconds"].iloc[-1])))
    fits = pd.DataFrame(fits, columns=["step", "batches", "slope", "intercept", "r_squared", "first_seconds", "last_seconds"])
    return series.reset_index(drop=True), fits


# ---------------------------------------------------------------------------
# Flows vs hops, coverage
# ---------------------------------------------------------------------------


def flows_report(rows: Iterable[Mapping]) -> pd.DataFrame:
    """Flow counts per hop for the motif baseline next to the (hop-free) community count."""
    cols = ["hops", "motif_flows", "motif_paths", "motif_seconds", "community_flows"]
    return pd.DataFrame(list(rows), columns=cols).sort_values("hops").reset_index(drop=True)


def coverage_report(coverage: Mapping) -> pd.DataFrame:
    cols = ["method", "coverage", "cases", "flagged_accounts", "labeled_found", "labeled_total"]
    rows = [[getattr(c, k) for k in cols] for _, c in sorted(coverage.items())]
    return pd.DataFrame(rows, columns=cols)


# ---------------------------------------------------------------------------
# Topological diversity
# ---------------------------------------------------------------------------

DIVERSITY_FIELDS = ("diameter", "n_dispense", "n_sink")


def _audit_from_reports(reports: Iterable[CaseReport]) -> pd.DataFrame:
    rows = [
        (len(r.topology.dispense_accounts), len(r.topology.sink_accounts), r.topology.diameter, int(r.flagged))
        for r in reports
    ]
    return pd.DataFrame(rows, columns=["n_dispense", "n_sink", "diameter", "flagged"])


def diversity_report(cases: pd.DataFrame | Iterable[CaseReport]) -> pd.DataFrame:
    """Histograms of diameter, #dispense and #sink for all and for flagged flows.

    Accepts an audit table or case reports.  An empty input yields a single
    row whose ``metric`` is the explicit empty marker.
    """
    audit = cases if isinstance(cases, pd.DataFrame) else _audit_from_reports(cases)
    cols = ["scope", "metric", "value", "count"]
    if audit.empty:
        return pd.DataFrame([("all", EMPTY_MARKER, 0, 0)], columns=cols)
    rows = []
    for scope, sub in (("all", audit), ("flagged", audit[audit["flagged"].astype(int) == 1])):
        for metric in DIVERSITY_FIELDS:
            counts = sub[metric].astype(int).value_counts().sort_index()
            rows += [(scope, metric, int(v), int(n)) for v, n in counts.items()]
    return pd.DataFrame(rows, columns=cols)


def write_table(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
