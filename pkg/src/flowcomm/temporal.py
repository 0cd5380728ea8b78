"""
Temporal graph of sequential transactions.

Nodes are transactions.  An edge ``s -> d`` exists iff the receiver of ``s``
is the sender of ``d`` and ``t_s < t_d < t_s + window``.  Construction runs
one source day at a time, joining that day against the destination days it
can reach, so peak memory is bounded by ``window_days + 1`` days of ledger.

Edges are stored in Parquet partitions keyed by (source date, destination
date).  Each edge row carries the three accounts it spans so later stages
never have to join back to the ledger.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd
import pyarrow as pa

from . import storage
from .errors import ConfigError, CorruptStoreError
from .ledger import SECONDS_PER_DAY, PartitionedLedger, append_day

logger = logging.getLogger(__name__)

EDGE_COLUMNS = ["src_txn", "dst_txn", "src_from", "mid", "dst_to", "src_ts", "dst_ts"]

_EDGE_SCHEMA = pa.schema(
    [
        ("src_txn", pa.string()),
        ("dst_txn", pa.string()),
        ("src_from", pa.string()),
        ("mid", pa.string()),
        ("dst_to", pa.string()),
        ("src_ts", pa.int64()),
        ("dst_ts", pa.int64()),
    ]
)
_WEIGHTED_SCHEMA = _EDGE_SCHEMA.append(pa.field("w", pa.float64()))


@dataclass(frozen=True, slots=True)
class TemporalEdge:
    src_txn: str
    dst_txn: str
    weight: float | None = None


@dataclass(frozen=True)
class TemporalGraphStore:
    root: Path
    window_days: int
    partitions: dict[tuple[date, date], str] = field(default_factory=dict)
    counts: dict[tuple[date, date], int] = field(default_factory=dict)
    first_day: date | None = None
    last_day: date | None = None
    ledger_hash: str = ""
    weighted: bool = False
    theta: float | None = None

    @property
    def kind(self) -> str:
        return "weighted-graph" if self.weighted else "temporal-graph"

    @property
    def n_edges(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def open(cls, root: str | Path, weighted: bool | None = None) -> "TemporalGraphStore":
        root = Path(root)
        raw = storage.load_manifest_any(root, ("temporal-graph", "weighted-graph"))
        if weighted is not None and (raw["kind"] == "weighted-graph") != weighted:
            want = "weighted-graph" if weighted else "temporal-graph"
            raise CorruptStoreError(f"{root} holds a '{raw['kind']}' store, expected '{want}'")
        parts, counts = {}, {}
        for p in raw["partitions"]:
            key = (date.fromisoformat(p["src_date"]), date.fromisoformat(p["dst_date"]))
            parts[key] = p["file"]
            counts[key] = p["edges"]
        return cls(
            root=root,
            window_days=raw["window_days"],
            partitions=parts,
            counts=counts,
            first_day=date.fromisoformat(raw["first_day"]) if raw["first_day"] else None,
            last_day=date.fromisoformat(raw["last_day"]) if raw["last_day"] else None,
            ledger_hash=raw.get("ledger_hash", ""),
            weighted=raw["kind"] == "weighted-graph",
            theta=raw.get("theta"),
        )

    def keys(self) -> list[tuple[date, date]]:
        return sorted(self.partitions)

    def read_partition(self, key: tuple[date, date], io_log: list[str] | None = None) -> pd.DataFrame:
        name = self.partitions[key]
        if io_log is not None:
            io_log.append(name)
        return _normalize_edges(storage.read_table(self.root / name).to_pandas(), self.weighted)

    def read_all(self) -> pd.DataFrame:
        return edges_in_window_frame(self, date.min, date.max)


def _partition_name(src: date, dst: date) -> str:
    return f"src={src.isoformat()}__dst={dst.isoformat()}.parquet"


def empty_edges(weighted: bool = False) -> pd.DataFrame:
    cols = EDGE_COLUMNS + (["w"] if weighted else [])
    return _normalize_edges(pd.DataFrame({c: [] for c in cols}), weighted)


def _normalize_edges(frame: pd.DataFrame, weighted: bool) -> pd.DataFrame:
    out = pd.DataFrame(
        {
            "src_txn": frame["src_txn"].astype(str).astype(object),
            "dst_txn": frame["dst_txn"].astype(str).astype(object),
            "src_from": frame["src_from"].astype(str).astype(object),
            "mid": frame["mid"].astype(str).astype(object),
            "dst_to": frame["dst_to"].astype(str).astype(object),
            "src_ts": frame["src_ts"].astype(np.int64),
            "dst_ts": frame["dst_ts"].astype(np.int64),
        }
    )
    if weighted:
        out["w"] = frame["w"].astype(np.float64)
    return out.reset_index(drop=True)


def write_edge_partition(root: Path, key: tuple[date, date], frame: pd.DataFrame, weighted: bool) -> str:
    frame = frame.sort_values(["src_ts", "src_txn", "dst_ts", "dst_txn"], kind="stable")
    schema = _WEIGHTED_SCHEMA if weighted else _EDGE_SCHEMA
    table = pa.Table.from_pandas(frame[schema.names], schema=schema, preserve_index=False)
    table = table.replace_schema_metadata({})
    name = _partition_name(*key)
    storage.write_table(root / name, table, "weighted-graph" if weighted else "temporal-graph")
    return name


def store_manifest(store: TemporalGraphStore) -> dict:
    return {
        "kind": store.kind,
        "version": storage.FORMAT_VERSION,
        "window_days": store.window_days,
        "first_day": store.first_day.isoformat() if store.first_day else None,
        "last_day": store.last_day.isoformat() if store.last_day else None,
        "ledger_hash": store.ledger_hash,
        "theta": store.theta,
        "partitions": [
            {
                "src_date": k[0].isoformat(),
                "dst_date": k[1].isoformat(),
                "file": store.partitions[k],
                "edges": store.counts[k],
            }
            for k in store.keys()
        ],
        "total_edges": store.n_edges,
    }


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def join_sequential(src: pd.DataFrame, dst: pd.DataFrame, window_seconds: int) -> pd.DataFrame:
    """All pairs (s in src, d in dst) with b_s == f_d and t_s < t_d < t_s + window."""
    if src.empty or dst.empty:
        return empty_edges()
    left = src[["id", "timestamp", "source", "target"]].rename(
        columns={"id": "src_txn", "timestamp": "src_ts", "source": "src_from", "target": "mid"}
    )
    right = dst[["id", "timestamp", "source", "target"]].rename(
        columns={"id": "dst_txn", "timestamp": "dst_ts", "source": "mid", "target": "dst_to"}
    )
    pairs = left.merge(right, on="mid", how="inner")
    ok = (pairs["src_ts"] < pairs["dst_ts"]) & (pairs["dst_ts"] < pairs["src_ts"] + window_seconds)
    return _normalize_edges(pairs[ok], weighted=False)


def _split_by_dst_day(edges: pd.DataFrame) -> dict[date, pd.DataFrame]:
    if edges.empty:
        return {}
    dn = edges["dst_ts"].to_numpy() // SECONDS_PER_DAY
    out = {}
    for d in np.unique(dn):
        out[date(1970, 1, 1) + timedelta(days=int(d))] = edges[dn == d]
    return out


def _check_window(window_days: int) -> None:
    if not isinstance(window_days, (int, np.integer)) or window_days < 1:
        raise ConfigError(f"look-ahead window must be a whole number of days >= 1, got {window_days!r}")


def _source_day_edges(
    ledger: PartitionedLedger,
    d: date,
    window_days: int,
    cache: dict[date, pd.DataFrame] | None = None,
) -> dict[date, pd.DataFrame]:
    def day(x: date) -> pd.DataFrame:
        if cache is None:
            return ledger.read_day(x)
        if x not in cache:
            cache[x] = ledger.read_day(x)
        return cache[x]

    src = day(d)
    targets = [d + timedelta(days=k) for k in range(window_days + 1)]
    dst_frames = [day(x) for x in targets if x in ledger.partitions]
    dst = pd.concat(dst_frames, ignore_index=True)
    return _split_by_dst_day(join_sequential(src, dst, window_days * SECONDS_PER_DAY))


def build_temporal_graph(
    ledger: PartitionedLedger, window_days: int, root: str | Path, workers: int = 1
) -> TemporalGraphStore:
    """Build the edge store for the whole ledger."""
    _check_window(window_days)
    root = Path(root)
    for d in ledger.days:
        if not (ledger.root / ledger.partitions[d]).exists():
            raise CorruptStoreError(f"ledger partition for {d} is listed but missing")
    storage.begin_write(root)
    parts: dict[tuple[date, date], str] = {}
    counts: dict[tuple[date, date], int] = {}

    def emit(d: date, by_dst: dict[date, pd.DataFrame]) -> None:
        for dd, frame in by_dst.items():
            parts[(d, dd)] = write_edge_partition(root, (d, dd), frame, weighted=False)
            counts[(d, dd)] = len(frame)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(lambda d: _source_day_edges(ledger, d, window_days), ledger.days)
            for d, by_dst in zip(ledger.days, results):
                emit(d, by_dst)
    else:
        cache: dict[date, pd.DataFrame] = {}
        for d in ledger.days:
            for old in [x for x in cache if x < d]:
                del cache[old]
            emit(d, _source_day_edges(ledger, d, window_days, cache))

    store = TemporalGraphStore(
        root=root,
        window_days=int(window_days),
        partitions=parts,
        counts=counts,
        first_day=ledger.first_day,
        last_day=ledger.last_day,
        ledger_hash=ledger.content_hash(),
    )
    storage.finish_write(root, store_manifest(store))
    logger.info("temporal graph: %d edges in %d partitions", store.n_edges, len(parts))
    return store


def append_batch(
    store: TemporalGraphStore,
    ledger: PartitionedLedger,
    day: date,
    transactions: pd.DataFrame,
) -> tuple[TemporalGraphStore, PartitionedLedger]:
    """Append one new day to both the ledger and the edge store.

    Only the new day is joined, as destination, against itself and the
    previous ``window_days`` source days.
    """
    if store.last_day is not None and day <= store.last_day:
        raise ConfigError(f"append of {day} is not after the last stored day {store.last_day}")
    ledger = append_day(ledger, day, transactions)
    new = ledger.read_day(day)
    w = store.window_days
    parts, counts = dict(store.partitions), dict(store.counts)
    storage.mark_incomplete(store.root)
    if len(new):
        for k in range(w, -1, -1):
            src_day = day - timedelta(days=k)
            if src_day not in ledger.partitions:
                continue
            edges = join_sequential(ledger.read_day(src_day), new, w * SECONDS_PER_DAY)
            if len(edges):
                parts[(src_day, day)] = write_edge_partition(store.root, (src_day, day), edges, False)
                counts[(src_day, day)] = len(edges)
    out = replace(
        store,
        partitions=parts,
        counts=counts,
        first_day=store.first_day or ledger.first_day,
        last_day=day,
        ledger_hash=ledger.content_hash(),
    )
    storage.finish_write(store.root, store_manifest(out))
    return out, ledger


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def edges_in_window_frame(
    store: TemporalGraphStore, start: date, end: date, io_log: list[str] | None = None
) -> pd.DataFrame:
    """Edges whose source and destination dates both fall in ``[start, end]``."""
    if start > end:
        raise ConfigError(f"window start {start} is after end {end}")
    keys = [k for k in store.keys() if k[0] >= start and k[1] <= end]
    if not keys:
        return empty_edges(store.weighted)
    return pd.concat([store.read_partition(k, io_log) for k in keys], ignore_index=True)


def edges_in_window(store: TemporalGraphStore, start: date, end: date) -> Iterator[TemporalEdge]:
    frame = edges_in_window_frame(store, start, end)
    if store.weighted:
        for s, d, w in frame[["src_txn", "dst_txn", "w"]].itertuples(index=False, name=None):
            yield TemporalEdge(s, d, float(w))
    else:
        for s, d in frame[["src_txn", "dst_txn"]].itertuples(index=False, name=None):
            yield TemporalEdge(s, d)


def window_day_range(store: TemporalGraphStore) -> tuple[date, date] | None:
    if store.first_day is None or store.last_day is None:
        return None
    return store.first_day, store.last_day

