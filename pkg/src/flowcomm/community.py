"""
Flow communities: size-capped Leiden over the pruned, weighted temporal graph,
run independently per analysis window.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import ConfigError, ConsistencyError
from .leiden import CPM, DEFAULT_RESTARTS, MODULARITY, LeidenResult, WeightedDigraph, leiden, quality_value
from .temporal import TemporalGraphStore, edges_in_window_frame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LeidenConfig:
    quality: str = MODULARITY
    resolution: float = 1.0
    max_comm_size: int = 150
    seed: int = 0
    max_iterations: int = 50
    restarts: int = DEFAULT_RESTARTS

    def __post_init__(self):
        if self.quality not in (MODULARITY, CPM):
            raise ConfigError(f"quality must be '{MODULARITY}' or '{CPM}', got {self.quality!r}")
        if not self.resolution > 0:
            raise ConfigError(f"resolution must be > 0, got {self.resolution}")
        if int(self.max_comm_size) < 1:
            raise ConfigError(f"max_comm_size must be >= 1, got {self.max_comm_size}")
        if int(self.max_iterations) < 1:
            raise ConfigError("max_iterations must be >= 1")
        if int(self.restarts) < 1:
            raise ConfigError("restarts must be >= 1")


@dataclass(frozen=True)
class FlowCommunity:
    community_id: int
    members: tuple[str, ...]
    edges: tuple[tuple[str, str, float], ...]
    window: tuple[date, date] | None = None

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class TransactionGraph:
    """A window's edge list mapped onto integer node ids."""

    nodes: pd.Index
    graph: WeightedDigraph
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray


def transaction_graph(edges: pd.DataFrame, weighted: bool = True) -> TransactionGraph:
    nodes = pd.Index(np.unique(np.concatenate([edges["src_txn"].to_numpy(str), edges["dst_txn"].to_numpy(str)])))
    src = nodes.get_indexer(edges["src_txn"].astype(str))
    dst = nodes.get_indexer(edges["dst_txn"].astype(str))
    if weighted:
        if "w" not in edges:
            raise ConfigError("weighted community detection needs a weighted graph")
        w = edges["w"].to_numpy(np.float64)
    else:
        w = np.ones(len(edges))
    return TransactionGraph(nodes, WeightedDigraph(len(nodes), src, dst, w), src, dst, w)


def _communities_from_membership(
    tg: TransactionGraph, membership: np.ndarray, window: tuple[date, date] | None
) -> list[FlowCommunity]:
    k = int(membership.max()) + 1 if len(membership) else 0
    members: list[list[str]] = [[] for _ in range(k)]
    for node, c in zip(tg.nodes.tolist(), membership.tolist()):
        members[c].append(node)
    edges: list[list[tuple[str, str, float]]] = [[] for _ in range(k)]
    names = tg.nodes.to_numpy()
    for s, d, w in zip(tg.src.tolist(), tg.dst.tolist(), tg.weight.tolist()):
        if membership[s] == membership[d]:
            edges[membership[s]].append((names[s], names[d], w))
    return [
        FlowCommunity(c, tuple(members[c]), tuple(sorted(edges[c])), window)
        for c in range(k)
    ]


def detect_communities(
    edges: pd.DataFrame,
    cfg: LeidenConfig,
    weighted: bool = True,
    window: tuple[date, date] | None = None,
) -> list[FlowCommunity]:
    """Partition the transactions touched by ``edges`` into flow communities.

    Community ids are ordered by each community's smallest transaction id.
    """
    if edges.empty:
        return []
    tg = transaction_graph(edges, weighted)
    res = run_leiden(tg, cfg)
    return _communities_from_membership(tg, res.membership, window)


def run_leiden(tg: TransactionGraph, cfg: LeidenConfig) -> LeidenResult:
    res = leiden(
        tg.graph,
        kind=cfg.quality,
        resolution=cfg.resolution,
        max_comm_size=cfg.max_comm_size,
        seed=cfg.seed,
        max_iterations=cfg.max_iterations,
        restarts=cfg.restarts,
    )
    if not res.converged:
        logger.warning("leiden hit max_iterations=%d before converging", cfg.max_iterations)
    return res


def quality(
    partition: Mapping[str, int] | Iterable[Iterable[str]],
    edges: pd.DataFrame,
    cfg: LeidenConfig,
    weighted: bool = True,
) -> float:
    """Quality of a transaction partition (dict txn->label or iterable of member sets)."""
    if edges.empty:
        return 0.0
    tg = transaction_graph(edges, weighted)
    if isinstance(partition, Mapping):
        labels = dict(partition)
    else:
        labels = {t: i for i, group in enumerate(partition) for t in group}
    missing = [t for t in tg.nodes if t not in labels]
    if missing:
        raise ConsistencyError(f"partition does not cover transaction {missing[0]!r}")
    membership = np.array([labels[t] for t in tg.nodes])
    return quality_value(tg.graph, membership, cfg.quality, cfg.resolution)


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def window_bounds(first: date, last: date, length_days: int, stride_days: int) -> list[tuple[date, date]]:
    if length_days < 1:
        raise ConfigError(f"window length must be >= 1 day, got {length_days}")
    if stride_days <= 0:
        raise ConfigError(f"stride must be > 0 days, got {stride_days}")
    out = []
    start = first
    while start <= last:
        out.append((start, start + timedelta(days=length_days - 1)))
        start += timedelta(days=stride_days)
    return out


def _detect_window(args) -> list[FlowCommunity]:
    store, bounds, cfg, weighted = args
    edges = edges_in_window_frame(store, *bounds)
    return detect_communities(edges, cfg, weighted, bounds)


def run_windows(
    store: TemporalGraphStore,
    length_days: int,
    stride_days: int,
    cfg: LeidenConfig,
    weighted: bool = True,
    workers: int = 1,
) -> list[tuple[int, tuple[date, date], list[FlowCommunity]]]:
    """One independent community detection per window."""
    if store.first_day is None:
        return []
    bounds = window_bounds(store.first_day, store.last_day, length_days, stride_days)
    jobs = [(store, b, cfg, weighted) for b in bounds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_detect_window, jobs))
    else:
        results = [_detect_window(j) for j in jobs]
    return [(i, b, comms) for i, (b, comms) in enumerate(zip(bounds, results))]


def write_communities(path: str | Path, windows: list[tuple[int, tuple[date, date], list[FlowCommunity]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_id", "community_id", "transaction_id"])
        for wid, _, comms in windows:
            for c in comms:
                for t in c.members:
                    w.writerow([wid, c.community_id, t])


def write_windows(path: str | Path, windows: list[tuple[int, tuple[date, date], list[FlowCommunity]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_id", "start", "end", "communities"])
        for wid, (s, e), comms in windows:
            w.writerow([wid, s.isoformat(), e.isoformat(), len(comms)])


def read_communities(
    path: str | Path, store: TemporalGraphStore, windows_path: str | Path | None = None
) -> list[tuple[int, tuple[date, date] | None, list[FlowCommunity]]]:
    """Rebuild communities (with their induced edges) from the delimited table."""
    table = pd.read_csv(path, dtype={"window_id": np.int64, "community_id": np.int64, "transaction_id": str},
                        keep_default_na=False)
    bounds: dict[int, tuple[date, date]] = {}
    if windows_path is not None and Path(windows_path).exists():
        wt = pd.read_csv(windows_path, dtype=str)
        for r in wt.itertuples(index=False):
            bounds[int(r.window_id)] = (date.fromisoformat(r.start), date.fromisoformat(r.end))
    out = []
    for wid, grp in table.groupby("window_id", sort=True):
        b = bounds.get(int(wid))
        edges = edges_in_window_frame(store, *b) if b else store.read_all()
        label = dict(zip(grp["transaction_id"], grp["community_id"]))
        per: dict[int, list[tuple[str, str, float]]] = {}
        ws = edges["w"].to_numpy() if "w" in edges else np.ones(len(edges))
        for s, d, w in zip(edges["src_txn"], edges["dst_txn"], ws):
            cs = label.get(s)
            if cs is not None and cs == label.get(d):
                per.setdefault(cs, []).append((s, d, float(w)))
        comms = [
            FlowCommunity(int(cid), tuple(sorted(g["transaction_id"])), tuple(sorted(per.get(int(cid), []))), b)
            for cid, g in grp.groupby("community_id", sort=True)
        ]
        out.append((int(wid), b, comms))
    return out
