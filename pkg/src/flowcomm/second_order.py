"""
Second-order co-occurrence weights.

A node of the second-order graph is an account pair ``A->B``; an edge
``(A->B) ~ (B->C)`` is realised once for every temporal edge whose source
transaction is A->B and whose destination transaction is B->C.  For each
such edge::

    p_src = count(A->B ~ B->C) / sum_X count(A->B ~ B->X)
    p_dst = count(A->B ~ B->C) / sum_X count(X->B ~ B->C)
    w     = max(p_src, p_dst)

Counts are integer multiplicities of temporal edges; the only floating-point
operation is the final division.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from . import storage
from .errors import ConfigError, ConsistencyError
from .temporal import TemporalGraphStore, store_manifest, write_edge_partition

logger = logging.getLogger(__name__)

S_COLUMNS = ["from1", "to1", "from2", "to2", "count", "p_src", "p_dst", "w"]
_KEY = ["from1", "to1", "to2"]


@dataclass(frozen=True, slots=True)
class SecondOrderNode:
    from_account: str
    to_account: str


@dataclass(frozen=True, slots=True)
class SecondOrderEdge:
    src: SecondOrderNode
    dst: SecondOrderNode
    count: int
    p_src: float
    p_dst: float
    w: float


@dataclass(frozen=True)
class PruneReport:
    theta: float
    edges_before: int
    edges_after: int
    transactions_before: int
    transactions_after: int

    def as_rows(self) -> list[dict]:
        return [
            {"stage": "T created", "transactions": self.transactions_before, "edges": self.edges_before},
            {"stage": "weak edges removed", "transactions": self.transactions_after, "edges": self.edges_after},
        ]


def count_adjacencies(edges: pd.DataFrame) -> pd.DataFrame:
    """Group temporal edges by the account triple (A, B, C) they realise."""
    if edges.empty:
        return pd.DataFrame(
            {"from1": pd.Series([], dtype=object), "to1": pd.Series([], dtype=object),
             "to2": pd.Series([], dtype=object), "count": pd.Series([], dtype=np.int64)}
        )
    g = edges.groupby(["src_from", "mid", "dst_to"], sort=False).size()
    out = g.reset_index(name="count")
    out.columns = ["from1", "to1", "to2", "count"]
    return out


def _merge_counts(parts: Iterable[pd.DataFrame]) -> pd.DataFrame:
    parts = [p for p in parts if len(p)]
    if not parts:
        return count_adjacencies(pd.DataFrame())
    allc = pd.concat(parts, ignore_index=True)
    return allc.groupby(_KEY, sort=True)["count"].sum().reset_index()


def derive_second_order(graph: TemporalGraphStore | pd.DataFrame) -> pd.DataFrame:
    """Aggregated second-order adjacencies with their occurrence counts.

    Accepts an edge store (aggregated partition by partition) or an
    in-memory edge frame.
    """
    if isinstance(graph, pd.DataFrame):
        counts = _merge_counts([count_adjacencies(graph)])
    else:
        counts = _merge_counts(count_adjacencies(graph.read_partition(k)) for k in graph.keys())
    counts["from2"] = counts["to1"]
    counts["count"] = counts["count"].astype(np.int64)
    return counts[["from1", "to1", "from2", "to2", "count"]].sort_values(_KEY).reset_index(drop=True)


def compute_weights(s: pd.DataFrame) -> pd.DataFrame:
    out = s[["from1", "to1", "from2", "to2", "count"]].copy()
    if out.empty:
        for c in ("p_src", "p_dst", "w"):
            out[c] = pd.Series([], dtype=np.float64)
        return out
    src_den = out.groupby(["from1", "to1"])["count"].transform("sum").to_numpy(np.int64)
    dst_den = out.groupby(["from2", "to2"])["count"].transform("sum").to_numpy(np.int64)
    num = out["count"].to_numpy(np.int64)
    out["p_src"] = num / src_den
    out["p_dst"] = num / dst_den
    out["w"] = np.maximum(out["p_src"].to_numpy(), out["p_dst"].to_numpy())
    return out


def iter_second_order_edges(s: pd.DataFrame):
    for r in s[S_COLUMNS].itertuples(index=False):
        yield SecondOrderEdge(
            SecondOrderNode(r.from1, r.to1),
            SecondOrderNode(r.from2, r.to2),
            int(r.count),
            float(r.p_src),
            float(r.p_dst),
            float(r.w),
        )


def write_second_order(path: str | Path, s: pd.DataFrame) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(S_COLUMNS)
        for r in s[S_COLUMNS].itertuples(index=False, name=None):
            w.writerow([r[0], r[1], r[2], r[3], int(r[4]), repr(float(r[5])), repr(float(r[6])), repr(float(r[7]))])


def read_second_order(path: str | Path) -> pd.DataFrame:
    s = pd.read_csv(
        path,
        dtype={"from1": str, "to1": str, "from2": str, "to2": str, "count": np.int64},
        float_precision="round_trip",
        keep_default_na=False,
    )
    return s[S_COLUMNS]


def lookup_weights(edges: pd.DataFrame, s: pd.DataFrame) -> np.ndarray:
    """Weight of each temporal edge; raises if any edge has no second-order entry."""
    if edges.empty:
        return np.zeros(0)
    key = s[["from1", "to1", "to2", "w"]].rename(
        columns={"from1": "src_from", "to1": "mid", "to2": "dst_to"}
    )
    merged = edges[["src_from", "mid", "dst_to"]].merge(key, on=["src_from", "mid", "dst_to"], how="left")
    w = merged["w"].to_numpy(np.float64)
    if np.isnan(w).any():
        bad = edges[np.isnan(w)].iloc[0]
        raise ConsistencyError(
            f"no co-occurrence weight for edge {bad['src_txn']} -> {bad['dst_txn']}"
            f" ({bad['src_from']}->{bad['mid']}->{bad['dst_to']})"
        )
    return w


def apply_weights(store: TemporalGraphStore, s: pd.DataFrame, root: str | Path) -> TemporalGraphStore:
    """Copy ``store`` to ``root`` with every edge stamped with its weight."""
    root = Path(root)
    storage.begin_write(root)
    parts, counts = {}, {}
    for k in store.keys():
        edges = store.read_partition(k)
        edges["w"] = lookup_weights(edges, s)
        parts[k] = write_edge_partition(root, k, edges, weighted=True)
        counts[k] = len(edges)
    out = replace(store, root=root, partitions=parts, counts=counts, weighted=True, theta=0.0)
    storage.finish_write(root, store_manifest(out))
    return out


def _touched(edges: pd.DataFrame) -> set[str]:
    return set(edges["src_txn"]).union(edges["dst_txn"])


def prune_weak_edges(
    store: TemporalGraphStore, theta: float, root: str | Path
) -> tuple[TemporalGraphStore, PruneReport]:
    """Drop edges with ``w < theta``.  Transactions left without edges vanish with them."""
    if not store.weighted:
        raise ConfigError("prune needs a weighted graph; run apply_weights first")
    if not 0.0 <= theta <= 1.0:
        raise ConfigError(f"theta must be in [0, 1], got {theta}")
    root = Path(root)
    storage.begin_write(root)
    parts, counts = {}, {}
    before_tx: set[str] = set()
    after_tx: set[str] = set()
    before = after = 0
    for k in store.keys():
        edges = store.read_partition(k)
        before += len(edges)
        before_tx |= _touched(edges)
        kept = edges[edges["w"] >= theta]
        if len(kept):
            after += len(kept)
            after_tx |= _touched(kept)
            parts[k] = write_edge_partition(root, k, kept, weighted=True)
            counts[k] = len(kept)
    out = replace(store, root=root, partitions=parts, counts=counts, theta=float(theta))
    storage.finish_write(root, store_manifest(out))
    report = PruneReport(float(theta), before, after, len(before_tx), len(after_tx))
    logger.info("pruned at theta=%g: %d -> %d edges", theta, before, after)
    return out, report


class CooccurrenceCounts:
    """Running second-order counts for batch appends.

    ``add`` costs O(new edges); weights read the current totals, so a batch
    can be weighted without touching earlier partitions.
    """

    def __init__(self) -> None:
        self.count: dict[tuple[str, str, str], int] = defaultdict(int)
        self.out_sum: dict[tuple[str, str], int] = defaultdict(int)
        self.in_sum: dict[tuple[str, str], int] = defaultdict(int)

    def add(self, edges: pd.DataFrame) -> None:
        c = count_adjacencies(edges)
        for a, b, cc, n in c.itertuples(index=False, name=None):
            self.count[(a, b, cc)] += n
            self.out_sum[(a, b)] += n
            self.in_sum[(b, cc)] += n

    def weights(self, edges: pd.DataFrame) -> np.ndarray:
        out = np.empty(len(edges))
        for i, (a, b, c) in enumerate(edges[["src_from", "mid", "dst_to"]].itertuples(index=False, name=None)):
            n = self.count.get((a, b, c), 0)
            if n == 0:
                raise ConsistencyError(f"no co-occurrence count for {a}->{b}->{c}")
            out[i] = max(n / self.out_sum[(a, b)], n / self.in_sum[(b, c)])
        return out

    def frame(self) -> pd.DataFrame:
        rows = [(a, b, b, c, n) for (a, b, c), n in self.count.items()]
        s = pd.DataFrame(rows, columns=["from1", "to1", "from2", "to2", "count"])
        s["count"] = s["count"].astype(np.int64)
        return compute_weights(s.sort_values(_KEY).reset_index(drop=True))
