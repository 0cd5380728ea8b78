"""
Motif-search baseline over the temporal graph.

Type-2 motifs ``1 -> [*] -> ... -> [*] -> 1``: every time-respecting path of
exactly ``hops`` transactions is enumerated by repeated edge joins, and paths
are grouped by the accounts sitting in the exactly-one layers (for type 2,
the dispense and sink accounts).  Each group is one flow; flows may share
transactions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import ConfigError
from .ledger import AccountSegment, Transaction
from .risk import CaseReport, RiskConfig, score

logger = logging.getLogger(__name__)

ONE = "1"
ANY = "*"
DEFAULT_MAX_HOPS = 6


@dataclass(frozen=True)
class MotifSpec:
    hops: int
    layers: tuple[str, ...] = ()
    max_hops: int = DEFAULT_MAX_HOPS

    def __post_init__(self):
        if self.hops < 2:
            raise ConfigError(f"motif hops must be >= 2, got {self.hops}")
        if self.hops > self.max_hops:
            raise ConfigError(f"motif hops {self.hops} exceeds the cap of {self.max_hops}")
        layers = self.layers or (ONE,) + (ANY,) * (self.hops - 1) + (ONE,)
        if len(layers) != self.hops + 1:
            raise ConfigError(f"{self.hops}-hop motif needs {self.hops + 1} layers, got {len(layers)}")
        if any(x not in (ONE, ANY) for x in layers):
            raise ConfigError(f"layer constraints must be '1' or '*', got {layers}")
        if layers[0] != ONE or layers[-1] != ONE:
            raise ConfigError("type-2 motifs need exactly-one first and last layers")
        object.__setattr__(self, "layers", tuple(layers))

    @classmethod
    def type2(cls, hops: int) -> "MotifSpec":
        return cls(hops)


@dataclass(frozen=True)
class MotifFlow:
    dispense: str
    sink: str
    transactions: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    hops: int
    n_paths: int
    key: tuple[str, ...] = ()


def enumerate_paths(edges: pd.DataFrame, hops: int) -> tuple[np.ndarray, pd.Index, np.ndarray, np.ndarray]:
    """All temporal paths of ``hops`` transactions as an integer matrix.

    Returns ``(paths, names, acct_from, acct_to)`` where ``paths[i, k]`` is the
    k-th transaction code of path ``i``, ``names`` decodes transaction codes,
    and ``acct_from``/``acct_to`` give account codes per transaction.
    """
    src_ids = edges["src_txn"].to_numpy(str)
    dst_ids = edges["dst_txn"].to_numpy(str)
    names = pd.Index(np.unique(np.concatenate([src_ids, dst_ids]))) if len(edges) else pd.Index([])
    n = len(names)
    s = names.get_indexer(src_ids)
    d = names.get_indexer(dst_ids)

    accounts = pd.Index(np.unique(np.concatenate([
        edges["src_from"].to_numpy(str), edges["mid"].to_numpy(str), edges["dst_to"].to_numpy(str)
    ]))) if len(edges) else pd.Index([])
    acct_from = np.full(n, -1, dtype=np.int64)
    acct_to = np.full(n, -1, dtype=np.int64)
    acct_from[s] = accounts.get_indexer(edges["src_from"].to_numpy(str))
    acct_to[s] = accounts.get_indexer(edges["mid"].to_numpy(str))
    acct_from[d] = accounts.get_indexer(edges["mid"].to_numpy(str))
    acct_to[d] = accounts.get_indexer(edges["dst_to"].to_numpy(str))

    if hops < 2 or len(edges) == 0:
        return np.zeros((0, hops), dtype=np.int64), names, acct_from, acct_to

    order = np.argsort(s, kind="stable")
    succ = d[order]
    start = np.searchsorted(s[order], np.arange(n + 1))
    outdeg = np.diff(start)

    paths = np.stack([s, d], axis=1)
    for _ in range(hops - 2):
        last = paths[:, -1]
        reps = outdeg[last]
        rows = np.repeat(np.arange(len(paths)), reps)
        if len(rows) == 0:
            return np.zeros((0, hops), dtype=np.int64), names, acct_from, acct_to
        offsets = np.arange(len(rows)) - np.repeat(np.cumsum(reps) - reps, reps)
        nxt = succ[start[last[rows]] + offsets]
        paths = np.concatenate([paths[rows], nxt[:, None]], axis=1)
    return paths, names, acct_from, acct_to


def _layer_accounts(paths: np.ndarray, acct_from: np.ndarray, acct_to: np.ndarray) -> np.ndarray:
    # layer 0 = sender of the first transaction, layer k = receiver of the k-th
    return np.concatenate([acct_from[paths[:, :1]], acct_to[paths]], axis=1)


def find_motif_flows(
    edges: pd.DataFrame,
    spec: MotifSpec,
    endpoint_filter: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> list[MotifFlow]:
    """Group every matching path by its exactly-one layers.

    ``endpoint_filter(dispense_names, sink_names) -> bool mask`` drops paths
    before grouping; see :func:`c1_endpoint_filter`.
    """
    paths, names, acct_from, acct_to = enumerate_paths(edges, spec.hops)
    if len(paths) == 0:
        return []
    layers = _layer_accounts(paths, acct_from, acct_to)
    fixed = [i for i, x in enumerate(spec.layers) if x == ONE]
    keys = layers[:, fixed]
    acct_names = _account_names(edges)
    if endpoint_filter is not None:
        keep = np.asarray(endpoint_filter(acct_names[layers[:, 0]], acct_names[layers[:, -1]]), dtype=bool)
        keys, paths = keys[keep], paths[keep]
        if len(paths) == 0:
            return []
    order = np.lexsort(keys.T[::-1])
    keys, paths = keys[order], paths[order]
    brk = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1)) + 1
    bounds = np.concatenate([[0], brk, [len(paths)]])

    txn_names = names.to_numpy()
    flows = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        grp = paths[lo:hi]
        members = np.unique(grp)
        pairs = np.unique(np.concatenate([grp[:, k:k + 2] for k in range(spec.hops - 1)]), axis=0)
        key = tuple(acct_names[keys[lo]])
        flows.append(
            MotifFlow(
                dispense=key[0],
                sink=key[-1],
                transactions=tuple(sorted(txn_names[members])),
                edges=tuple(sorted(zip(txn_names[pairs[:, 0]], txn_names[pairs[:, 1]]))),
                hops=spec.hops,
                n_paths=int(hi - lo),
                key=key,
            )
        )
    flows.sort(key=lambda f: f.key)
    return flows


def count_motif_flows(edges: pd.DataFrame, spec: MotifSpec) -> tuple[int, int]:
    """(number of flows, number of paths) without materialising the flows."""
    paths, _, acct_from, acct_to = enumerate_paths(edges, spec.hops)
    if len(paths) == 0:
        return 0, 0
    layers = _layer_accounts(paths, acct_from, acct_to)
    fixed = [i for i, x in enumerate(spec.layers) if x == ONE]
    return len(np.unique(layers[:, fixed], axis=0)), len(paths)


def _account_names(edges: pd.DataFrame) -> np.ndarray:
    return np.unique(np.concatenate([
        edges["src_from"].to_numpy(str), edges["mid"].to_numpy(str), edges["dst_to"].to_numpy(str)
    ]))


def c1_endpoint_filter(cfg: RiskConfig, segments: Mapping[str, AccountSegment]):
    """Mask of paths whose endpoints can pass C1.

    In a type-2 flow every path starts at the same dispense account and ends
    at the same sink account.  Transactions without an inbound flow edge are
    first hops, so the flow's dispense accounts are exactly that one account,
    and likewise for the sink.  C1 is therefore decided by the endpoint pair
    alone, whatever the quantifier, and flows failing it can never be flagged.
    """
    ok_d = np.array(sorted(a for a, s in segments.items() if s.segment in cfg.dispense_segments), dtype=str)
    ok_s = np.array(sorted(a for a, s in segments.items() if s.segment in cfg.sink_segments), dtype=str)

    def keep(dispense: np.ndarray, sink: np.ndarray) -> np.ndarray:
        return np.isin(dispense, ok_d) & np.isin(sink, ok_s)

    return keep


def score_motif_flows(
    flows: Iterable[MotifFlow],
    txns: Mapping[str, Transaction],
    cfg: RiskConfig,
    segments: Mapping[str, AccountSegment],
    short_circuit: bool = False,
) -> list[CaseReport]:
    """Score each flow exactly as a community would be scored."""
    return [
        score(i, f.transactions, f.edges, txns, cfg, segments, short_circuit=short_circuit)
        for i, f in enumerate(flows)
    ]
