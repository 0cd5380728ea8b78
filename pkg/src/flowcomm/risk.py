"""
Risk scoring for flow communities.

Dispense and sink roles are assigned at transaction level on the community's
own edges (no inbound edge -> dispense, no outbound edge -> sink) and then
projected onto accounts.  The temporal max flow routes money from dispense
to sink transactions over the community's time-respecting edges, with each
transaction's amount as a node capacity.

A community is flagged when all three criteria hold:

C1  dispense and sink accounts fall in configured segments;
C2  sunk / dispensed amount lies in a configured range;
C3  temporal max flow exceeds a configured threshold.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx

from .errors import ConfigError
from .ledger import AccountSegment, Transaction

logger = logging.getLogger(__name__)

_SOURCE = ("__source__",)
_SINK = ("__sink__",)


@dataclass(frozen=True)
class RiskConfig:
    dispense_segments: frozenset[str] = frozenset()
    sink_segments: frozenset[str] = frozenset()
    sunk_pct_range: tuple[float, float] = (0.0, 1.0)
    max_flow_threshold: int = 0
    c1_quantifier: str = "all"
    exclude_overlap: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dispense_segments", frozenset(self.dispense_segments))
        object.__setattr__(self, "sink_segments", frozenset(self.sink_segments))
        lo, hi = self.sunk_pct_range
        object.__setattr__(self, "sunk_pct_range", (float(lo), float(hi)))
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"sunk_pct_range must satisfy 0 <= low <= high <= 1, got {self.sunk_pct_range}")
        if self.max_flow_threshold < 0:
            raise ConfigError("max_flow_threshold must be >= 0")
        if self.c1_quantifier not in ("all", "any"):
            raise ConfigError(f"c1_quantifier must be 'all' or 'any', got {self.c1_quantifier!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RiskConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown risk config field(s): {sorted(unknown)}")
        d = dict(d)
        if "sunk_pct_range" in d:
            d["sunk_pct_range"] = tuple(d["sunk_pct_range"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "dispense_segments": sorted(self.dispense_segments),
            "sink_segments": sorted(self.sink_segments),
            "sunk_pct_range": list(self.sunk_pct_range),
            "max_flow_threshold": self.max_flow_threshold,
            "c1_quantifier": self.c1_quantifier,
            "exclude_overlap": self.exclude_overlap,
        }


@dataclass(frozen=True)
class FlowTopology:
    dispense_txns: tuple[str, ...]
    sink_txns: tuple[str, ...]
    dispense_accounts: tuple[str, ...]
    sink_accounts: tuple[str, ...]
    intermediate_accounts: tuple[str, ...]
    diameter: int
    dispensed_total: int
    sunk_total: int

    @property
    def accounts(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.dispense_accounts) | set(self.sink_accounts) | set(self.intermediate_accounts)))


@dataclass(frozen=True)
class CaseReport:
    community_id: int
    n_transactions: int
    topology: FlowTopology
    max_flow_value: int | None
    sunk_pct: float | None
    c1: bool
    c2: bool
    c3: bool
    window_id: int | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def flagged(self) -> bool:
        return self.c1 and self.c2 and self.c3

    @property
    def flagged_accounts(self) -> tuple[str, ...]:
        return self.topology.accounts if self.flagged else ()


def derive_topology(
    members: Iterable[str],
    edges: Iterable[tuple],
    txns: Mapping[str, Transaction],
) -> FlowTopology:
    """Dispense/sink/intermediate roles, diameter and totals for one flow."""
    members = sorted(members)
    if not members:
        raise ConfigError("cannot derive topology of an empty community")
    succ: dict[str, list[str]] = {t: [] for t in members}
    has_in: set[str] = set()
    for e in edges:
        s, d = e[0], e[1]
        succ[s].append(d)
        has_in.add(d)
    dispense = [t for t in members if t not in has_in]
    sink = [t for t in members if not succ[t]]
    rows = {t: txns[t] for t in members}
    d_acc = sorted({rows[t].source for t in dispense})
    s_acc = sorted({rows[t].target for t in sink})
    everyone = {rows[t].source for t in members} | {rows[t].target for t in members}
    inter = sorted(everyone - set(d_acc) - set(s_acc))
    return FlowTopology(
        dispense_txns=tuple(dispense),
        sink_txns=tuple(sink),
        dispense_accounts=tuple(d_acc),
        sink_accounts=tuple(s_acc),
        intermediate_accounts=tuple(inter),
        diameter=_diameter(members, succ),
        dispensed_total=sum(rows[t].amount for t in dispense),
        sunk_total=sum(rows[t].amount for t in sink),
    )


def _diameter(nodes: list[str], succ: dict[str, list[str]]) -> int:
    # longest shortest path (in edges) over the transaction DAG
    best = 0
    for start in nodes:
        dist = {start: 0}
        q = deque([start])
        while q:
            u = q.popleft()
            for v in succ[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        best = max(best, max(dist.values()))
    return best


def flow_network(
    members: Iterable[str],
    edges: Iterable[tuple],
    txns: Mapping[str, Transaction],
    topology: FlowTopology,
) -> nx.DiGraph:
    """Node-split network: t_in -> t_out carries the amount, everything else is uncapped."""
    g = nx.DiGraph()
    for t in members:
        g.add_edge((t, "in"), (t, "out"), capacity=txns[t].amount)
    for e in edges:
        g.add_edge((e[0], "out"), (e[1], "in"))
    for t in topology.dispense_txns:
        g.add_edge(_SOURCE, (t, "in"))
    for t in topology.sink_txns:
        g.add_edge((t, "out"), _SINK)
    return g


def temporal_max_flow(
    members: Iterable[str],
    edges: Iterable[tuple],
    txns: Mapping[str, Transaction],
    topology: FlowTopology | None = None,
) -> int:
    members = list(members)
    edges = list(edges)
    topology = topology or derive_topology(members, edges, txns)
    if not topology.dispense_txns or not topology.sink_txns:
        return 0
    g = flow_network(members, edges, txns, topology)
    return int(nx.maximum_flow_value(g, _SOURCE, _SINK))


def _c1(accounts: Iterable[str], allowed: frozenset[str], segments, quantifier, warnings) -> bool:
    hits = []
    for a in accounts:
        seg = segments.get(a)
        if seg is None:
            warnings.append(f"account {a} missing from segment table")
            hits.append(False)
        else:
            hits.append(seg.segment in allowed)
    if not hits:
        return False
    return all(hits) if quantifier == "all" else any(hits)


def score(
    community_id: int,
    members: Iterable[str],
    edges: Iterable[tuple],
    txns: Mapping[str, Transaction],
    cfg: RiskConfig,
    segments: Mapping[str, AccountSegment],
    topology: FlowTopology | None = None,
    window_id: int | None = None,
    short_circuit: bool = False,
) -> CaseReport:
    """Evaluate C1-C3 for one flow.

    With ``short_circuit`` the max flow is skipped once C1 or C2 has failed;
    ``max_flow_value`` is then ``None`` and C3 reads False.
    """
    members = sorted(members)
    edges = list(edges)
    topo = topology or derive_topology(members, edges, txns)
    warnings: list[str] = []

    c1 = _c1(topo.dispense_accounts, cfg.dispense_segments, segments, cfg.c1_quantifier, warnings)
    c1 = _c1(topo.sink_accounts, cfg.sink_segments, segments, cfg.c1_quantifier, warnings) and c1

    dispensed, sunk = topo.dispensed_total, topo.sunk_total
    if cfg.exclude_overlap:
        both = set(topo.dispense_accounts) & set(topo.sink_accounts)
        if both:
            dispensed = sum(txns[t].amount for t in topo.dispense_txns if txns[t].source not in both)
            sunk = sum(txns[t].amount for t in topo.sink_txns if txns[t].target not in both)
    if dispensed > 0:
        pct = sunk / dispensed
        lo, hi = cfg.sunk_pct_range
        c2 = lo <= pct <= hi
    else:
        pct = None
        c2 = False
        warnings.append("dispensed total is zero; sunk percentage undefined")

    if short_circuit and not (c1 and c2):
        flow = None
        c3 = False
    else:
        flow = temporal_max_flow(members, edges, txns, topo)
        c3 = flow > cfg.max_flow_threshold
    return CaseReport(
        community_id=community_id,
        n_transactions=len(members),
        topology=topo,
        max_flow_value=flow,
        sunk_pct=pct,
        c1=c1,
        c2=c2,
        c3=c3,
        window_id=window_id,
        warnings=tuple(warnings),
    )


AUDIT_COLUMNS = [
    "window_id", "community_id", "n_transactions", "n_dispense", "n_sink", "n_intermediate",
    "diameter", "dispensed_total", "sunk_total", "sunk_pct", "max_flow", "c1", "c2", "c3",
    "flagged", "warnings",
]
CASE_COLUMNS = ["window_id", "community_id", "n_transactions", "max_flow", "sunk_pct",
                "dispense_accounts", "sink_accounts", "accounts"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_audit(path: str | Path, reports: Iterable[CaseReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AUDIT_COLUMNS)
        for r in reports:
            t = r.topology
            w.writerow([
                _fmt(r.window_id), r.community_id, r.n_transactions, len(t.dispense_accounts),
                len(t.sink_accounts), len(t.intermediate_accounts), t.diameter, t.dispensed_total,
                t.sunk_total, _fmt(r.sunk_pct), _fmt(r.max_flow_value), int(r.c1), int(r.c2),
                int(r.c3), int(r.flagged), " | ".join(sorted(set(r.warnings))),
            ])


def write_cases(path: str | Path, reports: Iterable[CaseReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CASE_COLUMNS)
        for r in reports:
            if not r.flagged:
                continue
            t = r.topology
            w.writerow([
                _fmt(r.window_id), r.community_id, r.n_transactions, _fmt(r.max_flow_value),
                _fmt(r.sunk_pct), ";".join(t.dispense_accounts), ";".join(t.sink_accounts),
                ";".join(t.accounts),
            ])


def transaction_map(frame) -> dict[str, Transaction]:
    """id -> Transaction for a ledger frame."""
    return {
        r[0]: Transaction(r[0], int(r[1]), r[2], r[3], int(r[4]))
        for r in frame[["id", "timestamp", "source", "target", "amount"]].itertuples(index=False, name=None)
    }


def score_community(
    community,
    txns: Mapping[str, Transaction],
    cfg: RiskConfig,
    segments: Mapping[str, AccountSegment],
    window_id: int | None = None,
    short_circuit: bool = False,
) -> CaseReport:
    return score(
        community.community_id,
        community.members,
        community.edges,
        txns,
        cfg,
        segments,
        window_id=window_id,
        short_circuit=short_circuit,
    )


def load_risk_config(path: str | Path) -> RiskConfig:
    import yaml

    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return RiskConfig.from_dict(raw.get("risk", raw))
