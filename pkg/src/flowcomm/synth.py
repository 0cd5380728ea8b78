"""
Synthetic multi-bank ledgers with injected, labelled laundering typologies.

Background traffic is invented noise: account activity is heavy-tailed
(Pareto weights), amounts are log-normal, timestamps are uniform over each
day.  Injected typologies are layered account graphs whose transactions are
scheduled layer by layer so that every consecutive pair is a sequential
transaction pair under the configured look-ahead window.

Typology kinds:

simple-chain            D -> I1 -> ... -> S, one path
advanced-multipath      several dispense, two intermediate layers, several sinks
complex-varying-length  paths of different lengths from D to S that merge on a shared tail
smurfing                D splits into small payments to mules, a collector gathers them and pays S
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import ConfigError
from .ledger import AccountSegment, SECONDS_PER_DAY, day_start, normalize_frame, write_ledger_csv, write_segments
from .risk import CaseReport, RiskConfig

logger = logging.getLogger(__name__)

KINDS = ("simple-chain", "advanced-multipath", "complex-varying-length", "smurfing")
DISPENSE, INTERMEDIATE, SINK = "dispense", "intermediate", "sink"
# where dispense/sink accounts come from: new accounts with no other traffic,
# the busiest background accounts, or any background account
POOLS = ("fresh", "hub", "background")


@dataclass(frozen=True)
class BackgroundConfig:
    n_accounts: int = 4000
    n_days: int = 21
    start: date = date(2023, 1, 2)
    transactions_per_day: int = 1000
    n_banks: int = 5
    activity_shape: float = 1.2
    amount_median: int = 8_000
    amount_sigma: float = 1.0
    segment_mix: tuple[tuple[str, float], ...] = (
        ("retail", 0.86),
        ("business", 0.11),
        ("high-risk", 0.02),
        ("cash-intensive", 0.01),
    )


@dataclass(frozen=True)
class TypologyTemplate:
    kind: str
    count: int = 1
    n_dispense: int = 1
    n_sink: int = 1
    width: int = 3
    length: int = 3
    path_lengths: tuple[int, ...] = (2, 3, 4)
    amount_range: tuple[int, int] = (3_000_000, 12_000_000)
    delay_hours: tuple[float, float] = (1.0, 12.0)
    jitter_hours: float = 4.0
    fee_range: tuple[float, float] = (0.0, 0.03)
    rounds: int = 1
    round_gap_days: float = 3.0
    dispense_pool: str = "fresh"
    sink_pool: str = "hub"
    hub_fraction: float = 0.005
    dispense_segment: str = "high-risk"
    sink_segment: str = "cash-intensive"
    intermediate_segment: str = "retail"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown typology kind {self.kind!r}; expected one of {KINDS}")
        if self.count < 0 or self.rounds < 1:
            raise ConfigError("count must be >= 0 and rounds >= 1")
        if self.length < 1 or min(self.path_lengths) < 2 or self.width < 1:
            raise ConfigError("length >= 1, path lengths >= 2 and width >= 1 required")
        for pool in (self.dispense_pool, self.sink_pool):
            if pool not in POOLS:
                raise ConfigError(f"account pool must be one of {POOLS}, got {pool!r}")
        if not 0.0 < self.hub_fraction <= 1.0:
            raise ConfigError("hub_fraction must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TypologyTemplate":
        d = dict(d)
        for k in ("path_lengths", "amount_range", "delay_hours", "fee_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SynthResult:
    ledger: pd.DataFrame
    segments: dict[str, AccountSegment]
    labels: pd.DataFrame
    files: dict[str, Path] = field(default_factory=dict)

    @property
    def labeled_accounts(self) -> set[str]:
        return set(self.labels["account"])


# ---------------------------------------------------------------------------
# Typology structure
# ---------------------------------------------------------------------------


def _structure(t: TypologyTemplate, rng: np.random.Generator):
    """Account roles and layered edges ``(layer, sender_slot, receiver_slot)``."""
    roles: list[str] = []

    def new(role: str) -> int:
        roles.append(role)
        return len(roles) - 1

    edges: list[tuple[int, int, int]] = []
    if t.kind == "simple-chain":
        chain = [new(DISPENSE)] + [new(INTERMEDIATE) for _ in range(t.length - 1)] + [new(SINK)]
        edges = [(k, chain[k], chain[k + 1]) for k in range(t.length)]
    elif t.kind == "smurfing":
        # many small payments to mules, consolidated by a collector that cashes out
        d, c, s = new(DISPENSE), new(INTERMEDIATE), new(SINK)
        mules = [new(INTERMEDIATE) for _ in range(t.width)]
        edges = [(0, d, m) for m in mules] + [(1, m, c) for m in mules] + [(2, c, s)]
    elif t.kind == "advanced-multipath":
        ds = [new(DISPENSE) for _ in range(t.n_dispense)]
        l1 = [new(INTERMEDIATE) for _ in range(t.width)]
        l2 = [new(INTERMEDIATE) for _ in range(t.width)]
        ss = [new(SINK) for _ in range(t.n_sink)]
        edges = [(0, d, m) for d in ds for m in l1]
        for j, m in enumerate(l1):
            edges.append((1, m, l2[j]))
            if t.width > 1:
                edges.append((1, m, l2[(j + 1) % t.width]))
        edges += [(2, m, s) for m in l2 for s in ss]
    elif t.kind == "complex-varying-length":
        # a backbone of the longest length; shorter paths are direct payments
        # from a dispense account into a later backbone account, so paths of
        # every requested length share their tails
        longest = max(t.path_lengths)
        ds = [new(DISPENSE) for _ in range(t.n_dispense)]
        backbone = [new(INTERMEDIATE) for _ in range(longest - 1)] + [new(SINK)]
        edges = [(k + 1, backbone[k], backbone[k + 1]) for k in range(longest - 1)]
        for d in ds:
            edges.append((0, d, backbone[0]))
            for length in sorted(set(t.path_lengths) - {longest}):
                k = longest - length  # entry point leaves length - 1 hops to the sink
                edges.append((k, d, backbone[k]))
    return roles, edges


def _schedule(t, edges, n_slots, t0, rng) -> list[tuple[int, int, int, int]]:
    """Timestamps and amounts for one round: rows (sender, receiver, ts, amount)."""
    n_layers = max(e[0] for e in edges) + 1
    layer_start = [t0]
    for _ in range(n_layers - 1):
        gap = t.jitter_hours + rng.uniform(*t.delay_hours)
        layer_start.append(layer_start[-1] + int(gap * 3600))

    inflow = np.zeros(n_slots)
    out_edges: dict[int, list[int]] = {}
    for i, (_, a, _) in enumerate(edges):
        out_edges.setdefault(a, []).append(i)
    has_in = {b for _, _, b in edges}
    for a in out_edges:
        if a not in has_in:
            inflow[a] = rng.integers(*t.amount_range)

    rows = []
    for layer in range(n_layers):
        for i, (l, a, b) in enumerate(edges):
            if l != layer:
                continue
            outs = out_edges[a]
            share = rng.dirichlet(np.full(len(outs), 8.0))[outs.index(i)] if len(outs) > 1 else 1.0
            fee = rng.uniform(*t.fee_range) if a in has_in else 0.0
            amount = int(round(inflow[a] * (1.0 - fee) * share))
            ts = layer_start[layer] + int(rng.uniform(0, t.jitter_hours * 3600))
            rows.append((a, b, ts, max(amount, 1), i))
        for a_, b_, _, amt, _ in [r for r in rows if edges[r[4]][0] == layer]:
            inflow[b_] += amt
    return [(a, b, ts, amt) for a, b, ts, amt, _ in rows]


def _span_seconds(t: TypologyTemplate, n_layers: int) -> int:
    per_layer = t.jitter_hours + t.delay_hours[1]
    return int((per_layer * n_layers + (t.rounds - 1) * t.round_gap_days * 24) * 3600)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _background(cfg: BackgroundConfig, rng: np.random.Generator):
    accounts = [f"A{i:06d}" for i in range(cfg.n_accounts)]
    activity = rng.pareto(cfg.activity_shape, cfg.n_accounts) + 1.0
    p = activity / activity.sum()
    n = cfg.n_days * cfg.transactions_per_day
    src = rng.choice(cfg.n_accounts, size=n, p=p)
    dst = rng.choice(cfg.n_accounts, size=n, p=p)
    clash = src == dst
    while clash.any():
        dst[clash] = rng.choice(cfg.n_accounts, size=int(clash.sum()), p=p)
        clash = src == dst
    day0 = day_start(cfg.start)
    day = np.repeat(np.arange(cfg.n_days), cfg.transactions_per_day)
    ts = day0 + day * SECONDS_PER_DAY + rng.integers(0, SECONDS_PER_DAY, size=n)
    amount = np.maximum(1, np.round(rng.lognormal(np.log(cfg.amount_median), cfg.amount_sigma, n))).astype(np.int64)
    names, weights = zip(*cfg.segment_mix)
    weights = np.asarray(weights) / np.sum(weights)
    seg_idx = rng.choice(len(names), size=cfg.n_accounts, p=weights)
    bank_idx = rng.integers(0, cfg.n_banks, size=cfg.n_accounts)
    segments = {
        a: AccountSegment(a, names[s], f"bank{b}") for a, s, b in zip(accounts, seg_idx, bank_idx)
    }
    frame = pd.DataFrame(
        {
            "timestamp": ts.astype(np.int64),
            "source": np.asarray(accounts, dtype=object)[src],
            "target": np.asarray(accounts, dtype=object)[dst],
            "amount": amount,
        }
    )
    return accounts, activity, frame, segments


def generate(
    background: BackgroundConfig,
    injections: Iterable[TypologyTemplate] = (),
    seed: int = 0,
    out_dir: str | Path | None = None,
    window_days: int = 7,
) -> SynthResult:
    """Background traffic plus injected typology instances, deterministic in ``seed``."""
    injections = list(injections)
    rng = np.random.default_rng(seed)
    window_h = window_days * 24
    for t in injections:
        if 2 * t.jitter_hours + t.delay_hours[1] >= window_h:
            raise ConfigError(
                f"{t.kind}: delays up to {2 * t.jitter_hours + t.delay_hours[1]}h do not fit a {window_h}h window"
            )

    accounts, activity, bg, segments = _background(background, rng)
    bg["instance"] = -1
    bg["role_src"] = ""
    bg["role_dst"] = ""

    plans = []
    injected_accounts = 0
    for t in injections:
        for _ in range(t.count):
            roles, edges = _structure(t, rng)
            plans.append((t, roles, edges))
            injected_accounts += len(roles)
    if injected_accounts and background.n_accounts < 10 * injected_accounts:
        raise ConfigError(
            f"background has {background.n_accounts} accounts; needs >= 10x the {injected_accounts} injected ones"
        )

    by_activity = np.argsort(-activity, kind="stable")
    taken: set[int] = set()

    def draw(pool: str, hub_fraction: float) -> int | None:
        if pool == "fresh":
            return None
        cand = by_activity[: max(1, int(hub_fraction * background.n_accounts))] if pool == "hub" else by_activity
        free = [int(k) for k in cand if int(k) not in taken]
        if not free:
            raise ConfigError(f"no free background accounts left in the '{pool}' pool")
        k = free[int(rng.integers(len(free)))]
        taken.add(k)
        return k

    rows = []
    next_mule = 0
    bank_cycle = 0
    for inst, (t, roles, edges) in enumerate(plans):
        names = []
        for role in roles:
            pool = {DISPENSE: t.dispense_pool, SINK: t.sink_pool}.get(role, "fresh")
            k = draw(pool, t.hub_fraction)
            if k is None:
                acct = f"M{next_mule:06d}"
                next_mule += 1
            else:
                acct = accounts[k]
            seg = {DISPENSE: t.dispense_segment, SINK: t.sink_segment}.get(role, t.intermediate_segment)
            segments[acct] = AccountSegment(acct, seg, f"bank{bank_cycle % background.n_banks}")
            bank_cycle += 1
            names.append(acct)

        n_layers = max(e[0] for e in edges) + 1
        span = _span_seconds(t, n_layers)
        horizon = background.n_days * SECONDS_PER_DAY - span
        if horizon <= 0:
            raise ConfigError(f"{t.kind}: typology spans longer than the {background.n_days}-day ledger")
        t0 = day_start(background.start) + int(rng.integers(0, horizon))
        for r in range(t.rounds):
            start = t0 + int(r * t.round_gap_days * SECONDS_PER_DAY)
            for a, b, ts, amt in _schedule(t, edges, len(roles), start, rng):
                rows.append((ts, names[a], names[b], amt, inst, roles[a], roles[b]))

    inj = pd.DataFrame(rows, columns=["timestamp", "source", "target", "amount", "instance", "role_src", "role_dst"])
    allrows = pd.concat([bg, inj], ignore_index=True) if len(inj) else bg
    allrows = allrows.sort_values(["timestamp", "source", "target", "amount"], kind="stable").reset_index(drop=True)
    allrows["id"] = [f"T{seed:04d}{i:08d}" for i in range(len(allrows))]
    ledger = normalize_frame(allrows)

    lab = allrows[allrows["instance"] >= 0]
    labels = pd.DataFrame(
        {
            "instance_id": np.concatenate([lab["instance"], lab["instance"]]).astype(np.int64),
            "transaction_id": np.concatenate([lab["id"], lab["id"]]),
            "account": np.concatenate([lab["source"], lab["target"]]),
            "role": np.concatenate([lab["role_src"], lab["role_dst"]]),
        }
    ).sort_values(["instance_id", "transaction_id", "role", "account"], kind="stable").reset_index(drop=True)

    result = SynthResult(ledger, segments, labels)
    if out_dir is not None:
        result.files = write_synth(result, out_dir, background, injections, seed, window_days)
    return result


def write_synth(result, out_dir, background, injections, seed, window_days) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "ledger": out / "ledger.csv",
        "segments": out / "segments.csv",
        "labels": out / "labels.csv",
        "config": out / "synth_config.json",
    }
    write_ledger_csv(files["ledger"], result.ledger)
    write_segments(files["segments"], result.segments.values())
    result.labels.to_csv(files["labels"], index=False)
    cfg = {
        "seed": seed,
        "window_days": window_days,
        "background": {**asdict(background), "start": background.start.isoformat()},
        "injections": [asdict(t) for t in injections],
    }
    files["config"].write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return files


def load_synth_config(path: str | Path) -> tuple[BackgroundConfig, list[TypologyTemplate], int]:
    import yaml

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"synth config {path} not found")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    bg = dict(raw.get("background", {}))
    if "start" in bg:
        bg["start"] = bg["start"] if isinstance(bg["start"], date) else date.fromisoformat(str(bg["start"]))
    if "segment_mix" in bg:
        mix = bg["segment_mix"]
        bg["segment_mix"] = tuple((k, float(v)) for k, v in (mix.items() if isinstance(mix, dict) else mix))
    injections = [TypologyTemplate.from_dict(t) for t in raw.get("injections", [])]
    try:
        background = BackgroundConfig(**bg)
    except TypeError as e:
        raise ConfigError(f"{path}: bad background: {e}") from e
    return background, injections, int(raw.get("window_days", 7))


def read_labels(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"transaction_id": str, "account": str, "role": str}, keep_default_na=False)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Coverage:
    method: str
    coverage: float
    cases: int
    flagged_accounts: int
    labeled_found: int
    labeled_total: int


def _flagged_sets(reps) -> list[set[str]]:
    if isinstance(reps, pd.DataFrame):
        # a persisted cases table: one flagged case per row, accounts ';'-joined
        return [set(filter(None, str(a).split(";"))) for a in reps["accounts"]]
    return [set(r.flagged_accounts) for r in reps if r.flagged]


def evaluate_coverage(
    reports: Mapping[str, Iterable[CaseReport] | pd.DataFrame], labels: pd.DataFrame
) -> dict[str, Coverage]:
    """Share of ground-truth accounts that appear in each method's flagged cases.

    Each method maps to case reports or to a cases table as written by
    :func:`flowcomm.risk.write_cases`.
    """
    if not reports:
        raise ConfigError("no method reports to evaluate")
    truth = set(labels["account"]) if len(labels) else set()
    if not truth:
        raise ConfigError("labels are empty; coverage is undefined")
    out = {}
    for method, reps in reports.items():
        cases = _flagged_sets(reps)
        flagged = set().union(*cases) if cases else set()
        found = len(flagged & truth)
        out[method] = Coverage(method, found / len(truth), len(cases), len(flagged), found, len(truth))
    return out


# ---------------------------------------------------------------------------
# Benchmark presets
# ---------------------------------------------------------------------------

BENCHMARK_BACKGROUND = BackgroundConfig()

MIXED_TYPOLOGIES = (
    TypologyTemplate("simple-chain", count=2, length=3),
    TypologyTemplate("simple-chain", count=2, length=5),
    TypologyTemplate("smurfing", count=2, width=6),
    TypologyTemplate("advanced-multipath", count=2, n_dispense=3, n_sink=3, width=4),
    TypologyTemplate("complex-varying-length", count=2, path_lengths=(2, 3, 4)),
)

# look-ahead, pruning threshold and analysis windows used with the benchmark
BENCHMARK_DELTA_W_DAYS = 3
BENCHMARK_THETA = 0.2
BENCHMARK_WINDOW = (7, 7)

BENCHMARK_RISK = RiskConfig(
    dispense_segments=frozenset({"high-risk"}),
    sink_segments=frozenset({"cash-intensive"}),
    sunk_pct_range=(0.5, 1.0),
    max_flow_threshold=1_000_000,
)


def branching_ledger(
    n_accounts: int = 1000,
    branching: int = 3,
    n_days: int = 3,
    start: date = date(2023, 1, 2),
    seed: int = 0,
) -> pd.DataFrame:
    """Ledger where every account pays each of ``branching`` fixed counterparties once a day.

    Times are uniform within the day, so with a one-day look-ahead a
    transaction has about ``branching`` successors and the number of
    reachable endpoints grows geometrically with hops.
    """
    if branching < 1 or branching >= n_accounts:
        raise ConfigError(f"branching must be in [1, n_accounts), got {branching}")
    rng = np.random.default_rng(seed)
    shift = np.stack([rng.choice(np.arange(1, n_accounts), size=branching, replace=False) for _ in range(n_accounts)])
    nbrs = (np.arange(n_accounts)[:, None] + shift) % n_accounts
    src = np.tile(np.repeat(np.arange(n_accounts), branching), n_days)
    dst = np.tile(nbrs.ravel(), n_days)
    day = np.repeat(np.arange(n_days), n_accounts * branching)
    ts = day_start(start) + day * SECONDS_PER_DAY + rng.integers(0, SECONDS_PER_DAY, size=len(src))
    names = np.array([f"B{i:06d}" for i in range(n_accounts)], dtype=object)
    frame = pd.DataFrame({
        "timestamp": ts.astype(np.int64),
        "source": names[src],
        "target": names[dst],
        "amount": rng.integers(1_000, 100_000, size=len(src)),
    }).sort_values(["timestamp", "source", "target"], kind="stable").reset_index(drop=True)
    frame["id"] = [f"X{seed:04d}{i:08d}" for i in range(len(frame))]
    return normalize_frame(frame)
