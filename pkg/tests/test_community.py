from __future__ import annotations

from datetime import date

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcomm import community as C
from flowcomm.errors import ConfigError, ConsistencyError
from flowcomm.ledger import SECONDS_PER_DAY, write_partitions
from flowcomm.pipeline import compute_and_apply_weights
from flowcomm.temporal import build_temporal_graph, join_sequential

from conftest import random_ledger


def _edges(pairs, weights=None):
    src, dst = zip(*pairs)
    ts = np.arange(len(pairs), dtype=np.int64)
    frame = pd.DataFrame({"src_txn": src, "dst_txn": dst, "src_from": "a", "mid": "b", "dst_to": "c",
                          "src_ts": ts, "dst_ts": ts + 1})
    if weights is not None:
        frame["w"] = weights
    return frame


@settings(max_examples=40)
@given(seed=st.integers(0, 10**6), cap=st.integers(1, 10))
def test_communities_partition_the_touched_transactions(seed, cap):
    rng = np.random.default_rng(seed)
    frame = random_ledger(rng, 80, n_accounts=8, days=3)
    edges = join_sequential(frame, frame, SECONDS_PER_DAY)
    edges["w"] = rng.uniform(0.05, 1.0, len(edges))
    comms = C.detect_communities(edges, C.LeidenConfig(max_comm_size=cap, seed=seed))
    members = [t for c in comms for t in c.members]
    assert len(members) == len(set(members))
    assert set(members) == set(edges["src_txn"]) | set(edges["dst_txn"])
    assert all(1 <= len(c) <= cap for c in comms)
    label = {t: c.community_id for c in comms for t in c.members}
    internal = {(s, d) for s, d in zip(edges["src_txn"], edges["dst_txn"]) if label[s] == label[d]}
    assert internal == {(s, d) for c in comms for s, d, _ in c.edges}
    firsts = [min(c.members) for c in comms]
    assert firsts == sorted(firsts)
    again = C.detect_communities(edges, C.LeidenConfig(max_comm_size=cap, seed=seed))
    assert again == comms


def test_weights_separate_flows_that_unit_weights_merge():
    # two four-step flows A and B interleaved in time, with weak cross links between them
    steps = [(f"{f}{i}", f"{f}{i + 1}") for f in "AB" for i in range(1, 4)]
    cross = [("A1", "B2"), ("B1", "A2"), ("A2", "B3"), ("B2", "A3"), ("A3", "B4"), ("B3", "A4")]
    edges = _edges(steps + cross, [1.0] * len(steps) + [0.05] * len(cross))
    by_flow = {frozenset(f"A{i}" for i in range(1, 5)), frozenset(f"B{i}" for i in range(1, 5))}
    cfg = C.LeidenConfig()
    weighted = {frozenset(c.members) for c in C.detect_communities(edges, cfg, weighted=True)}
    unit = {frozenset(c.members) for c in C.detect_communities(edges, cfg, weighted=False)}
    assert weighted == by_flow
    assert unit != by_flow
    assert C.quality(unit, edges, cfg, weighted=False) > C.quality(by_flow, edges, cfg, weighted=False)


def test_quality_checks_coverage_and_weights():
    edges = _edges([("x", "y"), ("y", "z")])
    with pytest.raises(ConfigError):
        C.detect_communities(edges, C.LeidenConfig(), weighted=True)
    with pytest.raises(ConsistencyError):
        C.quality({"x": 0, "y": 0}, edges, C.LeidenConfig(), weighted=False)
    assert C.quality([["x", "y", "z"]], edges, C.LeidenConfig(), weighted=False) == pytest.approx(0.0)
    assert C.detect_communities(edges.iloc[:0], C.LeidenConfig()) == []


def test_window_bounds():
    b = C.window_bounds(date(2023, 1, 1), date(2023, 1, 10), 4, 3)
    assert b == [(date(2023, 1, 1), date(2023, 1, 4)), (date(2023, 1, 4), date(2023, 1, 7)),
                 (date(2023, 1, 7), date(2023, 1, 10)), (date(2023, 1, 10), date(2023, 1, 13))]
    assert len(C.window_bounds(date(2023, 1, 1), date(2023, 1, 1), 7, 7)) == 1
    for length, stride in ((0, 1), (3, 0)):
        with pytest.raises(ConfigError):
            C.window_bounds(date(2023, 1, 1), date(2023, 1, 2), length, stride)
    for bad in (dict(quality="surprise"), dict(resolution=0), dict(max_comm_size=0), dict(restarts=0)):
        with pytest.raises(ConfigError):
            C.LeidenConfig(**bad)


def test_windows_round_trip_through_tables(tmp_path):
    rng = np.random.default_rng(3)
    frame = random_ledger(rng, 300, n_accounts=15, days=9)
    ledger = write_partitions(frame, tmp_path / "ledger")
    store = build_temporal_graph(ledger, 2, tmp_path / "graph")
    weighted = compute_and_apply_weights(store, tmp_path / "weights")
    cfg = C.LeidenConfig(max_comm_size=12)
    windows = C.run_windows(weighted, 3, 3, cfg)
    assert [b for _, b, _ in windows] == C.window_bounds(weighted.first_day, weighted.last_day, 3, 3)
    for _, (start, end), comms in windows:
        for c in comms:
            days = {int(frame.loc[frame["id"] == t, "timestamp"].iloc[0]) // SECONDS_PER_DAY for t in c.members}
            lo, hi = (start - date(1970, 1, 1)).days, (end - date(1970, 1, 1)).days
            assert all(lo <= d <= hi for d in days)
    C.write_communities(tmp_path / "c.csv", windows)
    C.write_windows(tmp_path / "w.csv", windows)
    back = C.read_communities(tmp_path / "c.csv", weighted, tmp_path / "w.csv")
    norm = lambda ws: [(i, b, sorted((c.members, c.edges) for c in cs)) for i, b, cs in ws if cs]
    assert norm(back) == norm(windows)
