from __future__ import annotations

from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcomm import ledger as L
from flowcomm import second_order as S
from flowcomm import temporal as T
from flowcomm.errors import ConfigError, ConsistencyError

import oracles
from conftest import ledgers, random_ledger


def _triples(edges):
    return list(zip(edges["src_from"], edges["mid"], edges["dst_to"]))


def _check_against_oracle(edges):
    s = S.compute_weights(S.derive_second_order(edges))
    exact = oracles.cooccurrence_weights(_triples(edges))
    assert len(s) == len(exact)
    assert int(s["count"].sum()) == len(edges)
    for r in s.itertuples(index=False):
        assert r.from2 == r.to1
        p, q, w = exact[(r.from1, r.to1, r.to2)]
        for got, want in ((r.p_src, p), (r.p_dst, q), (r.w, w)):
            assert got == float(want)  # one correctly-rounded division
            assert abs(Fraction(got) - want) <= 1e-12
    return s


@settings(max_examples=60)
@given(frame=ledgers(max_n=80, max_accounts=6), w=st.sampled_from([1, 3]))
def test_weights_match_exact_counting(frame, w):
    edges = T.join_sequential(frame, frame, w * L.SECONDS_PER_DAY)
    s = _check_against_oracle(edges)
    if len(s):
        assert np.allclose(s.groupby(["from1", "to1"])["p_src"].sum(), 1.0, atol=1e-9)
        assert np.allclose(s.groupby(["from2", "to2"])["p_dst"].sum(), 1.0, atol=1e-9)
        assert (s["w"] >= s["p_src"]).all() and (s["w"] >= s["p_dst"]).all()


def test_exclusive_adjacency_gets_weight_one():
    frame = L.normalize_frame(pd.DataFrame({
        "id": ["1", "2", "3", "4", "5"],
        "timestamp": [10, 20, 30, 40, 50],
        "source": ["a", "b", "a", "x", "b"],
        "target": ["b", "c", "b", "b", "d"],
        "amount": [1] * 5,
    }))
    s = S.compute_weights(S.derive_second_order(T.join_sequential(frame, frame, 1000)))
    row = s.set_index(["from1", "to1", "to2"]).loc[("x", "b", "d")]
    # x->b is followed only by b->d, so the forward share is exactly one
    assert row["p_src"] == 1.0 and row["w"] == 1.0
    assert s.set_index(["from1", "to1", "to2"]).loc[("a", "b", "d"), "count"] == 2


def test_store_and_frame_routes_agree(tmp_path, rng):
    frame = random_ledger(rng, 500, n_accounts=20, days=8)
    store = T.build_temporal_graph(L.write_partitions(frame, tmp_path / "l"), 3, tmp_path / "g")
    a = S.derive_second_order(store)
    b = S.derive_second_order(store.read_all())
    pd.testing.assert_frame_equal(a, b)
    _check_against_oracle(store.read_all())


def test_csv_round_trip_is_bit_exact(tmp_path, rng):
    frame = random_ledger(rng, 300, n_accounts=10, days=5)
    s = S.compute_weights(S.derive_second_order(T.join_sequential(frame, frame, 3 * L.SECONDS_PER_DAY)))
    S.write_second_order(tmp_path / "s.csv", s)
    back = S.read_second_order(tmp_path / "s.csv")
    pd.testing.assert_frame_equal(back, s[S.S_COLUMNS].reset_index(drop=True), check_exact=True)
    assert len(list(S.iter_second_order_edges(back))) == len(s)


def test_apply_and_prune(tmp_path, rng):
    frame = random_ledger(rng, 400, n_accounts=15, days=6)
    store = T.build_temporal_graph(L.write_partitions(frame, tmp_path / "l"), 3, tmp_path / "g")
    s = S.compute_weights(S.derive_second_order(store))
    weighted = S.apply_weights(store, s, tmp_path / "w")
    allw = weighted.read_all()
    assert np.array_equal(allw["w"].to_numpy(), S.lookup_weights(allw, s))
    kept = {}
    for theta in (0.0, 0.1, 0.3, 0.6, 1.0):
        pruned, rep = S.prune_weak_edges(weighted, theta, tmp_path / f"p{theta}")
        got = pruned.read_all()
        assert (got["w"] >= theta).all()
        assert rep.edges_before == len(allw) and rep.edges_after == len(got)
        kept[theta] = set(zip(got["src_txn"], got["dst_txn"]))
        touched = set(got["src_txn"]) | set(got["dst_txn"])
        assert rep.transactions_after == len(touched)
    thetas = sorted(kept)
    for lo, hi in zip(thetas, thetas[1:]):
        assert kept[hi] <= kept[lo]
    with pytest.raises(ConfigError):
        S.prune_weak_edges(store, 0.1, tmp_path / "x")
    with pytest.raises(ConfigError):
        S.prune_weak_edges(weighted, 1.5, tmp_path / "x")


def test_missing_weight_is_a_consistency_error(rng):
    frame = random_ledger(rng, 200, n_accounts=8)
    edges = T.join_sequential(frame, frame, 2 * L.SECONDS_PER_DAY)
    s = S.compute_weights(S.derive_second_order(edges.iloc[: len(edges) // 2]))
    with pytest.raises(ConsistencyError):
        S.lookup_weights(edges, s)


@settings(max_examples=30)
@given(frame=ledgers(max_n=80, max_accounts=6), cut=st.integers(0, 4))
def test_running_counts_match_batch_weights(frame, cut):
    edges = T.join_sequential(frame, frame, 2 * L.SECONDS_PER_DAY)
    running = S.CooccurrenceCounts()
    for part in np.array_split(np.arange(len(edges)), cut + 1):
        running.add(edges.iloc[part])
    batch = S.compute_weights(S.derive_second_order(edges))
    pd.testing.assert_frame_equal(running.frame(), batch, check_exact=True)
    assert np.array_equal(running.weights(edges), S.lookup_weights(edges, batch))
