from __future__ import annotations

from dataclasses import replace
from datetime import date

import pandas as pd
import pytest

from flowcomm import synth
from flowcomm.errors import ConfigError
from flowcomm.ledger import SECONDS_PER_DAY

SMALL = synth.BackgroundConfig(n_accounts=1500, n_days=8, transactions_per_day=300)
ALL_KINDS = (
    synth.TypologyTemplate("simple-chain", length=4),
    synth.TypologyTemplate("smurfing", width=5),
    synth.TypologyTemplate("advanced-multipath", n_dispense=2, n_sink=3, width=3),
    synth.TypologyTemplate("complex-varying-length", path_lengths=(2, 3, 5)),
    synth.TypologyTemplate("simple-chain", length=2, rounds=2, dispense_pool="background", sink_pool="background"),
)


@pytest.fixture(scope="module")
def result():
    return synth.generate(SMALL, ALL_KINDS, seed=11, window_days=3)


def test_generation_is_deterministic_in_seed(result):
    again = synth.generate(SMALL, ALL_KINDS, seed=11, window_days=3)
    pd.testing.assert_frame_equal(result.ledger, again.ledger)
    pd.testing.assert_frame_equal(result.labels, again.labels)
    assert result.segments == again.segments
    other = synth.generate(SMALL, ALL_KINDS, seed=12, window_days=3)
    assert not result.ledger["timestamp"].equals(other.ledger["timestamp"])


def test_instances_are_disjoint_and_labelled(result):
    lab = result.labels
    per_txn = lab.groupby("transaction_id")["instance_id"].nunique()
    assert (per_txn == 1).all()
    assert set(lab["instance_id"]) == set(range(len(ALL_KINDS)))
    assert set(lab["transaction_id"]) <= set(result.ledger["id"])
    assert result.ledger["id"].is_unique
    # every labelled transaction contributes its sender and its receiver
    assert (lab.groupby("transaction_id").size() == 2).all()


def _instance(result, k):
    ids = set(result.labels.loc[result.labels["instance_id"] == k, "transaction_id"])
    return result.ledger[result.ledger["id"].isin(ids)]


def _roles(result, k):
    lab = result.labels[result.labels["instance_id"] == k]
    return {r: set(lab.loc[lab["role"] == r, "account"]) for r in (synth.DISPENSE, synth.INTERMEDIATE, synth.SINK)}


def test_every_hop_is_a_sequential_pair_inside_the_window(result):
    window = 3 * SECONDS_PER_DAY
    for k in range(len(ALL_KINDS)):
        inst = _instance(result, k)
        roles = _roles(result, k)
        for r in inst.itertuples(index=False):
            if r.source in roles[synth.DISPENSE]:
                continue
            feeders = inst[(inst["target"] == r.source) & (inst["timestamp"] < r.timestamp)
                           & (r.timestamp < inst["timestamp"] + window)]
            assert len(feeders), f"instance {k}: {r.id} has no feeding transaction"
        assert not (inst["target"].isin(roles[synth.DISPENSE])).any()
        assert not (inst["source"].isin(roles[synth.SINK])).any()


def test_structures_have_the_requested_shape(result):
    chain = _instance(result, 0)
    assert len(chain) == 4
    smurf = _roles(result, 1)
    assert len(smurf[synth.INTERMEDIATE]) == 6  # five mules and a collector
    multi = _roles(result, 2)
    assert (len(multi[synth.DISPENSE]), len(multi[synth.SINK])) == (2, 3)

    inst = _instance(result, 3)
    roles = _roles(result, 3)
    succ: dict[str, set] = {}
    for a, b in zip(inst["source"], inst["target"]):
        succ.setdefault(a, set()).add(b)
    (d,), (s,) = roles[synth.DISPENSE], roles[synth.SINK]
    lengths = set()

    def walk(u, n):
        if u == s:
            lengths.add(n)
        for v in succ.get(u, ()):
            walk(v, n + 1)

    walk(d, 0)
    assert lengths == {2, 3, 5}


def test_pools_and_segments(result):
    multi = _roles(result, 2)
    for a in multi[synth.DISPENSE]:
        assert a.startswith("M") and result.segments[a].segment == "high-risk"
    for a in multi[synth.SINK]:
        assert a.startswith("A") and result.segments[a].segment == "cash-intensive"
    bg = _roles(result, 4)
    assert all(a.startswith("A") for a in bg[synth.DISPENSE] | bg[synth.SINK])
    assert len(_instance(result, 4)) == 4  # two rounds of a two-hop chain


def test_preconditions_raise():
    with pytest.raises(ConfigError):
        synth.generate(synth.BackgroundConfig(n_accounts=50, n_days=2, transactions_per_day=10),
                       [synth.TypologyTemplate("smurfing", width=10)], seed=0)
    with pytest.raises(ConfigError):
        synth.generate(SMALL, [synth.TypologyTemplate("simple-chain", delay_hours=(1.0, 30.0))], window_days=1)
    for bad in (dict(kind="ring"), dict(kind="simple-chain", count=-1), dict(kind="simple-chain", dispense_pool="x"),
                dict(kind="complex-varying-length", path_lengths=(1, 3)), dict(kind="smurfing", hub_fraction=0)):
        with pytest.raises(ConfigError):
            synth.TypologyTemplate(**bad)


def test_files_round_trip(tmp_path):
    res = synth.generate(SMALL, ALL_KINDS[:2], seed=3, out_dir=tmp_path, window_days=3)
    assert {p.name for p in res.files.values()} == {"ledger.csv", "segments.csv", "labels.csv", "synth_config.json"}
    labels = synth.read_labels(res.files["labels"])
    pd.testing.assert_frame_equal(labels, res.labels, check_dtype=False)
    yml = tmp_path / "s.yaml"
    yml.write_text(
        "window_days: 3\nbackground:\n  n_accounts: 1500\n  n_days: 8\n  transactions_per_day: 300\n"
        "  start: 2023-01-02\ninjections:\n  - kind: smurfing\n    width: 5\n"
    )
    bg, inj, wd = synth.load_synth_config(yml)
    assert bg == replace(SMALL, start=date(2023, 1, 2)) and wd == 3
    assert inj == [synth.TypologyTemplate("smurfing", width=5)]


def test_coverage_from_reports_and_tables_agree(result):
    from flowcomm.risk import CASE_COLUMNS, CaseReport, FlowTopology

    roles = _roles(result, 0)
    acc = sorted(set().union(*roles.values()))
    topo = FlowTopology((), (), tuple(sorted(roles[synth.DISPENSE])), tuple(sorted(roles[synth.SINK])),
                        tuple(sorted(roles[synth.INTERMEDIATE])), 4, 1, 1)
    rep = CaseReport(0, 4, topo, 1, 1.0, True, True, True)
    table = pd.DataFrame([[0, 0, 4, 1, 1.0, "", "", ";".join(acc)]], columns=CASE_COLUMNS)
    cov = synth.evaluate_coverage({"r": [rep], "t": table}, result.labels)
    assert cov["r"].coverage == cov["t"].coverage == len(acc) / result.labels["account"].nunique()
    assert cov["r"].cases == 1
    with pytest.raises(ConfigError):
        synth.evaluate_coverage({"r": [rep]}, result.labels.iloc[:0])
    with pytest.raises(ConfigError):
        synth.evaluate_coverage({}, result.labels)


def test_branching_ledger_has_fixed_out_degree():
    f = synth.branching_ledger(n_accounts=200, branching=3, n_days=2, seed=1)
    assert len(f) == 200 * 3 * 2
    outdeg = f.groupby("source")["target"].nunique()
    assert (outdeg == 3).all() and len(outdeg) == 200
    assert (f["source"] != f["target"]).all()
    with pytest.raises(ConfigError):
        synth.branching_ledger(n_accounts=3, branching=3)
