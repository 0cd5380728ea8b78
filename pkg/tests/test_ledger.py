from __future__ import annotations

from collections import Counter
from datetime import date, timedelta

import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcomm import ledger as L
from flowcomm.errors import ConfigError, CorruptStoreError, IntegrityError, SchemaError

from conftest import ledgers, rows_of


def _write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_rejects_each_bad_row_with_reason(tmp_path):
    text = (
        "id,transaction_timestamp,source,target,amount\n"
        "t1,1672531200,a,b,100\n"
        "\n"
        "t2,1672531200,a,b\n"
        "t3,,a,b,5\n"
        "t4,noon,a,b,5\n"
        "t5,-1,a,b,5\n"
        "t6,1672531200,a,b,1.5\n"
        "t7,1672531200,a,b,-3\n"
        "t8,1672531200,a,a,3\n"
        "t9,1672531201,b,c,0\n"
    )
    rejects = []
    good = list(L.parse_ledger(_write(tmp_path, text), on_reject=rejects.append))
    assert [t.id for t in good] == ["t1", "t9"]
    assert [r.reason for r in rejects] == [
        L.EMPTY_ROW, L.MALFORMED, L.MISSING_FIELD, L.BAD_TIMESTAMP, L.OUT_OF_EPOCH,
        L.BAD_AMOUNT, L.NEGATIVE_AMOUNT, L.SELF_TRANSFER,
    ]


def test_missing_column_and_empty_file_raise_schema_error(tmp_path):
    with pytest.raises(SchemaError):
        list(L.parse_ledger(_write(tmp_path, "id,source,target,amount\n")))
    with pytest.raises(SchemaError):
        list(L.parse_ledger(_write(tmp_path, "", "empty.csv")))


def test_duplicate_id_is_fatal(tmp_path):
    text = "id,transaction_timestamp,source,target,amount\nx,1,a,b,1\nx,2,b,c,1\n"
    with pytest.raises(IntegrityError):
        list(L.parse_ledger(_write(tmp_path, text)))


def test_custom_schema_and_delimiter(tmp_path):
    schema = L.SchemaConfig(id="tx", timestamp="ts", source="from", target="to", amount="amt", delimiter=";")
    text = "amt;to;from;ts;tx;extra\n7;b;a;100;q1;zzz\n"
    frame, rejects = L.load_ledger(_write(tmp_path, text), schema)
    assert rejects == []
    assert rows_of(frame) == [("q1", 100, "a", "b", 7)]


@settings(max_examples=40)
@given(frame=ledgers(), junk=st.lists(st.sampled_from(["", "x,y", ",,,,", "a,b,c,d,e"]), max_size=5))
def test_conservation_parsed_plus_rejected_equals_input(tmp_path_factory, frame, junk):
    path = tmp_path_factory.mktemp("c") / "in.csv"
    L.write_ledger_csv(path, frame)
    with open(path, "a") as fh:
        for j in junk:
            fh.write(j + "\n")
    parsed, rejects = L.load_ledger(path)
    assert len(parsed) + len(rejects) == len(frame) + len(junk)
    assert rows_of(parsed) == rows_of(frame)


@settings(max_examples=30)
@given(frame=ledgers(max_n=80))
def test_partitions_are_complete_and_windows_match_full_scan(tmp_path_factory, frame):
    root = tmp_path_factory.mktemp("p")
    led = L.write_partitions(frame, root / "ledger")
    back = L.PartitionedLedger.open(root / "ledger").read_all()
    assert Counter(rows_of(back)) == Counter(rows_of(frame))
    assert led.total_rows == len(frame)
    base = date(2022, 12, 30)
    for a in range(0, 9, 2):
        for b in range(a, 9, 3):
            start, end = base + timedelta(days=a), base + timedelta(days=b)
            got = L.read_window_frame(led, start, end)
            days = frame["timestamp"].map(L.day_of)
            want = frame[(days >= start) & (days <= end)]
            assert Counter(rows_of(got)) == Counter(rows_of(want))


def test_window_reads_only_needed_partitions(tmp_path, rng):
    from conftest import random_ledger

    led = L.write_partitions(random_ledger(rng, 200, days=6), tmp_path / "l")
    log: list[str] = []
    d0 = led.first_day
    L.read_window_frame(led, d0 + timedelta(days=1), d0 + timedelta(days=2), io_log=log)
    assert log == [f"day={(d0 + timedelta(days=k)).isoformat()}.parquet" for k in (1, 2)]


@settings(max_examples=40)
@given(frame=ledgers(max_n=80, max_accounts=12), a=st.floats(0, 0.5), b=st.floats(0, 0.5))
def test_preprocessing_is_monotone_in_top_fraction(frame, a, b):
    lo, hi = sorted((a, b))
    try:
        kept_lo, _ = L.remove_super_connected(frame, lo)
        kept_hi, _ = L.remove_super_connected(frame, hi)
    except ConfigError:
        return
    assert len(kept_hi) <= len(kept_lo)


def test_hub_removal_takes_ties_and_drops_touching_rows():
    frame = L.normalize_frame(pd.DataFrame({
        "id": ["1", "2", "3", "4", "5"],
        "timestamp": [1, 2, 3, 4, 5],
        "source": ["h", "h", "g", "g", "x"],
        "target": ["a", "b", "a", "b", "y"],
        "amount": [1] * 5,
    }))
    # connectedness: h=2, g=2, a=2, b=2, x=1, y=1; top 1 of 6 ties with three others
    kept, removed = L.remove_super_connected(frame, 1 / 6)
    assert removed == ["a", "b", "g", "h"]
    assert kept["id"].tolist() == ["5"]
    with pytest.raises(ConfigError):
        L.remove_super_connected(frame, 1.5)


def test_append_day_rules_and_partial_write_marker(tmp_path, rng):
    from conftest import random_ledger

    frame = random_ledger(rng, 50, days=3)
    led = L.write_partitions(frame, tmp_path / "l")
    with pytest.raises(ConfigError):
        L.append_day(led, led.last_day, frame.iloc[:0])
    nxt = led.last_day + timedelta(days=1)
    wrong = frame.iloc[:1]
    with pytest.raises(IntegrityError):
        L.append_day(led, nxt, wrong)
    (tmp_path / "l" / "_INCOMPLETE").write_text("x")
    with pytest.raises(CorruptStoreError):
        L.PartitionedLedger.open(tmp_path / "l")


def test_segments_reject_duplicates_and_unknown_vocabulary(tmp_path):
    p = _write(tmp_path, "account,segment,bank\na,retail,b1\nb,shell,b2\n", "s.csv")
    assert L.load_segments(p)["b"].segment == "shell"
    with pytest.raises(IntegrityError):
        L.load_segments(p, vocabulary={"retail"})
    dup = _write(tmp_path, "account,segment,bank\na,retail,b1\na,retail,b1\n", "d.csv")
    with pytest.raises(IntegrityError):
        L.load_segments(dup)
    bad = _write(tmp_path, "account,bank\na,b1\n", "bad.csv")
    with pytest.raises(SchemaError):
        L.load_segments(bad)
