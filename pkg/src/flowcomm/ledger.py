"""
Ledger ingestion: parse delimited transaction files, reject bad rows with a
reason code, strip hub accounts, and persist one Parquet partition per UTC day.

Input format (header row required, extra columns ignored)::

    id,transaction_timestamp,source,target,amount

``transaction_timestamp`` is Unix seconds, ``amount`` is a non-negative
integer in minor currency units.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np
import pandas as pd
import pyarrow as pa

from . import storage
from .errors import ConfigError, IntegrityError, SchemaError

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400
_EPOCH = date(1970, 1, 1)

COLUMNS = ["id", "timestamp", "source", "target", "amount"]

# reject reason codes
EMPTY_ROW = "EMPTY_ROW"
MALFORMED = "MALFORMED"
MISSING_FIELD = "MISSING_FIELD"
BAD_TIMESTAMP = "BAD_TIMESTAMP"
OUT_OF_EPOCH = "OUT_OF_EPOCH"
BAD_AMOUNT = "BAD_AMOUNT"
NEGATIVE_AMOUNT = "NEGATIVE_AMOUNT"
SELF_TRANSFER = "SELF_TRANSFER"


@dataclass(frozen=True, slots=True)
class Transaction:
    id: str
    timestamp: int
    source: str
    target: str
    amount: int

    @property
    def day(self) -> date:
        return day_of(self.timestamp)


@dataclass(frozen=True, slots=True)
class AccountSegment:
    account: str
    segment: str
    bank: str


@dataclass(frozen=True)
class Reject:
    row: int
    reason: str
    raw: str


@dataclass(frozen=True)
class SchemaConfig:
    """Column names in the input file and the accepted timestamp range."""

    id: str = "id"
    timestamp: str = "transaction_timestamp"
    source: str = "source"
    target: str = "target"
    amount: str = "amount"
    delimiter: str = ","
    epoch_start: int = 0
    epoch_end: int = 4_102_444_800  # 2100-01-01

    def columns(self) -> list[str]:
        return [self.id, self.timestamp, self.source, self.target, self.amount]


def day_of(timestamp: int) -> date:
    return _EPOCH + timedelta(days=int(timestamp) // SECONDS_PER_DAY)


def day_number(d: date) -> int:
    return (d - _EPOCH).days


def day_start(d: date) -> int:
    return day_number(d) * SECONDS_PER_DAY


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_ledger(
    path: str | Path,
    schema: SchemaConfig | None = None,
    on_reject: Callable[[Reject], None] | None = None,
) -> Iterator[Transaction]:
    """Yield validated transactions in file order.

    Per-row problems go to ``on_reject``; a missing column raises
    :class:`SchemaError` and a repeated id raises :class:`IntegrityError`.
    """
    schema = schema or SchemaConfig()
    on_reject = on_reject or (lambda r: None)
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        missing = [c for c in schema.columns() if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        pos = [header.index(c) for c in schema.columns()]
        width = len(header)

        for rownum, row in enumerate(reader, start=1):
            raw = schema.delimiter.join(row)
            if not row or all(not c.strip() for c in row):
                on_reject(Reject(rownum, EMPTY_ROW, raw))
                continue
            if len(row) != width:
                on_reject(Reject(rownum, MALFORMED, raw))
                continue
            tid, ts, src, dst, amt = (row[i].strip() for i in pos)
            if not (tid and ts and src and dst and amt):
                on_reject(Reject(rownum, MISSING_FIELD, raw))
                continue
            try:
                ts_i = int(ts)
            except ValueError:
                on_reject(Reject(rownum, BAD_TIMESTAMP, raw))
                continue
            if not schema.epoch_start <= ts_i < schema.epoch_end:
                on_reject(Reject(rownum, OUT_OF_EPOCH, raw))
                continue
            try:
                amt_i = int(amt)
            except ValueError:
                on_reject(Reject(rownum, BAD_AMOUNT, raw))
                continue
            if amt_i < 0:
                on_reject(Reject(rownum, NEGATIVE_AMOUNT, raw))
                continue
            if src == dst:
                on_reject(Reject(rownum, SELF_TRANSFER, raw))
                continue
            if tid in seen:
                raise IntegrityError(f"{path}: duplicate transaction id {tid!r} at row {rownum}")
            seen.add(tid)
            yield Transaction(tid, ts_i, src, dst, amt_i)


def load_ledger(
    path: str | Path, schema: SchemaConfig | None = None
) -> tuple[pd.DataFrame, list[Reject]]:
    rejects: list[Reject] = []
    frame = to_frame(parse_ledger(path, schema, rejects.append))
    if rejects:
        logger.info("%s: %d rows rejected", path, len(rejects))
    return frame, rejects


def write_rejects(path: str | Path, rejects: Iterable[Reject]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "reason", "raw"])
        for r in rejects:
            w.writerow([r.row, r.reason, r.raw])


def write_ledger_csv(path: str | Path, frame: pd.DataFrame, schema: SchemaConfig | None = None) -> None:
    schema = schema or SchemaConfig()
    out = frame[COLUMNS].copy()
    out.columns = schema.columns()
    out.to_csv(path, index=False, sep=schema.delimiter)


def to_frame(transactions: Iterable[Transaction]) -> pd.DataFrame:
    rows = [(t.id, t.timestamp, t.source, t.target, t.amount) for t in transactions]
    frame = pd.DataFrame(rows, columns=COLUMNS)
    return normalize_frame(frame)


def normalize_frame(frame: pd.DataFrame) -> pd.DataFrame:
    """Canonical dtypes and column order for an in-memory ledger."""
    out = pd.DataFrame(
        {
            "id": frame["id"].astype(str).astype(object),
            "timestamp": frame["timestamp"].astype(np.int64),
            "source": frame["source"].astype(str).astype(object),
            "target": frame["target"].astype(str).astype(object),
            "amount": frame["amount"].astype(np.int64),
        }
    )
    return out.reset_index(drop=True)


def iter_transactions(frame: pd.DataFrame) -> Iterator[Transaction]:
    for row in frame[COLUMNS].itertuples(index=False, name=None):
        yield Transaction(row[0], int(row[1]), row[2], row[3], int(row[4]))


# ---------------------------------------------------------------------------
# Segments
# ---------------------------------------------------------------------------


def load_segments(
    path: str | Path, vocabulary: Iterable[str] | None = None
) -> dict[str, AccountSegment]:
    """Read ``account,segment,bank`` rows; one record per account."""
    vocab = set(vocabulary) if vocabulary is not None else None
    out: dict[str, AccountSegment] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"account", "segment", "bank"} - set(reader.fieldnames or [])
        if missing:
            raise SchemaError(f"{path}: segment file missing column(s) {sorted(missing)}")
        for row in reader:
            acct = row["account"].strip()
            seg = row["segment"].strip()
            if acct in out:
                raise IntegrityError(f"{path}: account {acct!r} has more than one segment record")
            if vocab is not None and seg not in vocab:
                raise IntegrityError(f"{path}: segment {seg!r} for {acct!r} not in vocabulary")
            out[acct] = AccountSegment(acct, seg, row["bank"].strip())
    return out


def write_segments(path: str | Path, segments: Iterable[AccountSegment]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["account", "segment", "bank"])
        for s in sorted(segments, key=lambda s: s.account):
            w.writerow([s.account, s.segment, s.bank])


# ---------------------------------------------------------------------------
# Pre-processing
# ---------------------------------------------------------------------------


def connectedness(frame: pd.DataFrame) -> pd.Series:
    """Distinct counterparties per account (in-neighbours union out-neighbours)."""
    if frame.empty:
        return pd.Series(dtype=np.int64)
    pairs = pd.concat(
        [
            pd.DataFrame({"account": frame["source"], "other": frame["target"]}),
            pd.DataFrame({"account": frame["target"], "other": frame["source"]}),
        ],
        ignore_index=True,
    ).drop_duplicates()
    return pairs.groupby("account")["other"].size().astype(np.int64)


def remove_super_connected(
    frame: pd.DataFrame, top_fraction: float
) -> tuple[pd.DataFrame, list[str]]:
    """Drop every transaction touching the most-connected accounts.

    ``floor(top_fraction * n_accounts)`` accounts are targeted; anyone tied
    with the last of them is removed too.
    """
    if not 0.0 <= top_fraction <= 1.0:
        raise ConfigError(f"top_fraction must be in [0, 1], got {top_fraction}")
    conn = connectedness(frame)
    k = math.floor(top_fraction * len(conn))
    if k == 0:
        return frame.reset_index(drop=True), []
    cutoff = conn.sort_values(ascending=False, kind="stable").iloc[k - 1]
    removed = sorted(conn.index[conn >= cutoff])
    if len(removed) == len(conn):
        raise ConfigError(
            f"top_fraction={top_fraction} would remove all {len(conn)} accounts"
        )
    gone = set(removed)
    keep = ~(frame["source"].isin(gone) | frame["target"].isin(gone))
    logger.info("removed %d hub accounts, %d transactions", len(removed), int((~keep).sum()))
    return frame[keep].reset_index(drop=True), removed


# ---------------------------------------------------------------------------
# Date-partitioned store
# ---------------------------------------------------------------------------

_SCHEMA = pa.schema(
    [
        ("id", pa.string()),
        ("timestamp", pa.int64()),
        ("source", pa.string()),
        ("target", pa.string()),
        ("amount", pa.int64()),
    ]
)


@dataclass(frozen=True)
class PartitionedLedger:
    root: Path
    partitions: dict[date, str] = field(default_factory=dict)
    rows: dict[date, int] = field(default_factory=dict)
    last_day: date | None = None

    @property
    def days(self) -> list[date]:
        return sorted(self.partitions)

    @property
    def first_day(self) -> date | None:
        return min(self.partitions) if self.partitions else None

    @property
    def total_rows(self) -> int:
        return sum(self.rows.values())

    @classmethod
    def open(cls, root: str | Path) -> "PartitionedLedger":
        root = Path(root)
        m = storage.load_manifest(root, "ledger")
        parts = {date.fromisoformat(p["date"]): p["file"] for p in m["partitions"]}
        rows = {date.fromisoformat(p["date"]): p["rows"] for p in m["partitions"]}
        last = date.fromisoformat(m["last_day"]) if m.get("last_day") else None
        return cls(root, parts, rows, last)

    def read_day(self, d: date, io_log: list[str] | None = None) -> pd.DataFrame:
        name = self.partitions.get(d)
        if name is None:
            return _empty_frame()
        if io_log is not None:
            io_log.append(name)
        return _frame_from_table(storage.read_table(self.root / name))

    def read_all(self) -> pd.DataFrame:
        return read_window_frame(self, date.min, date.max)

    def content_hash(self) -> str:
        return storage.digest(
            [(d.isoformat(), storage.sha256_file(self.root / self.partitions[d])) for d in self.days]
        )


def _empty_frame() -> pd.DataFrame:
    return normalize_frame(pd.DataFrame({c: [] for c in COLUMNS}))


def _frame_from_table(table: pa.Table) -> pd.DataFrame:
    return normalize_frame(table.to_pandas())


def _partition_name(d: date) -> str:
    return f"day={d.isoformat()}.parquet"


def _write_day(root: Path, d: date, frame: pd.DataFrame) -> int:
    frame = frame.sort_values(["timestamp", "id"], kind="stable")
    table = pa.Table.from_pandas(frame[COLUMNS], schema=_SCHEMA, preserve_index=False)
    table = table.replace_schema_metadata({})
    storage.write_table(root / _partition_name(d), table, "ledger")
    return len(frame)


def _ledger_manifest(ledger: PartitionedLedger) -> dict:
    return {
        "kind": "ledger",
        "version": storage.FORMAT_VERSION,
        "last_day": ledger.last_day.isoformat() if ledger.last_day else None,
        "partitions": [
            {"date": d.isoformat(), "file": ledger.partitions[d], "rows": ledger.rows[d]}
            for d in ledger.days
        ],
        "total_rows": ledger.total_rows,
    }


def write_partitions(
    transactions: Iterable[Transaction] | pd.DataFrame, root: str | Path
) -> PartitionedLedger:
    """Persist transactions as one sorted partition per UTC calendar day."""
    root = Path(root)
    frame = transactions if isinstance(transactions, pd.DataFrame) else to_frame(transactions)
    frame = normalize_frame(frame)
    if frame["id"].duplicated().any():
        dup = frame.loc[frame["id"].duplicated(), "id"].iloc[0]
        raise IntegrityError(f"duplicate transaction id {dup!r}")
    storage.begin_write(root)
    parts: dict[date, str] = {}
    rows: dict[date, int] = {}
    day_nums = frame["timestamp"].to_numpy() // SECONDS_PER_DAY
    for dn in np.unique(day_nums):
        d = _EPOCH + timedelta(days=int(dn))
        rows[d] = _write_day(root, d, frame[day_nums == dn])
        parts[d] = _partition_name(d)
    ledger = PartitionedLedger(root, parts, rows, max(parts) if parts else None)
    storage.finish_write(root, _ledger_manifest(ledger))
    return ledger


def append_day(ledger: PartitionedLedger, d: date, frame: pd.DataFrame) -> PartitionedLedger:
    """Add one day of transactions to an existing store.  ``d`` must be new."""
    if ledger.last_day is not None and d <= ledger.last_day:
        raise ConfigError(f"append of {d} is not after the last stored day {ledger.last_day}")
    frame = normalize_frame(frame)
    if len(frame):
        days = frame["timestamp"].to_numpy() // SECONDS_PER_DAY
        if not (days == day_number(d)).all():
            raise IntegrityError(f"append for {d} contains transactions from other days")
    parts, rows = dict(ledger.partitions), dict(ledger.rows)
    storage.mark_incomplete(ledger.root)
    if len(frame):
        rows[d] = _write_day(ledger.root, d, frame)
        parts[d] = _partition_name(d)
    out = PartitionedLedger(ledger.root, parts, rows, d)
    storage.finish_write(ledger.root, _ledger_manifest(out))
    return out


def read_window_frame(
    ledger: PartitionedLedger, start: date, end: date, io_log: list[str] | None = None
) -> pd.DataFrame:
    """Transactions whose UTC date lies in ``[start, end]``; reads only those partitions."""
    if start > end:
        raise ConfigError(f"window start {start} is after end {end}")
    frames = [ledger.read_day(d, io_log) for d in ledger.days if start <= d <= end]
    if not frames:
        return _empty_frame()
    return pd.concat(frames, ignore_index=True)


def read_window(
    ledger: PartitionedLedger, start: date, end: date, io_log: list[str] | None = None
) -> Iterator[Transaction]:
    return iter_transactions(read_window_frame(ledger, start, end, io_log))
