"""
On-disk primitives shared by the ledger and graph stores.

Every store is a directory of Parquet partitions plus a JSON manifest
(``_manifest.json``).  A ``_INCOMPLETE`` marker is written before the first
partition and removed after the manifest, so a crashed write is detectable
and a rerun can wipe the directory and start over.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from pathlib import Path
from typing import Any, Iterable

import pyarrow as pa
import pyarrow.parquet as pq

from .errors import CorruptStoreError

FORMAT_VERSION = 1
MANIFEST = "_manifest.json"
INCOMPLETE = "_INCOMPLETE"


def begin_write(root: Path) -> None:
    """Clear ``root`` and drop the partial-write marker."""
    root = Path(root)
    if root.exists():
        shutil.rmtree(root)
    root.mkdir(parents=True)
    (root / INCOMPLETE).write_text("write in progress\n")


def finish_write(root: Path, manifest: dict[str, Any]) -> None:
    write_json(Path(root) / MANIFEST, manifest)
    (Path(root) / INCOMPLETE).unlink(missing_ok=True)


def mark_incomplete(root: Path) -> None:
    (Path(root) / INCOMPLETE).write_text("write in progress\n")


def load_manifest(root: Path, kind: str) -> dict[str, Any]:
    return load_manifest_any(root, (kind,))


def load_manifest_any(root: Path, kinds: tuple[str, ...]) -> dict[str, Any]:
    root = Path(root)
    kind = "/".join(kinds)
    if (root / INCOMPLETE).exists():
        raise CorruptStoreError(f"{root} has a partial-write marker; rerun the stage")
    path = root / MANIFEST
    if not path.exists():
        raise CorruptStoreError(f"{root} is not a {kind} store (no {MANIFEST})")
    manifest = json.loads(path.read_text())
    if manifest.get("kind") not in kinds:
        raise CorruptStoreError(f"{root} holds a '{manifest.get('kind')}' store, expected '{kind}'")
    if manifest.get("version") != FORMAT_VERSION:
        raise CorruptStoreError(f"{root}: unsupported format version {manifest.get('version')}")
    return manifest


def write_json(path: Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_table(path: Path, table: pa.Table, kind: str) -> None:
    meta = dict(table.schema.metadata or {})
    meta[b"flowcomm.kind"] = kind.encode()
    meta[b"flowcomm.version"] = str(FORMAT_VERSION).encode()
    table = table.replace_schema_metadata(meta)
    pq.write_table(table, path, compression="zstd")


def read_table(path: Path) -> pa.Table:
    path = Path(path)
    if not path.exists():
        raise CorruptStoreError(f"missing partition file {path}")
    return pq.read_table(path)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_tree(root: Path, exclude: Iterable[str] = ()) -> dict[str, str]:
    """Map of relative path -> sha256 for every file under ``root``."""
    root = Path(root)
    skip = set(exclude)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in skip:
            out[p.relative_to(root).as_posix()] = sha256_file(p)
    return out


def digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()
