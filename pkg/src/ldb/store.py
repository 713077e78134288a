"""Content-addressable chunk store.

Chunks are immutable and keyed by SHA-256 of a namespaced record:
``0x00 || payload`` for materialized (leaf/interior) chunks and
``0x01 || serialized recipe`` for virtual chunks. Identical payloads map to
the same id, which is the whole deduplication story; writing a chunk that
already exists is a no-op.

On-disk layout, one file per chunk:

    <root>/chunks/<first 2 hex chars>/<remaining 62 hex chars>

File format: magic ``LDC1``, kind byte (0x00 leaf, 0x01 interior,
0x02 virtual), u64 LE payload length, payload bytes (the serialized recipe
for virtual chunks). Redirects created by materialization live in
``<root>/redirects`` as ``old_hex<TAB>new_hex`` lines.

Virtual chunks carry a recipe instead of data: a transform, source chunk
ids, and the output group token. Materializing one runs a registered
materializer (the database layer installs it), stores the result under its
content-true id, and records a redirect so the old id keeps resolving.
Nothing is ever deleted; there is no reference counting.

total_bytes counts payload bytes only, so the numbers are independent of
filenames and header overhead.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

from .errors import InvalidRecipe, LdbError, MaterializationError, NotFound

logger = logging.getLogger(__name__)

FILE_MAGIC = b"LDC1"
_NS_MATERIALIZED = b"\x00"
_NS_VIRTUAL = b"\x01"


class ChunkKind(Enum):
    LEAF = 0
    INTERIOR = 1
    VIRTUAL = 2


@dataclass(frozen=True, order=True)
class ChunkId:
    """32-byte content digest."""

    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise LdbError(f"chunk id must be 32 bytes, got {len(self.digest)}")

    @property
    def hex(self) -> str:
        return self.digest.hex()

    @classmethod
    def from_hex(cls, s: str) -> "ChunkId":
        return cls(bytes.fromhex(s))

    def __repr__(self):
        return f"ChunkId({self.hex[:12]})"


def chunk_id_for_payload(payload: bytes) -> ChunkId:
    return ChunkId(hashlib.sha256(_NS_MATERIALIZED + payload).digest())


def chunk_id_for_recipe(recipe_bytes: bytes) -> ChunkId:
    return ChunkId(hashlib.sha256(_NS_VIRTUAL + recipe_bytes).digest())


#: Sentinel for the empty tree: the id of a zero-length leaf payload.
#: Never stored (payloads must be non-empty); resolvers special-case it.
EMPTY_CHUNK_ID = chunk_id_for_payload(b"")


@dataclass(frozen=True)
class Recipe:
    """Deferred computation of a chunk: transform applied to source chunks.

    ``transform`` is any object with canonical ``to_json``/``from_json``
    (the schema-evolution TransformOp in practice). ``group_schema`` names
    the output attribute group as ``<schema_digest_hex>:<table>:<group_id>``.
    """

    transform_json: dict
    sources: tuple[ChunkId, ...]
    group_schema: str

    def to_bytes(self) -> bytes:
        doc = {
            "transform": self.transform_json,
            "sources": [s.hex for s in self.sources],
            "group_schema": self.group_schema,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Recipe":
        doc = json.loads(data.decode("utf-8"))
        return cls(
            transform_json=doc["transform"],
            sources=tuple(ChunkId.from_hex(h) for h in doc["sources"]),
            group_schema=doc["group_schema"],
        )


@dataclass(frozen=True)
class StoredChunk:
    kind: ChunkKind
    payload: bytes | None
    recipe: Recipe | None


@dataclass(frozen=True)
class StoreStats:
    unique_chunks: int
    total_bytes: int
    virtual_chunks: int


class ChunkStore:
    """Persistent CAS with dedup, virtual chunks, and stats.

    Concurrent readers are safe; writes serialize on an internal lock.
    Returned values are immutable.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.chunks_dir = self.root / "chunks"
        self.redirects_path = self.root / "redirects"
        self.chunks_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._made_dirs: set[str] = set()
        self._materializer: Callable[[ChunkId, Recipe], tuple[ChunkId, bytes]] | None = None
        self._redirects: dict[ChunkId, ChunkId] = {}
        self._unique = 0
        self._bytes = 0
        self._virtual = 0
        self._known: set[ChunkId] = set()
        self._rescan()

    # -- bookkeeping --------------------------------------------------------

    def _rescan(self):
        """Rebuild counters from disk; headers only, payloads stay unread."""
        unique = 0
        total = 0
        virtual: set[ChunkId] = set()
        known: set[ChunkId] = set()
        for sub in sorted(self.chunks_dir.iterdir()) if self.chunks_dir.exists() else []:
            if not sub.is_dir() or len(sub.name) != 2:
                continue
            for f in sub.iterdir():
                if len(f.name) != 62:
                    continue  # ignore interrupted .tmp leftovers
                cid = ChunkId.from_hex(sub.name + f.name)
                known.add(cid)
                with open(f, "rb") as fh:
                    header = fh.read(13)
                kind = ChunkKind(header[4])
                (length,) = struct.unpack_from("<Q", header, 5)
                if kind is ChunkKind.VIRTUAL:
                    virtual.add(cid)
                else:
                    unique += 1
                    total += length
        if self.redirects_path.exists():
            with open(self.redirects_path, "r", encoding="ascii") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    old_hex, new_hex = line.split("\t")
                    self._redirects[ChunkId.from_hex(old_hex)] = ChunkId.from_hex(new_hex)
        self._unique = unique
        self._bytes = total
        self._virtual = len(virtual - set(self._redirects))
        self._known = known

    def _path(self, cid: ChunkId) -> str:
        h = cid.hex
        return f"{self.chunks_dir}/{h[:2]}/{h[2:]}"

    def _write_file(self, cid: ChunkId, kind: ChunkKind, body: bytes):
        h = cid.hex
        sub = h[:2]
        if sub not in self._made_dirs:
            os.makedirs(f"{self.chunks_dir}/{sub}", exist_ok=True)
            self._made_dirs.add(sub)
        path = f"{self.chunks_dir}/{sub}/{h[2:]}"
        tmp = path + ".tmp"
        record = FILE_MAGIC + bytes([kind.value]) + struct.pack("<Q", len(body)) + body
        try:
            with open(tmp, "wb") as fh:
                fh.write(record)
            os.replace(tmp, path)
        except OSError as exc:
            raise LdbError(f"write failed for chunk {cid.hex[:12]}: {exc}") from exc

    # -- operations ---------------------------------------------------------

    def put(self, payload: bytes, kind: ChunkKind = ChunkKind.LEAF) -> ChunkId:
        """Store a materialized chunk; returns its content id. Dedups."""
        if not payload:
            raise LdbError("chunk payload must be non-empty")
        if kind is ChunkKind.VIRTUAL:
            raise LdbError("use put_virtual for virtual chunks")
        cid = chunk_id_for_payload(payload)
        with self._lock:
            if cid in self._known:
                return cid
            self._write_file(cid, kind, payload)
            self._known.add(cid)
            self._unique += 1
            self._bytes += len(payload)
        return cid

    def put_virtual(self, recipe: Recipe) -> ChunkId:
        """Register a recipe. Sources must exist; no payload bytes are counted."""
        for src in recipe.sources:
            if not self.exists(src):
                raise NotFound(f"recipe source {src.hex[:12]} not in store")
        body = recipe.to_bytes()
        cid = chunk_id_for_recipe(body)
        self._check_acyclic(cid, recipe)
        with self._lock:
            if cid in self._known:
                return cid
            self._write_file(cid, ChunkKind.VIRTUAL, body)
            self._known.add(cid)
            self._virtual += 1
        return cid

    def _check_acyclic(self, new_id: ChunkId, recipe: Recipe):
        seen = set()
        stack = list(recipe.sources)
        while stack:
            cur = stack.pop()
            if cur == new_id:
                raise InvalidRecipe(f"recipe cycle through {new_id.hex[:12]}")
            if cur in seen:
                continue
            seen.add(cur)
            if cur == EMPTY_CHUNK_ID or not self.exists(cur):
                continue
            chunk = self._read(self._resolve(cur))
            if chunk.kind is ChunkKind.VIRTUAL:
                stack.extend(chunk.recipe.sources)

    def _resolve(self, cid: ChunkId) -> ChunkId:
        while cid in self._redirects:
            cid = self._redirects[cid]
        return cid

    def resolve(self, cid: ChunkId) -> ChunkId:
        """Follow materialization redirects to the current id."""
        return self._resolve(cid)

    def exists(self, cid: ChunkId) -> bool:
        return self._resolve(cid) in self._known

    def _read(self, cid: ChunkId) -> StoredChunk:
        path = self._path(cid)
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except FileNotFoundError:
            raise NotFound(f"unknown chunk {cid.hex[:12]}") from None
        if data[:4] != FILE_MAGIC:
            raise LdbError(f"bad magic in chunk file {cid.hex[:12]}")
        kind = ChunkKind(data[4])
        (length,) = struct.unpack_from("<Q", data, 5)
        body = data[13:13 + length]
        if kind is ChunkKind.VIRTUAL:
            return StoredChunk(kind, None, Recipe.from_bytes(body))
        return StoredChunk(kind, body, None)

    def get(self, cid: ChunkId) -> StoredChunk:
        """Fetch a chunk. Virtual chunks come back as their recipe, unmaterialized."""
        return self._read(self._resolve(cid))

    def set_materializer(self, fn: Callable[[ChunkId, Recipe], tuple[ChunkId, bytes]]):
        """Install the recipe evaluator. It must put() its result and return
        (materialized id, payload of that chunk)."""
        self._materializer = fn

    def materialize(self, cid: ChunkId) -> tuple[ChunkId, bytes]:
        """Ensure a chunk is physical; returns (id, payload). Idempotent."""
        resolved = self._resolve(cid)
        chunk = self._read(resolved)
        if chunk.kind is not ChunkKind.VIRTUAL:
            return resolved, chunk.payload
        if self._materializer is None:
            raise MaterializationError(
                f"no materializer registered for virtual chunk {resolved.hex[:12]}")
        new_id, payload = self._materializer(resolved, chunk.recipe)
        self._record_redirect(resolved, new_id)
        return new_id, payload

    def _record_redirect(self, old: ChunkId, new: ChunkId):
        with self._lock:
            if old in self._redirects:
                return
            self._redirects[old] = new
            with open(self.redirects_path, "a", encoding="ascii") as fh:
                fh.write(f"{old.hex}\t{new.hex}\n")
            self._virtual -= 1

    def stats(self) -> StoreStats:
        with self._lock:
            return StoreStats(self._unique, self._bytes, self._virtual)
