"""Key-ordered chunk tree with canonical structure.

Leaves hold entry spans cut by the chunking policy; each interior level
chunks the (max_key, child_id) descriptors of the level below with the same
policy until a single root remains. Because span boundaries are a pure
function of key content, the tree shape (and therefore every chunk id)
depends only on the final entry set, never on mutation order.

``apply`` keeps that canonical form incrementally: it re-chunks from the
span containing the first affected key, streams old entries merged with the
mutation batch through the boundary scanner, and stops as soon as a span
closes exactly on an old span boundary with no mutations pending (from that
point the old spans reproduce themselves verbatim, so they are reused
without being read). Interior levels are rebuilt from descriptors;
unchanged interior spans re-encode to identical bytes and dedup away.
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

from .chunker import ChunkingPolicy, Entry, SpanScanner, boundaries
from .errors import (
    ConstraintViolation,
    CorruptTree,
    InvalidInput,
    InvalidRange,
    PolicyMismatch,
)
from .relation import AttributeGroup, Schema, decode_chunk, decode_key, encode_chunk, encode_key
from .store import ChunkId, ChunkKind, ChunkStore, EMPTY_CHUNK_ID

INTERIOR_MAGIC = b"LDN1"
RAW_LEAF_MAGIC = b"LDR1"


class MutationOp(Enum):
    INSERT = "insert"
    UPDATE = "update"
    DELETE = "delete"


@dataclass(frozen=True)
class Mutation:
    op: MutationOp
    key: bytes
    value: object | None = None


@dataclass(frozen=True)
class TreeRef:
    """Immutable handle: root id, level count, policy, entry count."""

    root: ChunkId
    height: int
    policy: ChunkingPolicy
    entry_count: int

    def to_json(self) -> dict:
        return {"root": self.root.hex, "height": self.height, "count": self.entry_count}


@dataclass(frozen=True)
class Delta:
    """Symmetric difference between two trees, key-disjoint and sorted."""

    added: list[Entry]
    removed: list[Entry]
    modified: list[tuple[bytes, object, object]]  # key, old value, new value

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.modified)


class LeafCodec(Protocol):
    def encode(self, entries: list[Entry]) -> bytes: ...
    def decode(self, payload: bytes) -> list[Entry]: ...


class RawLeafCodec:
    """Length-prefixed (key, value) pairs; used by generic tree tests."""

    def encode(self, entries: list[Entry]) -> bytes:
        parts = [RAW_LEAF_MAGIC, struct.pack("<I", len(entries))]
        for e in entries:
            parts.append(struct.pack("<I", len(e.key)) + e.key)
            parts.append(struct.pack("<I", len(e.value)) + e.value)
        return b"".join(parts)

    def decode(self, payload: bytes) -> list[Entry]:
        if payload[:4] != RAW_LEAF_MAGIC:
            raise CorruptTree("bad raw leaf magic")
        (n,) = struct.unpack_from("<I", payload, 4)
        pos = 8
        out = []
        for _ in range(n):
            (kl,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            key = payload[pos:pos + kl]
            pos += kl
            (vl,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            out.append(Entry(key, payload[pos:pos + vl]))
            pos += vl
        return out


class GroupLeafCodec:
    """Columnar leaf codec for one attribute group of a relation.

    Entry keys are the order-preserving PK encoding; entry values are the
    typed tuples of the group's non-PK columns (the canonical byte form
    only exists at the chunk payload level, where dedup needs it).
    """

    def __init__(self, schema: Schema, group: AttributeGroup):
        self.schema = schema
        self.group = group
        self._pk_type = schema.pk_column().type

    def encode(self, entries: list[Entry]) -> bytes:
        pk_type = self._pk_type
        rows = [(decode_key(pk_type, e.key),) + e.value for e in entries]
        return encode_chunk(self.schema, self.group, rows)

    def decode(self, payload: bytes) -> list[Entry]:
        pk_type = self._pk_type
        return [Entry(encode_key(pk_type, r[0]), r[1:])
                for r in decode_chunk(payload, self.schema, self.group)]


def encode_interior(entries: list[Entry]) -> bytes:
    parts = [INTERIOR_MAGIC, struct.pack("<I", len(entries))]
    for e in entries:
        parts.append(struct.pack("<I", len(e.key)) + e.key + e.value)
    return b"".join(parts)


def decode_interior(payload: bytes) -> list[Entry]:
    if payload[:4] != INTERIOR_MAGIC:
        raise CorruptTree("bad interior magic")
    (n,) = struct.unpack_from("<I", payload, 4)
    pos = 8
    out = []
    prev = None
    for _ in range(n):
        (kl,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        key = payload[pos:pos + kl]
        pos += kl
        out.append(Entry(key, payload[pos:pos + 32]))
        pos += 32
        if prev is not None and key <= prev:
            raise CorruptTree("interior keys not strictly increasing")
        prev = key
    return out


# Chunks are immutable and content-addressed, so decoded forms can be
# cached globally by id. Callers must treat the returned lists as frozen.
_DECODE_CACHE_CAP = 1 << 14
_leaf_cache: OrderedDict = OrderedDict()
_interior_cache: OrderedDict = OrderedDict()


def _cache_get(cache: OrderedDict, cid, produce):
    hit = cache.get(cid)
    if hit is not None:
        cache.move_to_end(cid)
        return hit
    value = produce()
    _cache_put(cache, cid, value)
    return value


def _cache_put(cache: OrderedDict, cid, value):
    cache[cid] = value
    if len(cache) > _DECODE_CACHE_CAP:
        cache.popitem(last=False)


class ProllyTree:
    """Tree operations bound to one store and one leaf codec."""

    def __init__(self, store: ChunkStore, codec: LeafCodec | None = None):
        self.store = store
        self.codec = codec or RawLeafCodec()

    def _leaf_entries(self, cid: ChunkId) -> list[Entry]:
        return _cache_get(_leaf_cache, cid,
                          lambda: self.codec.decode(self._payload(cid)))

    def _interior_entries(self, cid: ChunkId) -> list[Entry]:
        return _cache_get(_interior_cache, cid,
                          lambda: decode_interior(self._payload(cid)))

    # -- construction -------------------------------------------------------

    def build(self, entries: list[Entry], policy: ChunkingPolicy) -> TreeRef:
        if not entries:
            return TreeRef(EMPTY_CHUNK_ID, 0, policy, 0)
        spans = boundaries(entries, policy)
        descs = [
            (entries[s.end - 1].key, self._put_leaf(entries[s.start:s.end]))
            for s in spans
        ]
        root, height = self._stack_levels(descs, policy)
        return TreeRef(root, height, policy, len(entries))

    def _put_leaf(self, span: list[Entry]) -> ChunkId:
        cid = self.store.put(self.codec.encode(span), ChunkKind.LEAF)
        _cache_put(_leaf_cache, cid, span)
        return cid

    def _stack_levels(self, descs: list[tuple[bytes, ChunkId]], policy: ChunkingPolicy) -> tuple[ChunkId, int]:
        height = 1
        while len(descs) > 1:
            ents = [Entry(k, cid.digest) for k, cid in descs]
            spans = boundaries(ents, policy)
            nxt = []
            for s in spans:
                span_ents = ents[s.start:s.end]
                cid = self.store.put(encode_interior(span_ents), ChunkKind.INTERIOR)
                _cache_put(_interior_cache, cid, span_ents)
                nxt.append((span_ents[-1].key, cid))
            descs = nxt
            height += 1
        return descs[0][1], height

    def _payload(self, cid: ChunkId) -> bytes:
        return self.store.get(cid).payload

    # -- reads --------------------------------------------------------------

    def lookup(self, ref: TreeRef, key: bytes) -> bytes | None:
        if ref.height == 0:
            return None
        cid, h = ref.root, ref.height
        while h > 1:
            ents = self._interior_entries(cid)
            idx = bisect_left([e.key for e in ents], key)
            if idx == len(ents):
                return None
            cid, h = ChunkId(ents[idx].value), h - 1
        for e in self._leaf_entries(cid):
            if e.key == key:
                return e.value
        return None

    def scan(self, ref: TreeRef, lo: bytes | None = None, hi: bytes | None = None) -> list[Entry]:
        """All entries with lo <= key < hi, in key order. None means open end."""
        if lo is not None and hi is not None and lo > hi:
            raise InvalidRange(f"scan range {lo!r} > {hi!r}")
        out: list[Entry] = []
        if ref.height == 0:
            return out
        self._scan_node(ref.root, ref.height, lo, hi, out)
        return out

    def _scan_node(self, cid: ChunkId, h: int, lo, hi, out: list[Entry]):
        if h == 1:
            for e in self._leaf_entries(cid):
                if (lo is None or e.key >= lo) and (hi is None or e.key < hi):
                    out.append(e)
            return
        prev = None
        for e in self._interior_entries(cid):
            if hi is not None and prev is not None and prev >= hi:
                break
            if lo is None or e.key >= lo:
                self._scan_node(ChunkId(e.value), h - 1, lo, hi, out)
            prev = e.key

    def leaf_descriptors(self, ref: TreeRef) -> list[tuple[bytes, ChunkId]]:
        """(max_key, leaf id) per leaf, in order; interior chunks only are read
        (except for single-leaf trees, whose root must be decoded)."""
        if ref.height == 0:
            return []
        if ref.height == 1:
            entries = self._leaf_entries(ref.root)
            return [(entries[-1].key, ref.root)]
        out: list[tuple[bytes, ChunkId]] = []
        self._collect_leaves(ref.root, ref.height, out)
        return out

    def _collect_leaves(self, cid: ChunkId, h: int, out):
        ents = self._interior_entries(cid)
        if h == 2:
            out.extend((e.key, ChunkId(e.value)) for e in ents)
        else:
            for e in ents:
                self._collect_leaves(ChunkId(e.value), h - 1, out)

    # -- mutation -----------------------------------------------------------

    def apply(self, ref: TreeRef, batch: list[Mutation]) -> TreeRef:
        """Apply a sorted mutation batch; result equals a from-scratch build."""
        self._check_batch(batch)
        if not batch:
            return ref
        if ref.height == 0:
            bad = [m.key for m in batch if m.op is not MutationOp.INSERT]
            if bad:
                raise ConstraintViolation("update/delete on empty tree", bad)
            return self.build([Entry(m.key, m.value) for m in batch], ref.policy)

        descs = self.leaf_descriptors(ref)
        max_keys = [k for k, _ in descs]
        n_leaves = len(descs)
        last = n_leaves - 1
        mut_leaf = [min(bisect_left(max_keys, m.key), last) for m in batch]

        out: list[tuple[bytes, ChunkId]] = []
        violations: list[bytes] = []
        idx = 0
        m_i = 0
        delta_count = 0
        while m_i < len(batch):
            j = mut_leaf[m_i]
            out.extend(descs[idx:j])
            idx, m_i, d = self._rechunk_region(ref, descs, mut_leaf, j, batch, m_i, out, violations)
            delta_count += d
        out.extend(descs[idx:])
        if violations:
            raise ConstraintViolation("key-existence violations", violations)
        if not out:
            return TreeRef(EMPTY_CHUNK_ID, 0, ref.policy, 0)
        root, height = self._stack_levels(out, ref.policy)
        return TreeRef(root, height, ref.policy, ref.entry_count + delta_count)

    def _check_batch(self, batch: list[Mutation]):
        prev = None
        for m in batch:
            if prev is not None and m.key <= prev:
                raise InvalidInput("mutation batch must be sorted with unique keys")
            if m.op is MutationOp.DELETE and m.value is not None:
                raise InvalidInput("delete carries no value")
            if m.op is not MutationOp.DELETE and m.value is None:
                raise InvalidInput(f"{m.op.value} requires a value")
            prev = m.key

    def _rechunk_region(self, ref, descs, mut_leaf, start_leaf, batch, m_i, out, violations):
        """Stream-merge old entries with mutations from start_leaf; emit new
        leaves until the cut points realign with old leaf boundaries."""
        scanner = SpanScanner(ref.policy)
        buf: list[Entry] = []
        n_leaves = len(descs)
        leaf_idx = start_leaf
        cur: list[Entry] | None = None
        pos = 0
        count_delta = 0

        def flush():
            span = list(buf)
            out.append((span[-1].key, self._put_leaf(span)))
            buf.clear()

        while True:
            if cur is None:
                if not buf and pos == 0 and leaf_idx < n_leaves:
                    need = mut_leaf[m_i] if m_i < len(batch) else n_leaves
                    if need > leaf_idx:
                        return leaf_idx, m_i, count_delta
                if leaf_idx < n_leaves:
                    cur = self._leaf_entries(descs[leaf_idx][1])
                    pos = 0
            nxt = cur[pos] if cur is not None and pos < len(cur) else None
            m = batch[m_i] if m_i < len(batch) else None
            if m is not None and (nxt is None or m.key <= nxt.key):
                if nxt is not None and m.key == nxt.key:
                    pos += 1
                    m_i += 1
                    if m.op is MutationOp.INSERT:
                        violations.append(m.key)
                        e = nxt  # keep old value; batch rejected at the end
                    elif m.op is MutationOp.DELETE:
                        count_delta -= 1
                        e = None
                    else:
                        e = Entry(m.key, m.value)
                else:
                    m_i += 1
                    if m.op is not MutationOp.INSERT:
                        violations.append(m.key)
                        e = None
                    else:
                        count_delta += 1
                        e = Entry(m.key, m.value)
            elif nxt is not None:
                pos += 1
                e = nxt
            else:
                break
            if cur is not None and pos == len(cur):
                cur = None
                leaf_idx += 1
                pos = 0
            if e is None:
                continue
            buf.append(e)
            if scanner.feed(e.key):
                flush()
        if buf:
            flush()
        return n_leaves, m_i, count_delta

    # -- diff ---------------------------------------------------------------

    def diff(self, a: TreeRef, b: TreeRef) -> Delta:
        """Exact symmetric difference; subtrees shared by id are never read."""
        if a.policy != b.policy:
            raise PolicyMismatch("diff requires identical chunking policies")
        if a.root == b.root:
            return Delta([], [], [])
        side_a: dict[ChunkId, int] = {a.root: a.height} if a.height else {}
        side_b: dict[ChunkId, int] = {b.root: b.height} if b.height else {}
        self._drop_common(side_a, side_b)
        while True:
            hmax = max([*side_a.values(), *side_b.values(), 1])
            if hmax == 1:
                break
            for side in (side_a, side_b):
                for cid in [c for c, h in side.items() if h == hmax]:
                    h = side.pop(cid)
                    for e in self._interior_entries(cid):
                        side[ChunkId(e.value)] = h - 1
            self._drop_common(side_a, side_b)
        ent_a: dict[bytes, bytes] = {}
        ent_b: dict[bytes, bytes] = {}
        for side, acc in ((side_a, ent_a), (side_b, ent_b)):
            for cid in side:
                for e in self._leaf_entries(cid):
                    acc[e.key] = e.value
        added = [Entry(k, ent_b[k]) for k in sorted(ent_b.keys() - ent_a.keys())]
        removed = [Entry(k, ent_a[k]) for k in sorted(ent_a.keys() - ent_b.keys())]
        modified = [
            (k, ent_a[k], ent_b[k])
            for k in sorted(ent_a.keys() & ent_b.keys())
            if ent_a[k] != ent_b[k]
        ]
        return Delta(added, removed, modified)

    @staticmethod
    def _drop_common(side_a: dict, side_b: dict):
        for cid in set(side_a) & set(side_b):
            del side_a[cid]
            del side_b[cid]

    # -- audit --------------------------------------------------------------

    def verify_canonical(self, ref: TreeRef) -> bool:
        """True iff the tree equals a from-scratch build of its own contents."""
        rebuilt = self.build(self.scan(ref), ref.policy)
        return rebuilt.root == ref.root and rebuilt.height == ref.height

    def leaf_stats(self, ref: TreeRef) -> tuple[float, int, int]:
        """(mean entries per leaf, max, leaf count) of the materialized tree."""
        if ref.height == 0:
            return (0.0, 0, 0)
        counts = []
        for _, cid in self.leaf_descriptors(ref):
            counts.append(len(self._leaf_entries(cid)))
        return (sum(counts) / len(counts), max(counts), len(counts))
