"""The snapshot graph: branches, commits, merges, history, and persistence.

A snapshot is a point-in-time database state: a schema digest plus one
chunk-tree root per (table, attribute group), content-addressed so that its
id is a deterministic function of contents and parent edges. Snapshots form
a DAG; branches are named linear chains whose heads alone accept commits.
Every edge carries an annotation (what kind of derivation, description,
provenance, change summary), which is the substrate for log and blame.

Correctness rules enforced here:

1. Commits addressed to a snapshot that is not the branch head are
   rejected (NotHead).
2. The target branch of an active unidirectional sync rejects direct
   commits until the sync is disassociated (SyncTargetImmutable).
3. A unidirectional-sync target can never join a bidirectional sync
   (IllegalSyncTopology, enforced in the sync engine).

Persistence is an append-only manifest log (``<root>/manifest.log``), one
tab-separated record per event with a JSON payload; replaying it
reconstructs the entire graph, branch set, sync state, and alert history.
Chunk data lives in the content-addressable store under the same root.

Schema changes fork a new chain. In lazy mode the affected trees are
virtual chunks whose recipes transform the old roots on first access, so
the change itself writes no data. Views are branches fed by a
unidirectional sync edge carrying a filter/project transform.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .changes import ChangeSummary, CommitDelta, RowDelta, summarize
from .chunker import ChunkingPolicy, Entry
from .errors import (
    DirectionUnavailable,
    LdbError,
    MaterializationError,
    MergeConflict,
    NameTaken,
    NotBidirectionallyCompatible,
    NotFound,
    NotHead,
    SchemaError,
    SchemaMismatch,
    SyncTargetImmutable,
    InvalidInput,
)
from .evolution import (
    Direction,
    SchemaChangeKind,
    SchemaChangeOp,
    SyncCapability,
    TransformKind,
    TransformOp,
    apply_to_schema,
    classify,
    resolve_op,
)
from .relation import (
    AttributeGroup,
    Schema,
    assemble_tuple,
    decode_key,
    encode_key,
    split_tuple,
    validate_row,
)
from .store import ChunkId, ChunkStore, EMPTY_CHUNK_ID, Recipe
from .syncing import (
    Alert,
    BranchRole,
    Condition,
    EdgeState,
    Frequency,
    FrequencyKind,
    SyncDirection,
    SyncEdge,
    SyncEngine,
)
from .tree import GroupLeafCodec, Mutation, MutationOp, ProllyTree, TreeRef
from .views import ViewDef, validate_view

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.log"
ALERTS_NAME = "alerts.log"


@dataclass(frozen=True, order=True)
class SnapshotId:
    digest: bytes

    @property
    def hex(self) -> str:
        return self.digest.hex()

    @classmethod
    def from_hex(cls, s: str) -> "SnapshotId":
        return cls(bytes.fromhex(s))

    def __repr__(self):
        return f"SnapshotId({self.hex[:12]})"


class EdgeKind(str, Enum):
    DML = "dml"
    SCHEMA_CHANGE = "schema_change"
    VIEW_DEFINITION = "view_definition"
    CLONE = "clone"
    MERGE = "merge"
    AUTO_PROPAGATION = "auto_propagation"


@dataclass(frozen=True)
class Provenance:
    branch: str
    actor: str
    ts: int

    def to_json(self):
        return {"branch": self.branch, "actor": self.actor, "ts": self.ts}

    @classmethod
    def from_json(cls, d):
        return cls(d["branch"], d["actor"], d["ts"])


@dataclass(frozen=True)
class EdgeAnnotation:
    kind: EdgeKind
    description: str
    provenance: Provenance
    change_summary: ChangeSummary | None = None

    def to_json(self):
        return {
            "kind": self.kind.value,
            "description": self.description,
            "provenance": self.provenance.to_json(),
            "summary": self.change_summary.to_json() if self.change_summary else None,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            EdgeKind(d["kind"]), d["description"], Provenance.from_json(d["provenance"]),
            ChangeSummary.from_json(d["summary"]) if d["summary"] else None,
        )


@dataclass
class Snapshot:
    sid: SnapshotId
    schema_digest: str
    tables: dict  # table -> {group_id -> TreeRef}
    parents: list  # [(SnapshotId, EdgeAnnotation)]
    created_at: int


@dataclass(frozen=True)
class WriteOp:
    """One logical row operation addressed to a table."""

    op: str  # insert | update | delete
    table: str
    key: object
    values: dict | None = None


@dataclass
class Branch:
    bid: str
    name: str
    head: SnapshotId
    chain: list = field(default_factory=list)
    role: BranchRole = BranchRole.FREE
    schema_digest: str = ""


def compute_schema_digest(tables: dict[str, Schema]) -> str:
    doc = {name: schema.to_json() for name, schema in sorted(tables.items())}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(b"LDSC" + blob).hexdigest()


def _canonical(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


class Database:
    """Embedded engine instance rooted at a directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.store = ChunkStore(self.root)
        self.policy: ChunkingPolicy | None = None
        self.schemas: dict[str, dict[str, Schema]] = {}
        self.snapshots: dict[SnapshotId, Snapshot] = {}
        self.branches: dict[str, Branch] = {}
        self.names: dict[str, str] = {}
        self.sync = SyncEngine(self)
        self._clock = 0
        self._branch_seq = 0
        self._codecs: dict[tuple, GroupLeafCodec] = {}
        self._materialized: dict[ChunkId, TreeRef] = {}
        self._known_refs: dict[ChunkId, TreeRef] = {}
        self._replaying = False
        self._lock = threading.RLock()
        self._manifest = None
        self.store.set_materializer(self._materialize_recipe)

    # ------------------------------------------------------------------
    # Creation and persistence
    # ------------------------------------------------------------------

    @classmethod
    def create(cls, root: str | Path, tables: dict[str, Schema],
               policy: ChunkingPolicy, actor: str = "init") -> "Database":
        root = Path(root)
        manifest = root / MANIFEST_NAME
        if manifest.exists():
            raise LdbError(f"database already exists at {root}")
        root.mkdir(parents=True, exist_ok=True)
        db = cls(root)
        db.policy = policy
        db._manifest = open(manifest, "a", encoding="utf-8")
        db._append("INIT", json.dumps({"policy": policy.to_json(), "version": 1}))
        digest = db._register_schema(tables)
        empty = {
            t: {g.group_id: TreeRef(EMPTY_CHUNK_ID, 0, policy, 0) for g in s.groups}
            for t, s in tables.items()
        }
        snap = db._new_snapshot(digest, empty, [])
        db._create_branch_obj("main", snap.sid, digest,
                              note={"kind": "init", "actor": actor})
        return db

    @classmethod
    def open(cls, root: str | Path) -> "Database":
        root = Path(root)
        manifest = root / MANIFEST_NAME
        if not manifest.exists():
            raise NotFound(f"no database at {root}")
        db = cls(root)
        db._replaying = True
        try:
            with open(manifest, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.rstrip("\n")
                    if line:
                        db._replay_record(line.split("\t"))
        finally:
            db._replaying = False
        db._manifest = open(manifest, "a", encoding="utf-8")
        return db

    def close(self):
        if self._manifest:
            self._manifest.close()
            self._manifest = None

    def _append(self, *fields: str):
        if self._replaying:
            return
        self._manifest.write("\t".join(fields) + "\n")
        self._manifest.flush()

    # -- record handlers ------------------------------------------------

    def _replay_record(self, parts: list[str]):
        kind = parts[0]
        if kind == "INIT":
            doc = json.loads(parts[1])
            self.policy = ChunkingPolicy.from_json(doc["policy"])
        elif kind == "SCHEMA":
            digest, payload = parts[1], json.loads(parts[2])
            self.schemas[digest] = {
                t: Schema.from_json(s) for t, s in payload["tables"].items()}
        elif kind == "SNAPSHOT":
            sid = SnapshotId.from_hex(parts[1])
            created = int(parts[2])
            digest = parts[3]
            doc = json.loads(parts[4])
            tables = {}
            for t, groups in doc["tables"].items():
                tables[t] = {}
                for gid, rj in groups.items():
                    ref = TreeRef(ChunkId.from_hex(rj["root"]), rj["height"],
                                  self.policy, rj["count"])
                    tables[t][int(gid)] = ref
                    if ref.height >= 0:
                        self._known_refs[ref.root] = ref
            self.snapshots[sid] = Snapshot(sid, digest, tables, [], created)
            self._clock = max(self._clock, created)
        elif kind == "EDGE":
            child = SnapshotId.from_hex(parts[1])
            parent = SnapshotId.from_hex(parts[2])
            ann = EdgeAnnotation.from_json(json.loads(parts[3]))
            self.snapshots[child].parents.append((parent, ann))
            self._clock = max(self._clock, ann.provenance.ts)
        elif kind == "BRANCH":
            self._replay_branch(parts[1], json.loads(parts[2]))
        elif kind == "SYNC":
            self._replay_sync(parts[1], parts[2], json.loads(parts[3]))
        elif kind == "MATERIALIZED":
            vid = ChunkId.from_hex(parts[1])
            doc = json.loads(parts[2])
            ref = TreeRef(ChunkId.from_hex(doc["root"]), doc["height"],
                          self.policy, doc["count"])
            self._materialized[vid] = ref
            self._known_refs.setdefault(ref.root, ref)
        elif kind == "ALERT":
            self.sync.alerts.append(Alert.from_json(json.loads(parts[1])))
        else:
            raise LdbError(f"unknown manifest record {kind!r}")

    def _replay_branch(self, action: str, doc: dict):
        if action == "create":
            b = Branch(doc["bid"], doc["name"], SnapshotId.from_hex(doc["head"]),
                       role=BranchRole(doc["role"]), schema_digest=doc["schema"])
            b.chain = self._first_parent_chain(b.head)
            self.branches[b.bid] = b
            self.names[b.name] = b.bid
            self._branch_seq = max(self._branch_seq, int(b.bid[1:]))
        elif action == "advance":
            b = self.branches[doc["bid"]]
            b.head = SnapshotId.from_hex(doc["head"])
            b.chain.append(b.head)
        elif action == "rename":
            b = self.branches[doc["bid"]]
            self.names.pop(b.name, None)
            b.name = doc["name"]
            self.names[b.name] = b.bid
        elif action == "role":
            self.branches[doc["bid"]].role = BranchRole(doc["role"])
        else:
            raise LdbError(f"unknown branch record {action!r}")

    def _replay_sync(self, action: str, edge_id: str, doc: dict):
        eng = self.sync
        if action == "attach":
            edge = SyncEdge(
                doc["id"], doc["source"], doc["target"],
                SyncDirection(doc["direction"]),
                TransformOp.from_json(doc["forward"]),
                TransformOp.from_json(doc["reverse"]) if doc["reverse"] else None,
                tuple(Condition.from_json(c) for c in doc["conditions"]),
                Frequency.from_json(doc["frequency"]),
                last_fired_tick=doc["last_fired"],
            )
            eng.edges[edge.edge_id] = edge
            eng._next_edge = max(eng._next_edge, int(edge.edge_id[1:]) + 1)
        elif action == "enqueue":
            edge = eng.edges[edge_id]
            q = edge.pending_fwd if doc["dir"] == "fwd" else edge.pending_rev
            q.append(SnapshotId.from_hex(doc["snapshot"]))
        elif action == "flush":
            edge = eng.edges[edge_id]
            q = edge.pending_fwd if doc["dir"] == "fwd" else edge.pending_rev
            del q[:doc["count"]]
        elif action == "fired":
            eng.edges[edge_id].last_fired_tick = doc["tick"]
        elif action == "disassociate":
            edge = eng.edges[edge_id]
            edge.state = EdgeState.DISASSOCIATED
            edge.reason = doc["reason"]
            edge.pending_fwd.clear()
            edge.pending_rev.clear()
        elif action == "tick":
            eng.tick_now = doc["now"]
        else:
            raise LdbError(f"unknown sync record {action!r}")

    def log_sync(self, action: str, edge_id: str, doc: dict):
        self._append("SYNC", action, edge_id, json.dumps(doc, sort_keys=True))

    def log_alert(self, alert: Alert):
        self._append("ALERT", json.dumps(alert.to_json(), sort_keys=True))
        if not self._replaying:
            with open(self.root / ALERTS_NAME, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(alert.to_json(), sort_keys=True) + "\n")

    # ------------------------------------------------------------------
    # Lookups and small helpers
    # ------------------------------------------------------------------

    def branch(self, name: str) -> Branch:
        bid = self.names.get(name)
        if bid is None:
            raise NotFound(f"no branch named {name!r}")
        return self.branches[bid]

    def branch_by_id(self, bid: str) -> Branch:
        try:
            return self.branches[bid]
        except KeyError:
            raise NotFound(f"no branch id {bid}") from None

    def set_branch_role(self, bid: str, role: BranchRole):
        b = self.branches[bid]
        if b.role is not role:
            b.role = role
            self._append("BRANCH", "role", json.dumps({"bid": bid, "role": role.value}))

    def snapshot(self, sid: SnapshotId) -> Snapshot:
        try:
            return self.snapshots[sid]
        except KeyError:
            raise NotFound(f"no snapshot {sid.hex[:12]}") from None

    def head_of(self, name: str) -> SnapshotId:
        return self.branch(name).head

    def stats(self):
        return self.store.stats()

    def tick(self, now: int):
        self.sync.tick(now)

    def alerts(self) -> list[Alert]:
        return list(self.sync.alerts)

    def _codec(self, digest: str, table: str, gid: int) -> GroupLeafCodec:
        key = (digest, table, gid)
        codec = self._codecs.get(key)
        if codec is None:
            schema = self.schemas[digest][table]
            group = next(g for g in schema.groups if g.group_id == gid)
            codec = GroupLeafCodec(schema, group)
            self._codecs[key] = codec
        return codec

    def _tree(self, digest: str, table: str, gid: int) -> ProllyTree:
        return ProllyTree(self.store, self._codec(digest, table, gid))

    def _register_schema(self, tables: dict[str, Schema]) -> str:
        digest = compute_schema_digest(tables)
        if digest not in self.schemas:
            self.schemas[digest] = dict(tables)
            payload = {"tables": {t: s.to_json() for t, s in tables.items()}}
            self._append("SCHEMA", digest, json.dumps(payload, sort_keys=True))
        return digest

    def _first_parent_chain(self, head: SnapshotId) -> list[SnapshotId]:
        chain = [head]
        cur = self.snapshots[head]
        while cur.parents:
            pid = cur.parents[0][0]
            chain.append(pid)
            cur = self.snapshots[pid]
        chain.reverse()
        return chain

    # ------------------------------------------------------------------
    # Snapshot construction
    # ------------------------------------------------------------------

    def _snapshot_digest(self, schema_digest: str, tables: dict, parents: list) -> SnapshotId:
        doc = {
            "schema": schema_digest,
            "tables": {
                t: {str(gid): ref.root.hex for gid, ref in groups.items()}
                for t, groups in tables.items()
            },
            "parents": [[pid.hex, ann.to_json()] for pid, ann in parents],
        }
        return SnapshotId(hashlib.sha256(b"LDS1" + _canonical(doc)).digest())

    def _new_snapshot(self, schema_digest: str, tables: dict, parents: list) -> Snapshot:
        self._clock += 1
        sid = self._snapshot_digest(schema_digest, tables, parents)
        snap = Snapshot(sid, schema_digest, tables, list(parents), self._clock)
        self.snapshots[sid] = snap
        doc = {
            "tables": {
                t: {str(gid): ref.to_json() for gid, ref in groups.items()}
                for t, groups in tables.items()
            }
        }
        self._append("SNAPSHOT", sid.hex, str(snap.created_at), schema_digest,
                     json.dumps(doc, sort_keys=True))
        for pid, ann in parents:
            self._append("EDGE", sid.hex, pid.hex, json.dumps(ann.to_json(), sort_keys=True))
        for groups in tables.values():
            for ref in groups.values():
                if ref.height >= 0:
                    self._known_refs[ref.root] = ref
        return snap

    def _create_branch_obj(self, name: str, head: SnapshotId, schema_digest: str,
                           note: dict | None = None) -> Branch:
        if name in self.names:
            raise NameTaken(f"branch name {name!r} already in use")
        self._branch_seq += 1
        b = Branch(f"b{self._branch_seq}", name, head, schema_digest=schema_digest)
        b.chain = self._first_parent_chain(head)
        self.branches[b.bid] = b
        self.names[name] = b.bid
        doc = {"bid": b.bid, "name": name, "head": head.hex,
               "role": b.role.value, "schema": schema_digest}
        if note:
            doc["note"] = note
        self._append("BRANCH", "create", json.dumps(doc, sort_keys=True))
        return b

    def _advance(self, branch: Branch, sid: SnapshotId):
        branch.head = sid
        branch.chain.append(sid)
        self._append("BRANCH", "advance", json.dumps({"bid": branch.bid, "head": sid.hex}))

    # ------------------------------------------------------------------
    # Commits
    # ------------------------------------------------------------------

    def commit(self, branch_name: str, ops: list[WriteOp], *,
               at: SnapshotId | None = None, actor: str = "user") -> SnapshotId:
        """Apply row operations to a branch head; returns the new snapshot id."""
        with self._lock:
            branch = self.branch(branch_name)
            if at is not None and at != branch.head:
                raise NotHead(
                    f"commit addressed to {at.hex[:12]} but head is {branch.head.hex[:12]}")
            if branch.role is BranchRole.UNI_TARGET:
                raise SyncTargetImmutable(
                    f"branch {branch_name} is the target of an active unidirectional sync")
            desc = f"{len(ops)} ops" if ops else "empty commit"
            return self._do_commit(branch, ops, EdgeKind.DML, desc, actor,
                                   origin_edge=None, visited=frozenset(), upsert=False)

    def propagation_commit(self, target_bid: str, delta: CommitDelta, edge_id: str,
                           source_snapshot: SnapshotId, visited: frozenset) -> SnapshotId:
        """Internal commit used by the sync engine; bypasses the target guard."""
        branch = self.branch_by_id(target_bid)
        ops = []
        for table, rd in delta.items():
            for pk, row in rd.added:
                ops.append(WriteOp("insert", table, pk, row))
            for pk, _old, new in rd.modified:
                ops.append(WriteOp("update", table, pk, new))
            for pk, _row in rd.removed:
                ops.append(WriteOp("delete", table, pk))
        desc = f"auto-propagation of {source_snapshot.hex[:12]} via {edge_id}"
        return self._do_commit(branch, ops, EdgeKind.AUTO_PROPAGATION, desc,
                               f"sync:{edge_id}", origin_edge=edge_id,
                               visited=visited, upsert=True)

    def _do_commit(self, branch: Branch, ops: list[WriteOp], kind: EdgeKind,
                   desc: str, actor: str, origin_edge: str | None,
                   visited: frozenset, upsert: bool) -> SnapshotId:
        head_snap = self.snapshot(branch.head)
        schema_tables = self.schemas[branch.schema_digest]
        by_table: dict[str, list[WriteOp]] = {}
        for op in ops:
            if op.table not in schema_tables:
                raise NotFound(f"no table {op.table!r}")
            by_table.setdefault(op.table, []).append(op)
        new_tables = {t: dict(groups) for t, groups in head_snap.tables.items()}
        delta: CommitDelta = {}
        pre_counts: dict[str, int] = {}
        for table, table_ops in by_table.items():
            schema = schema_tables[table]
            refs = {gid: self._resolve_ref(ref)
                    for gid, ref in head_snap.tables[table].items()}
            pre_counts[table] = refs[schema.groups[0].group_id].entry_count
            rd, per_group = self._prepare_table_ops(branch.schema_digest, schema,
                                                    refs, table_ops, upsert)
            delta[table] = rd
            for gid, muts in per_group.items():
                if muts:
                    tree = self._tree(branch.schema_digest, table, gid)
                    new_tables[table][gid] = tree.apply(refs[gid], muts)
                else:
                    new_tables[table][gid] = refs[gid]
        summary = summarize(delta, pre_counts)
        ann = EdgeAnnotation(kind, desc, Provenance(branch.name, actor, self._clock + 1),
                             summary)
        snap = self._new_snapshot(branch.schema_digest, new_tables, [(branch.head, ann)])
        self._advance(branch, snap.sid)
        self.sync.on_commit(branch.bid, snap.sid, delta, summary, origin_edge, visited)
        return snap.sid

    def _prepare_table_ops(self, digest: str, schema: Schema, refs: dict,
                           table_ops: list[WriteOp], upsert: bool):
        pk_col = schema.pk_column()
        trees = {gid: self._tree(digest, schema.table_name, gid) for gid in refs}
        seen: set = set()
        added, removed, modified = [], [], []
        bad_keys: list = []

        def current_row(kb: bytes, pk) -> dict | None:
            slices = {}
            for g in schema.groups:
                v = trees[g.group_id].lookup(refs[g.group_id], kb)
                if v is None:
                    return None
                slices[g.group_id] = (pk,) + v
            return assemble_tuple(schema, slices)

        for op in table_ops:
            pk = op.key
            kb = encode_key(pk_col.type, pk)
            if kb in seen:
                raise InvalidInput(f"duplicate key {pk!r} in one commit")
            seen.add(kb)
            old = current_row(kb, pk)
            if op.op == "insert":
                if old is not None:
                    if not upsert:
                        bad_keys.append(pk)
                        continue
                    new = validate_row(schema, {**old, **(op.values or {}),
                                                schema.primary_key: pk})
                    if new != old:
                        modified.append((pk, old, new))
                    continue
                new = validate_row(schema, {**(op.values or {}), schema.primary_key: pk})
                added.append((pk, new))
            elif op.op == "update":
                if old is None:
                    if not upsert:
                        bad_keys.append(pk)
                        continue
                    new = validate_row(schema, {**(op.values or {}), schema.primary_key: pk})
                    added.append((pk, new))
                    continue
                new = validate_row(schema, {**old, **(op.values or {}),
                                            schema.primary_key: pk})
                if new != old:
                    modified.append((pk, old, new))
            elif op.op == "delete":
                if old is None:
                    if not upsert:
                        bad_keys.append(pk)
                    continue
                removed.append((pk, old))
            else:
                raise InvalidInput(f"unknown op {op.op!r}")
        if bad_keys:
            from .errors import ConstraintViolation
            raise ConstraintViolation(
                f"{schema.table_name}: key-existence violations: "
                f"{', '.join(repr(k) for k in bad_keys[:5])}"
                f"{' ...' if len(bad_keys) > 5 else ''}", bad_keys)

        per_group: dict[int, list[Mutation]] = {g.group_id: [] for g in schema.groups}
        for pk, row in added:
            kb = encode_key(pk_col.type, pk)
            for gid, sl in split_tuple(schema, row).items():
                per_group[gid].append(Mutation(MutationOp.INSERT, kb, sl[1:]))
        for pk, old, new in modified:
            kb = encode_key(pk_col.type, pk)
            old_slices = split_tuple(schema, old)
            for gid, sl in split_tuple(schema, new).items():
                if sl != old_slices[gid]:
                    per_group[gid].append(Mutation(MutationOp.UPDATE, kb, sl[1:]))
        for pk, _row in removed:
            kb = encode_key(pk_col.type, pk)
            for gid in per_group:
                per_group[gid].append(Mutation(MutationOp.DELETE, kb))
        for muts in per_group.values():
            muts.sort(key=lambda m: m.key)
        rd = RowDelta(
            tuple(sorted(added, key=lambda x: repr(x[0]))),
            tuple(sorted(removed, key=lambda x: repr(x[0]))),
            tuple(sorted(modified, key=lambda x: repr(x[0]))),
        )
        return rd, per_group

    # ------------------------------------------------------------------
    # Branching and merge
    # ------------------------------------------------------------------

    def create_branch(self, name: str, source: str, actor: str = "user") -> Branch:
        """Fork a branch at another branch's head or at any snapshot. Writes
        no data chunks; the new branch shares every tree."""
        with self._lock:
            snap = self._resolve_snapshot(source)
            note = {"kind": EdgeKind.CLONE.value, "actor": actor, "from": source,
                    "at": snap.sid.hex, "ts": self._clock}
            return self._create_branch_obj(name, snap.sid, snap.schema_digest, note)

    def _resolve_snapshot(self, target: str) -> Snapshot:
        if target in self.names:
            return self.snapshot(self.branch(target).head)
        try:
            sid = SnapshotId.from_hex(target)
        except ValueError:
            raise NotFound(f"no branch or snapshot {target!r}") from None
        return self.snapshot(sid)

    def lowest_common_ancestor(self, a: SnapshotId, b: SnapshotId) -> SnapshotId:
        anc_a = self._ancestors(a)
        anc_b = self._ancestors(b)
        common = anc_a & anc_b
        if not common:
            raise LdbError("snapshots share no ancestor")
        return max(common, key=lambda s: (self.snapshots[s].created_at,
                                          [-x for x in s.digest]))

    def _ancestors(self, sid: SnapshotId) -> set:
        out = set()
        stack = [sid]
        while stack:
            cur = stack.pop()
            if cur in out:
                continue
            out.add(cur)
            stack.extend(p for p, _ in self.snapshots[cur].parents)
        return out

    def merge(self, src: str, dst_branch: str, actor: str = "user") -> SnapshotId:
        """Three-way, key-level merge of src (branch or snapshot) into dst."""
        with self._lock:
            branch = self.branch(dst_branch)
            if branch.role is BranchRole.UNI_TARGET:
                raise SyncTargetImmutable(f"branch {dst_branch} is a sync target")
            src_snap = self._resolve_snapshot(src)
            dst_snap = self.snapshot(branch.head)
            if src_snap.schema_digest != dst_snap.schema_digest:
                raise SchemaMismatch("merge requires identical schemas")
            base_id = self.lowest_common_ancestor(src_snap.sid, dst_snap.sid)
            base = self.snapshot(base_id)
            src_delta = self.diff_snapshot_objs(base, src_snap)
            dst_delta = self.diff_snapshot_objs(base, dst_snap)
            conflicts = []
            ops: list[WriteOp] = []
            for table in sorted(src_delta.keys() | dst_delta.keys()):
                s_ch = _final_states(src_delta.get(table))
                d_ch = _final_states(dst_delta.get(table))
                for pk, (s_out, _s_old) in s_ch.items():
                    if pk in d_ch:
                        d_out = d_ch[pk][0]
                        if s_out != d_out:
                            conflicts.append((table, pk, s_out, d_out))
                        continue
                    if s_out is None:
                        ops.append(WriteOp("delete", table, pk))
                    else:
                        ops.append(WriteOp("update" if _s_old is not None else "insert",
                                           table, pk, s_out))
            if conflicts:
                raise MergeConflict(conflicts)
            head_snap = self.snapshot(branch.head)
            schema_tables = self.schemas[branch.schema_digest]
            new_tables = {t: dict(g) for t, g in head_snap.tables.items()}
            delta: CommitDelta = {}
            pre_counts = {}
            by_table: dict[str, list[WriteOp]] = {}
            for op in ops:
                by_table.setdefault(op.table, []).append(op)
            for table, table_ops in by_table.items():
                schema = schema_tables[table]
                refs = {gid: self._resolve_ref(r)
                        for gid, r in head_snap.tables[table].items()}
                pre_counts[table] = refs[schema.groups[0].group_id].entry_count
                rd, per_group = self._prepare_table_ops(branch.schema_digest, schema,
                                                        refs, table_ops, upsert=True)
                delta[table] = rd
                for gid, muts in per_group.items():
                    if muts:
                        tree = self._tree(branch.schema_digest, table, gid)
                        new_tables[table][gid] = tree.apply(refs[gid], muts)
                    else:
                        new_tables[table][gid] = refs[gid]
            summary = summarize(delta, pre_counts)
            ann = EdgeAnnotation(
                EdgeKind.MERGE,
                f"merge {src_snap.sid.hex[:12]} (base {base_id.hex[:12]})",
                Provenance(branch.name, actor, self._clock + 1), summary)
            snap = self._new_snapshot(branch.schema_digest, new_tables,
                                      [(branch.head, ann), (src_snap.sid, ann)])
            self._advance(branch, snap.sid)
            self.sync.on_commit(branch.bid, snap.sid, delta, summary, None, frozenset())
            return snap.sid

    # ------------------------------------------------------------------
    # Reads, diff, log, blame
    # ------------------------------------------------------------------

    def _resolve_ref(self, ref: TreeRef) -> TreeRef:
        if ref.height >= 0:
            return ref
        got = self._materialized.get(ref.root)
        if got is None:
            self.store.materialize(ref.root)
            got = self._materialized[ref.root]
        return got

    def _resolve_read_target(self, target: str) -> Snapshot:
        if target in self.names:
            branch = self.branch(target)
            self.sync.flush_for_read(branch.bid)
            return self.snapshot(branch.head)
        return self._resolve_snapshot(target)

    def read_row(self, target: str, table: str, pk) -> dict | None:
        """Assembled row at a branch head or any historical snapshot."""
        with self._lock:
            snap = self._resolve_read_target(target)
            return self._row_at(snap, table, pk)

    def _row_at(self, snap: Snapshot, table: str, pk) -> dict | None:
        schema = self._schema_of(snap, table)
        kb = encode_key(schema.pk_column().type, pk)
        slices = {}
        for g in schema.groups:
            tree = self._tree(snap.schema_digest, table, g.group_id)
            ref = self._resolve_ref(snap.tables[table][g.group_id])
            v = tree.lookup(ref, kb)
            if v is None:
                return None
            slices[g.group_id] = (pk,) + v
        return assemble_tuple(schema, slices)

    def _schema_of(self, snap: Snapshot, table: str) -> Schema:
        tables = self.schemas[snap.schema_digest]
        if table not in tables:
            raise NotFound(f"no table {table!r} in this schema")
        return tables[table]

    def scan_rows(self, target: str, table: str, lo=None, hi=None) -> list[tuple]:
        """Ordered (pk, row) pairs with lo <= pk < hi at the target state."""
        with self._lock:
            snap = self._resolve_read_target(target)
            return self._scan_at(snap, table, lo, hi)

    def _scan_at(self, snap: Snapshot, table: str, lo=None, hi=None) -> list[tuple]:
        schema = self._schema_of(snap, table)
        pk_type = schema.pk_column().type
        lo_b = encode_key(pk_type, lo) if lo is not None else None
        hi_b = encode_key(pk_type, hi) if hi is not None else None
        per_group: dict[int, list[Entry]] = {}
        for g in schema.groups:
            tree = self._tree(snap.schema_digest, table, g.group_id)
            ref = self._resolve_ref(snap.tables[table][g.group_id])
            per_group[g.group_id] = tree.scan(ref, lo_b, hi_b)
        first = schema.groups[0].group_id
        n = len(per_group[first])
        out = []
        for i in range(n):
            kb = per_group[first][i].key
            pk = decode_key(pk_type, kb)
            slices = {}
            for g in schema.groups:
                e = per_group[g.group_id][i]
                if e.key != kb:
                    raise LdbError("attribute group trees disagree on key set")
                slices[g.group_id] = (pk,) + e.value
            out.append((pk, assemble_tuple(schema, slices)))
        return out

    def diff_snapshots(self, a: str, b: str) -> CommitDelta:
        """Per-table row deltas between two snapshots of the same schema."""
        with self._lock:
            return self.diff_snapshot_objs(self._resolve_snapshot(a),
                                           self._resolve_snapshot(b))

    def diff_snapshot_objs(self, a: Snapshot, b: Snapshot) -> CommitDelta:
        if a.schema_digest != b.schema_digest:
            raise SchemaMismatch("cross-schema diff is not supported")
        out: CommitDelta = {}
        for table, schema in self.schemas[a.schema_digest].items():
            rd = self._diff_table(a, b, table, schema)
            if not rd.is_empty():
                out[table] = rd
        return out

    def _diff_table(self, a: Snapshot, b: Snapshot, table: str, schema: Schema) -> RowDelta:
        pk_type = schema.pk_column().type
        per_group = {}
        for g in schema.groups:
            tree = self._tree(a.schema_digest, table, g.group_id)
            ra = self._resolve_ref(a.tables[table][g.group_id])
            rb = self._resolve_ref(b.tables[table][g.group_id])
            per_group[g.group_id] = tree.diff(ra, rb)
        first = schema.groups[0].group_id
        added_keys = [e.key for e in per_group[first].added]
        removed_keys = [e.key for e in per_group[first].removed]
        modified_keys = sorted({k for d in per_group.values() for k, _, _ in d.modified})
        added_maps = {gid: {e.key: e.value for e in d.added} for gid, d in per_group.items()}
        removed_maps = {gid: {e.key: e.value for e in d.removed} for gid, d in per_group.items()}
        mod_maps = {gid: {k: (o, n) for k, o, n in d.modified} for gid, d in per_group.items()}

        def assemble(kb, maps, snap):
            pk = decode_key(pk_type, kb)
            slices = {}
            for g in schema.groups:
                v = maps[g.group_id].get(kb)
                if v is None:
                    tree = self._tree(snap.schema_digest, table, g.group_id)
                    ref = self._resolve_ref(snap.tables[table][g.group_id])
                    v = tree.lookup(ref, kb)
                slices[g.group_id] = (pk,) + v
            return pk, assemble_tuple(schema, slices)

        added = tuple(assemble(kb, added_maps, b) for kb in added_keys)
        removed = tuple(assemble(kb, removed_maps, a) for kb in removed_keys)
        modified = []
        for kb in modified_keys:
            pk, old = assemble(kb, {g: {k: o for k, (o, _) in mod_maps[g].items()}
                                    for g in mod_maps}, a)
            _, new = assemble(kb, {g: {k: n for k, (_, n) in mod_maps[g].items()}
                                   for g in mod_maps}, b)
            modified.append((pk, old, new))
        return RowDelta(added, removed, tuple(modified))

    def commit_delta_of(self, sid: SnapshotId) -> CommitDelta:
        """The changes one snapshot introduced over its chain parent."""
        snap = self.snapshot(sid)
        if not snap.parents:
            return {}
        return self.diff_snapshot_objs(self.snapshot(snap.parents[0][0]), snap)

    def log(self, branch_name: str) -> list[tuple[SnapshotId, EdgeAnnotation | None]]:
        """Chain from root to head with the annotation that produced each entry."""
        branch = self.branch(branch_name)
        out = []
        prev = None
        for sid in branch.chain:
            snap = self.snapshot(sid)
            ann = None
            for pid, a in snap.parents:
                if prev is not None and pid == prev:
                    ann = a
                    break
            out.append((sid, ann))
            prev = sid
        return out

    def blame(self, branch_name: str, table: str, pk) -> tuple[SnapshotId, EdgeAnnotation]:
        """Most recent snapshot on the branch whose changes touched the key."""
        branch = self.branch(branch_name)
        chain = branch.chain
        current = self._row_at(self.snapshot(branch.head), table, pk)
        if current is None:
            raise NotFound(f"key {pk!r} not present in {table} at {branch_name} head")
        for i in range(len(chain) - 1, -1, -1):
            snap = self.snapshot(chain[i])
            here = self._row_at(snap, table, pk)
            if i == 0:
                parent_row = None
            else:
                parent_row = self._row_at(self.snapshot(chain[i - 1]), table, pk)
            if here != parent_row:
                ann = None
                if i > 0:
                    for pid, a in snap.parents:
                        if pid == chain[i - 1]:
                            ann = a
                            break
                return snap.sid, ann
        raise NotFound(f"no change found for {pk!r}")  # unreachable for present keys

    # ------------------------------------------------------------------
    # Schema evolution
    # ------------------------------------------------------------------

    def apply_schema_change(self, branch_name: str, op: SchemaChangeOp, *,
                            sync: str | None = None, lazy: bool = False,
                            carry_name: bool = False, new_name: str | None = None,
                            actor: str = "user") -> Branch:
        """Fork a new chain under the changed schema.

        ``sync``: None, "bi", "fwd" (old feeds new), or "rev" (new feeds old).
        ``lazy`` replaces affected trees with virtual recipes instead of
        transforming data now. ``carry_name`` moves the branch name to the
        new chain, renaming the old one ``<name>@pre-<n>``.
        """
        with self._lock:
            branch = self.branch(branch_name)
            if branch.role is BranchRole.UNI_TARGET:
                raise SyncTargetImmutable(f"branch {branch_name} is a sync target")
            cur_digest = branch.schema_digest
            cur_tables = self.schemas[cur_digest]
            if op.table not in cur_tables:
                raise SchemaError(f"no table {op.table!r}")
            rop = resolve_op(op, cur_tables[op.table])
            cap = classify(rop)
            if sync is not None:
                _check_sync_request(sync, cap)
            new_schema = apply_to_schema(rop, cur_tables[op.table])
            new_tables_map = {**cur_tables, op.table: new_schema}
            new_digest = self._register_schema(new_tables_map)
            forward = TransformOp.schema_change(rop, Direction.FORWARD, cur_digest)
            reverse = TransformOp.schema_change(rop, Direction.REVERSE, new_digest)

            head_snap = self.snapshot(branch.head)
            new_tree_map = {t: dict(groups) for t, groups in head_snap.tables.items()}
            new_tree_map[op.table] = self._changed_table_trees(
                cur_digest, new_digest, rop, head_snap, new_schema, lazy, forward)

            summary = ChangeSummary(tables={op.table: _schema_touch()},
                                    is_schema_change=True)
            self.sync.on_schema_change(branch.bid, summary)

            ann = EdgeAnnotation(EdgeKind.SCHEMA_CHANGE, rop.describe(),
                                 Provenance(branch.name, actor, self._clock + 1), summary)
            snap = self._new_snapshot(new_digest, new_tree_map, [(branch.head, ann)])

            if carry_name:
                old_name = branch.name
                retired = self._retire_name(branch)
                new_branch = self._create_branch_obj(old_name, snap.sid, new_digest,
                                                     note={"kind": "schema_change"})
                logger.info("schema change: %s carried to new chain, old chain is %s",
                            old_name, retired)
            else:
                name = new_name or self._fresh_version_name(branch.name)
                new_branch = self._create_branch_obj(name, snap.sid, new_digest,
                                                     note={"kind": "schema_change"})

            if sync == "bi":
                self.sync.attach(branch.bid, new_branch.bid, SyncDirection.BIDIRECTIONAL,
                                 forward, reverse, (), Frequency(FrequencyKind.IMMEDIATE))
            elif sync == "fwd":
                self.sync.attach(branch.bid, new_branch.bid, SyncDirection.UNIDIRECTIONAL,
                                 forward, None, (), Frequency(FrequencyKind.IMMEDIATE))
            elif sync == "rev":
                self.sync.attach(new_branch.bid, branch.bid, SyncDirection.UNIDIRECTIONAL,
                                 reverse, None, (), Frequency(FrequencyKind.IMMEDIATE))
            return new_branch

    def _retire_name(self, branch: Branch) -> str:
        n = 1
        while f"{branch.name}@pre-{n}" in self.names:
            n += 1
        retired = f"{branch.name}@pre-{n}"
        self.names.pop(branch.name, None)
        branch.name = retired
        self.names[retired] = branch.bid
        self._append("BRANCH", "rename", json.dumps({"bid": branch.bid, "name": retired}))
        return retired

    def _fresh_version_name(self, base: str) -> str:
        n = 2
        while f"{base}@v{n}" in self.names:
            n += 1
        return f"{base}@v{n}"

    def _changed_table_trees(self, old_digest: str, new_digest: str,
                             rop: SchemaChangeOp, head_snap: Snapshot,
                             new_schema: Schema, lazy: bool,
                             forward: TransformOp) -> dict:
        old_refs = head_snap.tables[rop.table]
        old_schema = self.schemas[old_digest][rop.table]
        if rop.kind is SchemaChangeKind.RENAME_COLUMN:
            return dict(old_refs)  # chunk encodings carry no column names
        empty = all(self._resolve_ref(r).height == 0 for r in old_refs.values())
        out: dict[int, TreeRef] = {}
        if rop.kind in (SchemaChangeKind.ADD_COLUMN, SchemaChangeKind.DROP_COLUMN):
            affected = {rop.group_index}
            for g in new_schema.groups:
                if g.group_id not in affected:
                    out[g.group_id] = old_refs[g.group_id]
                    continue
                out[g.group_id] = self._derived_group_tree(
                    old_schema, [old_refs[g.group_id]],
                    [old_schema.groups[g.group_id]], forward, new_schema, g,
                    new_digest, lazy, empty)
            return out
        # regroup: every new group draws from all old groups
        sources = [old_refs[g.group_id] for g in old_schema.groups]
        in_groups = list(old_schema.groups)
        for g in new_schema.groups:
            out[g.group_id] = self._derived_group_tree(
                old_schema, sources, in_groups, forward, new_schema, g,
                new_digest, lazy, empty)
        return out

    def _derived_group_tree(self, in_schema: Schema, source_refs: list[TreeRef],
                            in_groups: list[AttributeGroup], transform: TransformOp,
                            out_schema: Schema, out_group: AttributeGroup,
                            out_digest: str, lazy: bool, empty: bool) -> TreeRef:
        if empty:
            return TreeRef(EMPTY_CHUNK_ID, 0, self.policy, 0)
        if lazy:
            token = f"{out_digest}:{out_schema.table_name}:{out_group.group_id}"
            recipe = Recipe(transform.to_json(),
                            tuple(self._resolve_ref(r).root for r in source_refs), token)
            vid = self.store.put_virtual(recipe)
            return TreeRef(vid, -1, self.policy, -1)
        return self._transform_group_trees(in_schema, source_refs, in_groups,
                                           transform, out_schema, out_group)

    def _transform_group_trees(self, in_schema: Schema, source_refs: list[TreeRef],
                               in_groups: list[AttributeGroup], transform: TransformOp,
                               out_schema: Schema, out_group: AttributeGroup) -> TreeRef:
        """Scan input group trees in lockstep, transform rows, build the
        output group tree. Shared by eager changes and recipe materialization,
        so lazy-then-materialize equals eager chunk for chunk."""
        pk_type = in_schema.pk_column().type
        scans = []
        for ref, group in zip(source_refs, in_groups):
            codec = GroupLeafCodec(in_schema, group)
            tree = ProllyTree(self.store, codec)
            scans.append(tree.scan(self._resolve_ref(ref)))
        n = len(scans[0]) if scans else 0
        out_codec = GroupLeafCodec(out_schema, out_group)
        out_pk_type = out_schema.pk_column().type
        entries = []
        for i in range(n):
            kb = scans[0][i].key
            pk = decode_key(pk_type, kb)
            row: dict = {}
            for scan, group in zip(scans, in_groups):
                e = scan[i]
                if e.key != kb:
                    raise LdbError("input group trees disagree on key set")
                for name, v in zip(group.columns, (pk,) + e.value):
                    row[name] = v
            try:
                out_row = transform.apply_row(row)
            except DirectionUnavailable as exc:
                raise MaterializationError(f"row {pk!r}: {exc}") from exc
            if out_row is None:
                continue
            sl = tuple(out_row[name] for name in out_group.columns)
            entries.append(Entry(encode_key(out_pk_type, sl[0]), sl[1:]))
        out_tree = ProllyTree(self.store, out_codec)
        return out_tree.build(entries, self.policy)

    # ------------------------------------------------------------------
    # Views
    # ------------------------------------------------------------------

    def create_view(self, base_branch: str, viewdef: ViewDef,
                    frequency: Frequency | None = None,
                    conditions: tuple[Condition, ...] = (),
                    actor: str = "user") -> Branch:
        """New branch holding the view relation, fed by a unidirectional sync."""
        with self._lock:
            branch = self.branch(base_branch)
            base_tables = self.schemas[branch.schema_digest]
            if viewdef.base_table not in base_tables:
                raise NotFound(f"no table {viewdef.base_table!r}")
            base_schema = base_tables[viewdef.base_table]
            view_schema = validate_view(viewdef, base_schema)
            view_digest = self._register_schema({viewdef.name: view_schema})
            transform = TransformOp.for_view(viewdef, branch.schema_digest)

            head_snap = self.snapshot(branch.head)
            base_refs = [head_snap.tables[viewdef.base_table][g.group_id]
                         for g in base_schema.groups]
            empty = all(self._resolve_ref(r).height == 0 for r in base_refs)
            ref = self._derived_group_tree(
                base_schema, base_refs, list(base_schema.groups), transform,
                view_schema, view_schema.groups[0], view_digest, lazy=True, empty=empty)
            summary = ChangeSummary(tables={}, is_schema_change=False)
            ann = EdgeAnnotation(
                EdgeKind.VIEW_DEFINITION,
                json.dumps(viewdef.to_json(), sort_keys=True),
                Provenance(branch.name, actor, self._clock + 1), summary)
            snap = self._new_snapshot(view_digest, {viewdef.name: {0: ref}},
                                      [(branch.head, ann)])
            view_branch = self._create_branch_obj(viewdef.name, snap.sid, view_digest,
                                                  note={"kind": "view"})
            self.sync.attach(branch.bid, view_branch.bid, SyncDirection.UNIDIRECTIONAL,
                             transform, None, tuple(conditions),
                             frequency or Frequency(FrequencyKind.IMMEDIATE))
            return view_branch

    # ------------------------------------------------------------------
    # Sync facade
    # ------------------------------------------------------------------

    def attach_sync(self, source: str, target: str, direction: SyncDirection,
                    forward: TransformOp | None = None,
                    reverse: TransformOp | None = None,
                    conditions: tuple[Condition, ...] = (),
                    frequency: Frequency | None = None) -> SyncEdge:
        src = self.branch(source)
        tgt = self.branch(target)
        fwd = forward or TransformOp.identity()
        rev = reverse
        if rev is None and direction is SyncDirection.BIDIRECTIONAL:
            if fwd.kind is TransformKind.IDENTITY:
                rev = TransformOp.identity()
        return self.sync.attach(src.bid, tgt.bid, direction, fwd, rev,
                                tuple(conditions),
                                frequency or Frequency(FrequencyKind.IMMEDIATE))

    def sync_now(self, edge_id: str):
        self.sync.sync_now(edge_id)

    # ------------------------------------------------------------------
    # Recipe materialization
    # ------------------------------------------------------------------

    def _materialize_recipe(self, vid: ChunkId, recipe: Recipe) -> tuple[ChunkId, bytes]:
        transform = TransformOp.from_json(recipe.transform_json)
        out_digest, out_table, gid_s = recipe.group_schema.rsplit(":", 2)
        out_schema = self.schemas[out_digest][out_table]
        out_group = next(g for g in out_schema.groups if g.group_id == int(gid_s))
        in_digest = transform.source_schema
        if transform.kind is TransformKind.SCHEMA_CHANGE:
            in_table = transform.op.table
        elif transform.kind is TransformKind.VIEW:
            in_table = transform.view.base_table
        else:
            in_table = out_table
        in_schema = self.schemas[in_digest][in_table]
        in_groups = self._input_groups_for(transform, in_schema, out_group)
        source_refs = [self._ref_for_root(cid) for cid in recipe.sources]
        try:
            ref = self._transform_group_trees(in_schema, source_refs, in_groups,
                                              transform, out_schema, out_group)
        except MaterializationError as exc:
            raise MaterializationError(f"recipe {vid.hex[:12]}: {exc}") from exc
        self._materialized[vid] = ref
        self._append("MATERIALIZED", vid.hex, json.dumps(
            {"root": ref.root.hex, "height": ref.height, "count": ref.entry_count}))
        if ref.height == 0:
            return ref.root, b""
        return ref.root, self.store.get(ref.root).payload

    def _input_groups_for(self, transform: TransformOp, in_schema: Schema,
                          out_group: AttributeGroup) -> list[AttributeGroup]:
        if transform.kind is TransformKind.SCHEMA_CHANGE:
            op = transform.op
            if op.kind in (SchemaChangeKind.ADD_COLUMN, SchemaChangeKind.DROP_COLUMN):
                return [in_schema.groups[op.group_index]]
            return list(in_schema.groups)
        if transform.kind is TransformKind.VIEW:
            return list(in_schema.groups)
        return [next(g for g in in_schema.groups if g.group_id == out_group.group_id)]

    def _ref_for_root(self, cid: ChunkId) -> TreeRef:
        if cid == EMPTY_CHUNK_ID:
            return TreeRef(EMPTY_CHUNK_ID, 0, self.policy, 0)
        if cid in self._materialized:
            return self._materialized[cid]
        known = self._known_refs.get(cid)
        if known is not None:
            return known
        resolved = self.store.resolve(cid)
        chunk = self.store.get(resolved)
        from .store import ChunkKind
        if chunk.kind is ChunkKind.VIRTUAL:
            self.store.materialize(resolved)
            return self._materialized[resolved]
        # derive height by walking the leftmost spine
        height = 1
        cur = chunk
        from .tree import decode_interior
        while cur.kind is ChunkKind.INTERIOR:
            height += 1
            child = ChunkId(decode_interior(cur.payload)[0].value)
            cur = self.store.get(child)
        return TreeRef(resolved, height, self.policy, -1)


def _group(schema: Schema, gid: int) -> AttributeGroup:
    return next(g for g in schema.groups if g.group_id == gid)


def _final_states(rd: RowDelta | None) -> dict:
    """pk -> (final row or None, old row or None) for one side of a merge."""
    out = {}
    if rd is None:
        return out
    for pk, row in rd.added:
        out[pk] = (row, None)
    for pk, row in rd.removed:
        out[pk] = (None, row)
    for pk, old, new in rd.modified:
        out[pk] = (new, old)
    return out


def _check_sync_request(sync: str, cap: SyncCapability):
    ok = {
        "bi": cap is SyncCapability.BIDIRECTIONAL,
        "fwd": cap in (SyncCapability.BIDIRECTIONAL, SyncCapability.FORWARD_ONLY),
        "rev": cap in (SyncCapability.BIDIRECTIONAL, SyncCapability.REVERSE_ONLY),
    }.get(sync)
    if ok is None:
        raise InvalidInput(f"unknown sync request {sync!r}")
    if not ok:
        raise NotBidirectionallyCompatible(
            f"schema change supports {cap.value}; requested {sync!r}")


def _schema_touch():
    from .changes import TableChange
    return TableChange(0, 0, 0, 0.0)
