"""Schema-change catalog, sync-capability classification, and row transforms.

Every schema change is a pair of row-level functions: forward maps rows
from the old schema to the new one, reverse maps them back. Which of the
two actually exist determines how the old and new branches can be kept in
sync:

    add column, with default            -> bidirectional
    add column, nullable, no default    -> bidirectional (forward fills null)
    add column, non-nullable, no default-> reverse only (nothing to fill)
    drop column, nullable               -> bidirectional (reverse fills null)
    drop column, non-nullable, default  -> bidirectional (reverse fills default)
    drop column, non-nullable, no def   -> forward only
    rename column                       -> bidirectional
    regroup attributes                  -> bidirectional (purely physical)

Forward always means old schema to new schema.

Ops are "resolved" against the live schema before use: a drop captures the
full column definition (reverse needs it to restore values), an add records
which group receives the column, a regroup records the old layout. Resolved
ops are self-contained, which keeps recipes and sync edges replayable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .changes import CommitDelta, RowDelta
from .errors import DirectionUnavailable, SchemaError
from .relation import AttributeGroup, Column, Schema
from .views import ViewDef, view_delta


class SchemaChangeKind(str, Enum):
    ADD_COLUMN = "add_column"
    DROP_COLUMN = "drop_column"
    RENAME_COLUMN = "rename_column"
    REGROUP = "regroup"


class SyncCapability(str, Enum):
    BIDIRECTIONAL = "bidirectional"
    FORWARD_ONLY = "forward_only"
    REVERSE_ONLY = "reverse_only"
    NONE = "none"


class Direction(str, Enum):
    FORWARD = "forward"
    REVERSE = "reverse"


@dataclass(frozen=True)
class SchemaChangeOp:
    kind: SchemaChangeKind
    table: str
    column: Column | None = None        # add: new def; drop: captured def
    column_name: str | None = None      # drop target
    old_name: str | None = None         # rename
    new_name: str | None = None         # rename
    new_groups: tuple[tuple[str, ...], ...] | None = None  # regroup: value cols per group
    group_index: int | None = None      # add: receiving group; drop: captured origin
    old_groups: tuple[tuple[str, ...], ...] | None = None  # regroup: captured layout

    # -- constructors --------------------------------------------------------

    @classmethod
    def add_column(cls, table: str, column: Column, group_index: int | None = None):
        return cls(SchemaChangeKind.ADD_COLUMN, table, column=column, group_index=group_index)

    @classmethod
    def drop_column(cls, table: str, name: str):
        return cls(SchemaChangeKind.DROP_COLUMN, table, column_name=name)

    @classmethod
    def rename_column(cls, table: str, old: str, new: str):
        return cls(SchemaChangeKind.RENAME_COLUMN, table, old_name=old, new_name=new)

    @classmethod
    def regroup(cls, table: str, groups: list[list[str]]):
        return cls(SchemaChangeKind.REGROUP, table,
                   new_groups=tuple(tuple(g) for g in groups))

    def describe(self) -> str:
        k = self.kind
        if k is SchemaChangeKind.ADD_COLUMN:
            c = self.column
            bits = [c.type.value]
            if c.nullable:
                bits.append("nullable")
            if c.default is not None:
                bits.append(f"default={c.default!r}")
            return f"add column {self.table}.{c.name} ({', '.join(bits)})"
        if k is SchemaChangeKind.DROP_COLUMN:
            return f"drop column {self.table}.{self.column_name}"
        if k is SchemaChangeKind.RENAME_COLUMN:
            return f"rename column {self.table}.{self.old_name} -> {self.new_name}"
        return f"regroup {self.table} into {[list(g) for g in self.new_groups]}"

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "table": self.table,
            "column": self.column.to_json() if self.column else None,
            "column_name": self.column_name,
            "old_name": self.old_name,
            "new_name": self.new_name,
            "new_groups": [list(g) for g in self.new_groups] if self.new_groups else None,
            "group_index": self.group_index,
            "old_groups": [list(g) for g in self.old_groups] if self.old_groups else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SchemaChangeOp":
        return cls(
            SchemaChangeKind(d["kind"]), d["table"],
            column=Column.from_json(d["column"]) if d["column"] else None,
            column_name=d["column_name"],
            old_name=d["old_name"], new_name=d["new_name"],
            new_groups=tuple(tuple(g) for g in d["new_groups"]) if d["new_groups"] else None,
            group_index=d["group_index"],
            old_groups=tuple(tuple(g) for g in d["old_groups"]) if d["old_groups"] else None,
        )


def resolve_op(op: SchemaChangeOp, schema: Schema) -> SchemaChangeOp:
    """Validate against the live schema and capture what reversal will need."""
    if op.table != schema.table_name:
        raise SchemaError(f"op targets {op.table}, schema is {schema.table_name}")
    k = op.kind
    if k is SchemaChangeKind.ADD_COLUMN:
        if schema.has_column(op.column.name):
            raise SchemaError(f"column {op.column.name} already exists")
        gi = op.group_index if op.group_index is not None else len(schema.groups) - 1
        if not (0 <= gi < len(schema.groups)):
            raise SchemaError(f"no attribute group {gi}")
        return replace(op, group_index=gi)
    if k is SchemaChangeKind.DROP_COLUMN:
        if op.column_name == schema.primary_key:
            raise SchemaError("cannot drop the primary key")
        col = schema.column(op.column_name)
        gi = next(g.group_id for g in schema.groups if op.column_name in g.columns[1:])
        return replace(op, column=col, group_index=gi)
    if k is SchemaChangeKind.RENAME_COLUMN:
        schema.column(op.old_name)
        if schema.has_column(op.new_name):
            raise SchemaError(f"column {op.new_name} already exists")
        return op
    # regroup
    value_cols = sorted(c.name for c in schema.columns if c.name != schema.primary_key)
    proposed = sorted(n for g in op.new_groups for n in g)
    if proposed != value_cols:
        raise SchemaError("regroup must partition the non-PK columns exactly")
    old = tuple(tuple(g.columns[1:]) for g in schema.groups)
    return replace(op, old_groups=old)


def classify(op: SchemaChangeOp) -> SyncCapability:
    """Sync capability of a resolved op; forward = old schema to new."""
    k = op.kind
    if k is SchemaChangeKind.ADD_COLUMN:
        c = op.column
        if c.default is not None or c.nullable:
            return SyncCapability.BIDIRECTIONAL
        return SyncCapability.REVERSE_ONLY
    if k is SchemaChangeKind.DROP_COLUMN:
        if op.column is None:
            raise SchemaError("classify needs a resolved drop (captured column def)")
        c = op.column
        if c.nullable or c.default is not None:
            return SyncCapability.BIDIRECTIONAL
        return SyncCapability.FORWARD_ONLY
    return SyncCapability.BIDIRECTIONAL


def apply_to_schema(op: SchemaChangeOp, schema: Schema) -> Schema:
    """New relation schema after a resolved op."""
    k = op.kind
    if k is SchemaChangeKind.ADD_COLUMN:
        cols = schema.columns + (op.column,)
        groups = tuple(
            AttributeGroup(g.group_id, g.columns + (op.column.name,))
            if g.group_id == op.group_index else g
            for g in schema.groups
        )
        return Schema(schema.table_name, cols, schema.primary_key, groups)
    if k is SchemaChangeKind.DROP_COLUMN:
        cols = tuple(c for c in schema.columns if c.name != op.column_name)
        groups = tuple(
            AttributeGroup(g.group_id, tuple(n for n in g.columns if n != op.column_name))
            for g in schema.groups
        )
        return Schema(schema.table_name, cols, schema.primary_key, groups)
    if k is SchemaChangeKind.RENAME_COLUMN:
        cols = tuple(
            replace(c, name=op.new_name) if c.name == op.old_name else c
            for c in schema.columns
        )
        pk = op.new_name if schema.primary_key == op.old_name else schema.primary_key
        groups = tuple(
            AttributeGroup(g.group_id,
                           tuple(op.new_name if n == op.old_name else n for n in g.columns))
            for g in schema.groups
        )
        return Schema(schema.table_name, cols, pk, groups)
    groups = tuple(
        AttributeGroup(i, (schema.primary_key,) + g)
        for i, g in enumerate(op.new_groups)
    )
    return Schema(schema.table_name, schema.columns, schema.primary_key, groups)


def transform_available(op: SchemaChangeOp, direction: Direction) -> bool:
    cap = classify(op)
    if cap is SyncCapability.BIDIRECTIONAL:
        return True
    if cap is SyncCapability.FORWARD_ONLY:
        return direction is Direction.FORWARD
    if cap is SyncCapability.REVERSE_ONLY:
        return direction is Direction.REVERSE
    return False


def transform_row(op: SchemaChangeOp, direction: Direction, row: dict) -> dict:
    """Map one full row across the schema change. Pure; raises
    DirectionUnavailable when the direction has no transform."""
    if not transform_available(op, direction):
        raise DirectionUnavailable(f"{op.describe()} has no {direction.value} transform")
    k = op.kind
    fwd = direction is Direction.FORWARD
    if k is SchemaChangeKind.ADD_COLUMN:
        c = op.column
        if fwd:
            return {**row, c.name: c.default}  # None when nullable with no default
        out = dict(row)
        out.pop(c.name, None)
        return out
    if k is SchemaChangeKind.DROP_COLUMN:
        c = op.column
        if fwd:
            out = dict(row)
            out.pop(op.column_name, None)
            return out
        return {**row, op.column_name: c.default if c.default is not None else None}
    if k is SchemaChangeKind.RENAME_COLUMN:
        src, dst = (op.old_name, op.new_name) if fwd else (op.new_name, op.old_name)
        return {dst if k2 == src else k2: v for k2, v in row.items()}
    return dict(row)  # regroup: logical rows unchanged


class TransformKind(str, Enum):
    IDENTITY = "identity"
    SCHEMA_CHANGE = "schema_change"
    VIEW = "view"


@dataclass(frozen=True)
class TransformOp:
    """Executable edge/recipe transform: identity, schema change, or view.

    ``source_schema`` is the hex digest of the database schema the inputs
    live under; recipes use it to decode their sources after a reload.
    """

    kind: TransformKind
    direction: Direction = Direction.FORWARD
    op: SchemaChangeOp | None = None
    view: ViewDef | None = None
    source_schema: str | None = None

    @classmethod
    def identity(cls) -> "TransformOp":
        return cls(TransformKind.IDENTITY)

    @classmethod
    def schema_change(cls, op: SchemaChangeOp, direction: Direction,
                      source_schema: str | None = None) -> "TransformOp":
        return cls(TransformKind.SCHEMA_CHANGE, direction, op=op, source_schema=source_schema)

    @classmethod
    def for_view(cls, viewdef: ViewDef, source_schema: str | None = None) -> "TransformOp":
        return cls(TransformKind.VIEW, Direction.FORWARD, view=viewdef,
                   source_schema=source_schema)

    def available(self) -> bool:
        if self.kind is TransformKind.SCHEMA_CHANGE:
            return transform_available(self.op, self.direction)
        if self.kind is TransformKind.VIEW:
            return self.direction is Direction.FORWARD
        return True

    def apply_row(self, row: dict) -> dict | None:
        """Transform one row; None means the row is filtered out."""
        if self.kind is TransformKind.IDENTITY:
            return row
        if self.kind is TransformKind.SCHEMA_CHANGE:
            return transform_row(self.op, self.direction, row)
        if not self.available():
            raise DirectionUnavailable("views only transform forward")
        return self.view.project(row) if self.view.matches(row) else None

    def apply_delta(self, delta: CommitDelta) -> CommitDelta:
        """Transform a commit's per-table deltas into target-side deltas."""
        if self.kind is TransformKind.IDENTITY:
            return dict(delta)
        if self.kind is TransformKind.VIEW:
            base = delta.get(self.view.base_table)
            if base is None or base.is_empty():
                return {}
            vd = view_delta(self.view, base)
            return {} if vd.is_empty() else {self.view.name: vd}
        out = dict(delta)
        rd = out.pop(self.op.table, None)
        if rd is None:
            return out
        added = tuple((pk, self.apply_row(r)) for pk, r in rd.added)
        removed = tuple((pk, self.apply_row(r)) for pk, r in rd.removed)
        modified = []
        for pk, old, new in rd.modified:
            t_old, t_new = self.apply_row(old), self.apply_row(new)
            if t_old != t_new:
                modified.append((pk, t_old, t_new))
        nd = RowDelta(added, removed, tuple(modified))
        if not nd.is_empty():
            out[self.op.table] = nd
        return out

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "direction": self.direction.value,
            "op": self.op.to_json() if self.op else None,
            "view": self.view.to_json() if self.view else None,
            "source_schema": self.source_schema,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TransformOp":
        return cls(
            TransformKind(d["kind"]),
            Direction(d["direction"]),
            op=SchemaChangeOp.from_json(d["op"]) if d.get("op") else None,
            view=ViewDef.from_json(d["view"]) if d.get("view") else None,
            source_schema=d.get("source_schema"),
        )
