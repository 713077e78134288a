"""Relation schemas, attribute groups, and the columnar chunk encoding.

A relation has a single-column primary key and an ordered set of typed
columns (Int64, Float64, Utf8). Columns are vertically partitioned into
attribute groups; every group carries the primary key so each group's rows
can live in its own chunk tree and still be joined back by key.

Chunk payload layout (canonical, byte-exact for identical logical input):

    magic "LDL1" | u32 group_id | u32 row_count | u32 col_count
    per column, in group order:
        null bitmap, ceil(rows/8) bytes, bit set = NULL
        Int64/Float64: rows * 8 bytes LE (null slots zeroed)
        Utf8: (rows+1) u32 LE offsets into a string region of
              u32-length-prefixed utf8 payloads (null -> empty record)

Canonical encoding matters: the chunk store deduplicates by content hash,
so logically equal row sets must serialize to identical bytes.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

from .errors import AssemblyError, DecodingError, EncodingError, SchemaError

CHUNK_MAGIC = b"LDL1"
_U64 = (1 << 64) - 1


class ColumnType(str, Enum):
    INT64 = "int64"
    FLOAT64 = "float64"
    UTF8 = "utf8"


_PY_TYPES = {ColumnType.INT64: int, ColumnType.FLOAT64: float, ColumnType.UTF8: str}


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType
    nullable: bool = False
    default: int | float | str | None = None

    def __post_init__(self):
        if self.default is not None and not isinstance(self.default, _PY_TYPES[self.type]):
            if self.type is ColumnType.FLOAT64 and isinstance(self.default, int):
                object.__setattr__(self, "default", float(self.default))
            else:
                raise SchemaError(f"default for {self.name} does not match {self.type.value}")

    def to_json(self) -> dict:
        return {"name": self.name, "type": self.type.value, "nullable": self.nullable,
                "default": self.default}

    @classmethod
    def from_json(cls, d: dict) -> "Column":
        return cls(d["name"], ColumnType(d["type"]), d["nullable"], d["default"])


@dataclass(frozen=True)
class AttributeGroup:
    """Vertical partition. ``columns`` lists column names, primary key first."""

    group_id: int
    columns: tuple[str, ...]

    def to_json(self) -> list:
        return [self.group_id, list(self.columns)]


@dataclass(frozen=True)
class Schema:
    """One relation: ordered columns, single-column PK, group layout."""

    table_name: str
    columns: tuple[Column, ...]
    primary_key: str
    groups: tuple[AttributeGroup, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column in {self.table_name}")
        if self.primary_key not in names:
            raise SchemaError(f"unknown primary key {self.primary_key}")
        if self.pk_column().nullable:
            raise SchemaError("primary key must be non-nullable")
        value_cols = [n for n in names if n != self.primary_key]
        seen: list[str] = []
        for g in self.groups:
            if not g.columns or g.columns[0] != self.primary_key:
                raise SchemaError(f"group {g.group_id} must lead with the primary key")
            for c in g.columns[1:]:
                if c not in names or c == self.primary_key:
                    raise SchemaError(f"group {g.group_id} references unknown column {c}")
                seen.append(c)
        if sorted(seen) != sorted(value_cols):
            raise SchemaError(f"groups must partition the non-PK columns of {self.table_name}")

    def pk_column(self) -> Column:
        return next(c for c in self.columns if c.name == self.primary_key)

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column {name} in {self.table_name}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def group_columns(self, group: AttributeGroup) -> list[Column]:
        return [self.column(n) for n in group.columns]

    def to_json(self) -> dict:
        return {
            "table": self.table_name,
            "columns": [c.to_json() for c in self.columns],
            "pk": self.primary_key,
            "groups": [g.to_json() for g in self.groups],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Schema":
        return cls(
            d["table"],
            tuple(Column.from_json(c) for c in d["columns"]),
            d["pk"],
            tuple(AttributeGroup(g[0], tuple(g[1])) for g in d["groups"]),
        )


def single_group_schema(table: str, columns: list[Column], pk: str) -> Schema:
    cols = tuple(columns)
    value_names = tuple(c.name for c in cols if c.name != pk)
    return Schema(table, cols, pk, (AttributeGroup(0, (pk,) + value_names),))


# ---------------------------------------------------------------------------
# Value checks and key encoding
# ---------------------------------------------------------------------------

def check_value(col: Column, value):
    if value is None:
        if not col.nullable:
            raise EncodingError(f"null in non-nullable column {col.name}")
        return None
    want = _PY_TYPES[col.type]
    if col.type is ColumnType.FLOAT64 and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, want) or isinstance(value, bool):
        raise EncodingError(f"column {col.name} expects {col.type.value}, got {value!r}")
    return value


def encode_key(col_type: ColumnType, value) -> bytes:
    """Order-preserving key bytes: byte order equals value order."""
    if col_type is ColumnType.INT64:
        return (value + (1 << 63)).to_bytes(8, "big")
    if col_type is ColumnType.FLOAT64:
        bits = struct.unpack(">Q", struct.pack(">d", value))[0]
        bits = bits ^ 0x8000000000000000 if bits < 0x8000000000000000 else ~bits & _U64
        return bits.to_bytes(8, "big")
    return value.encode("utf-8")


def decode_key(col_type: ColumnType, key: bytes):
    if col_type is ColumnType.INT64:
        return int.from_bytes(key, "big") - (1 << 63)
    if col_type is ColumnType.FLOAT64:
        bits = int.from_bytes(key, "big")
        bits = bits ^ 0x8000000000000000 if bits >= 0x8000000000000000 else ~bits & _U64
        return struct.unpack(">d", struct.pack(">Q", bits))[0]
    return key.decode("utf-8")


# ---------------------------------------------------------------------------
# Columnar chunk encoding
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4096)
def _cols_of(schema: Schema, group: AttributeGroup) -> tuple[Column, ...]:
    return tuple(schema.group_columns(group))


def encode_chunk(schema: Schema, group: AttributeGroup, rows: list[tuple]) -> bytes:
    """Encode ordered row slices (tuples aligned with group.columns) to bytes."""
    if not rows:
        raise EncodingError("encode_chunk requires at least one row")
    cols = _cols_of(schema, group)
    n = len(rows)
    parts = [CHUNK_MAGIC, struct.pack("<III", group.group_id, n, len(cols))]
    bitmap_len = (n + 7) // 8
    zero_bitmap = bytes(bitmap_len)
    for ci, col in enumerate(cols):
        values = [row[ci] for row in rows]
        has_null = None in values
        if has_null:
            if not col.nullable:
                ri = values.index(None)
                raise EncodingError(f"null in non-nullable {col.name} at pk {rows[ri][0]!r}")
            bitmap = bytearray(bitmap_len)
            for ri, v in enumerate(values):
                if v is None:
                    bitmap[ri >> 3] |= 1 << (ri & 7)
            parts.append(bytes(bitmap))
        else:
            parts.append(zero_bitmap)
        if col.type is ColumnType.INT64:
            try:
                if has_null:
                    values = [0 if v is None else v for v in values]
                parts.append(struct.pack(f"<{n}q", *values))
            except (struct.error, TypeError) as exc:
                raise EncodingError(f"bad int64 in {col.name}: {exc}") from exc
        elif col.type is ColumnType.FLOAT64:
            try:
                if has_null:
                    values = [0.0 if v is None else v for v in values]
                parts.append(struct.pack(f"<{n}d", *values))
            except (struct.error, TypeError) as exc:
                raise EncodingError(f"bad float64 in {col.name}: {exc}") from exc
        else:
            try:
                encs = [b"" if v is None else v.encode("utf-8") for v in values]
            except AttributeError as exc:
                raise EncodingError(f"column {col.name} expects utf8: {exc}") from exc
            offsets = [0]
            off = 0
            for enc in encs:
                off += 4 + len(enc)
                offsets.append(off)
            parts.append(struct.pack(f"<{n + 1}I", *offsets))
            parts.append(b"".join(
                struct.pack("<I", len(enc)) + enc for enc in encs))
    return b"".join(parts)


def decode_chunk(payload: bytes, schema: Schema, group: AttributeGroup) -> list[tuple]:
    """Exact inverse of encode_chunk."""
    if payload[:4] != CHUNK_MAGIC:
        raise DecodingError("bad chunk magic")
    group_id, n, ncols = struct.unpack_from("<III", payload, 4)
    cols = _cols_of(schema, group)
    if group_id != group.group_id or ncols != len(cols):
        raise DecodingError(
            f"chunk shape mismatch: got group {group_id}/{ncols} cols, "
            f"expected {group.group_id}/{len(cols)}")
    pos = 16
    nbytes = (n + 7) // 8
    columns_out: list[list] = []
    for col in cols:
        bitmap = payload[pos:pos + nbytes]
        pos += nbytes
        if col.type is ColumnType.INT64:
            vals = list(struct.unpack_from(f"<{n}q", payload, pos))
            pos += 8 * n
        elif col.type is ColumnType.FLOAT64:
            vals = list(struct.unpack_from(f"<{n}d", payload, pos))
            pos += 8 * n
        else:
            offsets = struct.unpack_from(f"<{n + 1}I", payload, pos)
            pos += 4 * (n + 1)
            region = payload[pos:pos + offsets[-1]]
            pos += offsets[-1]
            vals = [region[offsets[i] + 4:offsets[i + 1]].decode("utf-8")
                    for i in range(n)]
        if any(bitmap):
            for i in range(n):
                if bitmap[i >> 3] & (1 << (i & 7)):
                    vals[i] = None
        columns_out.append(vals)
    if pos != len(payload):
        raise DecodingError("trailing bytes in chunk payload")
    return list(zip(*columns_out))


# ---------------------------------------------------------------------------
# Tuple split / assemble
# ---------------------------------------------------------------------------

def split_tuple(schema: Schema, row: dict) -> dict[int, tuple]:
    """Project a full row (dict col -> value) into per-group slices."""
    return {
        g.group_id: tuple(row[name] for name in g.columns)
        for g in schema.groups
    }


def assemble_tuple(schema: Schema, slices: dict[int, tuple]) -> dict:
    """Inverse of split_tuple; slices must agree on the primary key."""
    if set(slices) != {g.group_id for g in schema.groups}:
        raise AssemblyError("slice set does not match schema groups")
    pks = {slices[g.group_id][0] for g in schema.groups}
    if len(pks) != 1:
        raise AssemblyError(f"primary key mismatch across slices: {sorted(map(repr, pks))}")
    row = {}
    for g in schema.groups:
        for name, v in zip(g.columns, slices[g.group_id]):
            row[name] = v
    return row


def validate_row(schema: Schema, row: dict, *, fill_missing: bool = True) -> dict:
    """Type-check a full row; optionally fill absent columns from defaults/null."""
    out = {}
    for col in schema.columns:
        if col.name in row:
            out[col.name] = check_value(col, row[col.name])
        elif fill_missing:
            if col.default is not None:
                out[col.name] = col.default
            elif col.nullable:
                out[col.name] = None
            else:
                raise EncodingError(f"missing value for non-nullable {col.name}")
        else:
            raise EncodingError(f"missing value for {col.name}")
    extra = set(row) - {c.name for c in schema.columns}
    if extra:
        raise EncodingError(f"unknown columns {sorted(extra)} for {schema.table_name}")
    if out[schema.primary_key] is None:
        raise EncodingError("primary key must be non-null")
    return out


# ---------------------------------------------------------------------------
# Textual schema config
# ---------------------------------------------------------------------------

_TABLE_RE = re.compile(
    r"^table\s+(\w+)\s*\((.*)\)\s*pk=(\w+)(?:\s+groups=\[(.*)\])?\s*$")

_TYPE_NAMES = {"int": ColumnType.INT64, "int64": ColumnType.INT64,
               "float": ColumnType.FLOAT64, "float64": ColumnType.FLOAT64,
               "utf8": ColumnType.UTF8, "str": ColumnType.UTF8}


def parse_column_spec(spec: str) -> Column:
    """Parse ``name:type[:nullable][:default=v]``."""
    parts = [p.strip() for p in spec.split(":")]
    if len(parts) < 2:
        raise SchemaError(f"bad column spec {spec!r}")
    name = parts[0]
    if parts[1].lower() not in _TYPE_NAMES:
        raise SchemaError(f"unknown type {parts[1]!r} in {spec!r}")
    ctype = _TYPE_NAMES[parts[1].lower()]
    nullable = False
    default = None
    for extra in parts[2:]:
        if extra == "nullable":
            nullable = True
        elif extra.startswith("default="):
            raw = extra[len("default="):]
            if ctype is ColumnType.INT64:
                default = int(raw)
            elif ctype is ColumnType.FLOAT64:
                default = float(raw)
            else:
                default = raw
        else:
            raise SchemaError(f"unknown column flag {extra!r} in {spec!r}")
    return Column(name, ctype, nullable, default)


def parse_schema_config(text: str) -> dict[str, Schema]:
    """Parse the table config format, one ``table ...`` declaration per line.

    Example::

        table users (id:int, name:utf8, age:int:nullable) pk=id groups=[name|age]

    groups lists value columns split by ``|``; the primary key is implied in
    every group. Omitting groups puts all columns in one group.
    """
    tables: dict[str, Schema] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _TABLE_RE.match(line)
        if not m:
            raise SchemaError(f"line {lineno}: cannot parse {line!r}")
        name, cols_raw, pk, groups_raw = m.groups()
        columns = tuple(parse_column_spec(c) for c in cols_raw.split(",") if c.strip())
        if groups_raw is None:
            value_names = tuple(c.name for c in columns if c.name != pk)
            groups = (AttributeGroup(0, (pk,) + value_names),)
        else:
            groups = tuple(
                AttributeGroup(i, (pk,) + tuple(n.strip() for n in part.split(",") if n.strip()))
                for i, part in enumerate(groups_raw.split("|"))
            )
        if name in tables:
            raise SchemaError(f"line {lineno}: duplicate table {name}")
        tables[name] = Schema(name, columns, pk, groups)
    if not tables:
        raise SchemaError("schema config declares no tables")
    return tables
