"""Select/project view definitions over a single base table.

A view projects a subset of columns (always including the primary key) and
optionally filters rows with a conjunction of column-vs-constant
comparisons. Views live as branches kept current by a unidirectional sync
edge, so their contents are versioned like any other table.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass

from .changes import RowDelta
from .errors import ViewError
from .relation import AttributeGroup, ColumnType, Schema

_OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


@dataclass(frozen=True)
class Comparison:
    column: str
    op: str
    constant: int | float | str

    def matches(self, row: dict) -> bool:
        v = row[self.column]
        if v is None:
            return False
        return _OPS[self.op](v, self.constant)

    def to_json(self) -> list:
        return [self.column, self.op, self.constant]


@dataclass(frozen=True)
class ViewDef:
    name: str
    base_table: str
    projected_columns: tuple[str, ...]
    predicate: tuple[Comparison, ...] = ()  # conjunction; empty = all rows

    def matches(self, row: dict) -> bool:
        return all(c.matches(row) for c in self.predicate)

    def project(self, row: dict) -> dict:
        return {c: row[c] for c in self.projected_columns}

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "base": self.base_table,
            "columns": list(self.projected_columns),
            "where": [c.to_json() for c in self.predicate],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ViewDef":
        return cls(
            d["name"],
            d["base"],
            tuple(d["columns"]),
            tuple(Comparison(*c) for c in d["where"]),
        )


def validate_view(viewdef: ViewDef, base: Schema) -> Schema:
    """Check a definition against the base schema; returns the view relation."""
    if base.primary_key not in viewdef.projected_columns:
        raise ViewError(f"view {viewdef.name} must project the primary key")
    for name in viewdef.projected_columns:
        if not base.has_column(name):
            raise ViewError(f"view {viewdef.name} projects unknown column {name}")
    for comp in viewdef.predicate:
        if not base.has_column(comp.column):
            raise ViewError(f"predicate references unknown column {comp.column}")
        if comp.op not in _OPS:
            raise ViewError(f"unknown comparison operator {comp.op!r}")
        col = base.column(comp.column)
        want = {ColumnType.INT64: int, ColumnType.FLOAT64: (int, float), ColumnType.UTF8: str}
        if not isinstance(comp.constant, want[col.type]) or isinstance(comp.constant, bool):
            raise ViewError(f"predicate constant {comp.constant!r} does not match {col.type.value}")
    cols = tuple(base.column(n) for n in viewdef.projected_columns)
    value_names = tuple(n for n in viewdef.projected_columns if n != base.primary_key)
    return Schema(viewdef.name, cols, base.primary_key,
                  (AttributeGroup(0, (base.primary_key,) + value_names),))


def view_delta(viewdef: ViewDef, base_delta: RowDelta) -> RowDelta:
    """Map a base-table delta through the view's filter and projection."""
    added, removed, modified = [], [], []
    for pk, row in base_delta.added:
        if viewdef.matches(row):
            added.append((pk, viewdef.project(row)))
    for pk, row in base_delta.removed:
        if viewdef.matches(row):
            removed.append((pk, viewdef.project(row)))
    for pk, old, new in base_delta.modified:
        was_in, is_in = viewdef.matches(old), viewdef.matches(new)
        if was_in and is_in:
            p_old, p_new = viewdef.project(old), viewdef.project(new)
            if p_old != p_new:
                modified.append((pk, p_old, p_new))
        elif was_in:
            removed.append((pk, viewdef.project(old)))
        elif is_in:
            added.append((pk, viewdef.project(new)))
    return RowDelta(tuple(added), tuple(removed), tuple(modified))


_COND_RE = re.compile(r"^\s*(\w+)\s*(>=|<=|!=|=|<|>)\s*(.+?)\s*$")


def parse_predicate(text: str, base: Schema) -> tuple[Comparison, ...]:
    """Parse ``a>10 and name=bob`` style conjunctions for the CLI."""
    if not text.strip():
        return ()
    comps = []
    for part in re.split(r"\s+(?:and|AND)\s+", text.strip()):
        m = _COND_RE.match(part)
        if not m:
            raise ViewError(f"cannot parse predicate clause {part!r}")
        col_name, op, raw = m.groups()
        if not base.has_column(col_name):
            raise ViewError(f"predicate references unknown column {col_name}")
        ctype = base.column(col_name).type
        if ctype is ColumnType.INT64:
            const: int | float | str = int(raw)
        elif ctype is ColumnType.FLOAT64:
            const = float(raw)
        else:
            const = raw.strip("'\"")
        comps.append(Comparison(col_name, op, const))
    return tuple(comps)
