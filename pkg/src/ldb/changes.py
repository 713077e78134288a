"""Row-level change sets and per-commit change summaries.

A RowDelta describes what one table's contents gained, lost, or changed
between two states, with full row images on both sides so downstream
consumers (sync transforms, view maintenance) never need to re-read the
source. A ChangeSummary is the cheap metadata that propagation conditions
evaluate: which tables were touched, how many rows, what fraction of each
table, and whether a schema change was involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

Row = dict  # column name -> value


@dataclass(frozen=True)
class RowDelta:
    """Changes to one table. Keys are primary-key values; rows are dicts."""

    added: tuple[tuple[object, Row], ...] = ()
    removed: tuple[tuple[object, Row], ...] = ()
    modified: tuple[tuple[object, Row, Row], ...] = ()  # (pk, old, new)

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.modified)

    def touched_count(self) -> int:
        return len(self.added) + len(self.removed) + len(self.modified)


CommitDelta = dict  # table name -> RowDelta


def compose_row_deltas(first: RowDelta, second: RowDelta) -> RowDelta:
    """Sequential composition: the net effect of applying first, then second."""
    state: dict[object, tuple[str, Row | None, Row | None]] = {}
    for pk, row in first.added:
        state[pk] = ("add", None, row)
    for pk, row in first.removed:
        state[pk] = ("del", row, None)
    for pk, old, new in first.modified:
        state[pk] = ("mod", old, new)
    for pk, row in second.added:
        if pk in state:
            kind, old, _ = state[pk]
            if kind == "del":
                state[pk] = ("mod", old, row) if old != row else None
                if state[pk] is None:
                    del state[pk]
            else:
                state[pk] = (kind, old, row)
        else:
            state[pk] = ("add", None, row)
    for pk, row in second.removed:
        if pk in state:
            kind, old, _ = state[pk]
            if kind == "add":
                del state[pk]
            else:
                state[pk] = ("del", old, None)
        else:
            state[pk] = ("del", row, None)
    for pk, old2, new2 in second.modified:
        if pk in state:
            kind, old, _ = state[pk]
            if kind == "add":
                state[pk] = ("add", None, new2)
            elif kind == "del":
                state[pk] = ("mod", old, new2)
            else:
                state[pk] = ("mod", old, new2) if old != new2 else None
                if state[pk] is None:
                    del state[pk]
        else:
            state[pk] = ("mod", old2, new2)
    added, removed, modified = [], [], []
    for pk in sorted(state, key=repr):
        kind, old, new = state[pk]
        if kind == "add":
            added.append((pk, new))
        elif kind == "del":
            removed.append((pk, old))
        else:
            modified.append((pk, old, new))
    return RowDelta(tuple(added), tuple(removed), tuple(modified))


def compose_commit_deltas(deltas: list[CommitDelta]) -> CommitDelta:
    out: CommitDelta = {}
    for delta in deltas:
        for table, rd in delta.items():
            out[table] = compose_row_deltas(out[table], rd) if table in out else rd
    return {t: rd for t, rd in out.items() if not rd.is_empty()}


@dataclass(frozen=True)
class TableChange:
    inserted: int = 0
    updated: int = 0
    deleted: int = 0
    fraction: float = 0.0  # touched rows / pre-commit row count (touched if empty)

    def touched(self) -> int:
        return self.inserted + self.updated + self.deleted


@dataclass(frozen=True)
class ChangeSummary:
    tables: dict = field(default_factory=dict)  # table name -> TableChange
    is_schema_change: bool = False

    @property
    def tables_touched(self) -> set[str]:
        return set(self.tables)

    def total_rows_changed(self) -> int:
        return sum(tc.touched() for tc in self.tables.values())

    def to_json(self) -> dict:
        return {
            "tables": {
                t: [c.inserted, c.updated, c.deleted, c.fraction]
                for t, c in sorted(self.tables.items())
            },
            "schema_change": self.is_schema_change,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ChangeSummary":
        return cls(
            tables={t: TableChange(*vals) for t, vals in d["tables"].items()},
            is_schema_change=d["schema_change"],
        )


def summarize(delta: CommitDelta, pre_counts: dict[str, int],
              is_schema_change: bool = False) -> ChangeSummary:
    tables = {}
    for t, rd in delta.items():
        if rd.is_empty():
            continue
        touched = rd.touched_count()
        pre = pre_counts.get(t, 0)
        fraction = touched / pre if pre > 0 else float(touched)
        tables[t] = TableChange(len(rd.added), len(rd.modified), len(rd.removed), fraction)
    return ChangeSummary(tables=tables, is_schema_change=is_schema_change)
