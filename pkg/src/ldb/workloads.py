"""Deterministic workload generation for the storage experiments.

All randomness flows from a 64-bit SplitMix generator seeded by the
WorkloadSpec, so a workload is a pure function of its parameters:
identical seeds give byte-identical commit batches. The generator tracks a model of the live
table so updates can carry exact current values for untouched columns
(the alternating-columns workload depends on that) and so delete/update
targets are always valid.

Experiment rows have four value columns (Int64, Int64, Utf8 of 16 chars,
Float64). Initial keys are spaced ``KEY_STRIDE`` apart, leaving room for
localized inserts between existing keys.
"""

from __future__ import annotations

from bisect import bisect_left, insort
from dataclasses import dataclass
from enum import Enum

from .database import WriteOp
from .errors import InvalidInput
from .relation import AttributeGroup, Column, ColumnType, Schema

_M64 = (1 << 64) - 1
KEY_STRIDE = 64
_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"


class SplitMix64:
    """Standard splitmix64; deterministic across platforms."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _M64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _M64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next_u64() % n

    def chance(self, num: int, den: int) -> bool:
        return self.below(den) < num


class WorkloadKind(str, Enum):
    APPEND_ONLY = "append_only"
    LOCALIZED_UPDATE = "localized_update"
    UNIFORM_UPDATE = "uniform_update"
    MIXED = "mixed"
    ALTERNATING_COLUMNS = "alternating_columns"


@dataclass(frozen=True)
class WorkloadSpec:
    kind: WorkloadKind
    initial_rows: int
    commits: int
    ops_per_commit: int = 200
    locality_span: int = 500  # consecutive live keys per localized window
    mix: tuple[float, float, float] = (0.4, 0.4, 0.2)  # insert/update/delete
    seed: int = 0xC0FFEE

    def __post_init__(self):
        if abs(sum(self.mix) - 1.0) > 1e-9:
            raise InvalidInput("mix ratios must sum to 1")
        if min(self.initial_rows, self.commits, self.ops_per_commit) <= 0:
            raise InvalidInput("counts must be positive")


def experiment_schema(table: str = "data", grouped: bool = False) -> Schema:
    cols = (
        Column("id", ColumnType.INT64),
        Column("c1", ColumnType.INT64),
        Column("c2", ColumnType.INT64),
        Column("c3", ColumnType.UTF8),
        Column("c4", ColumnType.FLOAT64),
    )
    if grouped:
        groups = (AttributeGroup(0, ("id", "c1", "c2")), AttributeGroup(1, ("id", "c3", "c4")))
    else:
        groups = (AttributeGroup(0, ("id", "c1", "c2", "c3", "c4")),)
    return Schema(table, cols, "id", groups)


class WorkloadGenerator:
    """Produces the initial bulk rows and then one batch per commit."""

    def __init__(self, spec: WorkloadSpec, table: str = "data"):
        self.spec = spec
        self.table = table
        self.rng = SplitMix64(spec.seed)
        self.rows: dict[int, dict] = {}
        self.live: list[int] = []
        self._next_slot = spec.initial_rows
        self._commit_no = 0

    def _fresh_values(self) -> dict:
        rng = self.rng
        c3 = "".join(_ALPHABET[rng.below(len(_ALPHABET))] for _ in range(16))
        return {
            "c1": rng.below(1 << 32),
            "c2": rng.below(1 << 32),
            "c3": c3,
            "c4": (rng.next_u64() >> 11) * 2.0 ** -53,
        }

    def initial_rows(self) -> list[WriteOp]:
        ops = []
        for i in range(self.spec.initial_rows):
            key = i * KEY_STRIDE
            values = self._fresh_values()
            self.rows[key] = values
            insort(self.live, key)
            ops.append(WriteOp("insert", self.table, key, values))
        return ops

    def batches(self):
        for _ in range(self.spec.commits):
            self._commit_no += 1
            yield self._next_batch()

    def _next_batch(self) -> list[WriteOp]:
        kind = self.spec.kind
        if kind is WorkloadKind.APPEND_ONLY:
            return self._append_batch()
        if kind is WorkloadKind.LOCALIZED_UPDATE:
            return self._localized_batch()
        if kind is WorkloadKind.UNIFORM_UPDATE:
            return self._uniform_batch()
        if kind is WorkloadKind.MIXED:
            return self._mixed_batch()
        return self._alternating_batch()

    # -- op builders ---------------------------------------------------------

    def _do_insert(self, key: int) -> WriteOp:
        values = self._fresh_values()
        self.rows[key] = values
        insort(self.live, key)
        return WriteOp("insert", self.table, key, values)

    def _do_update(self, key: int, cols=None) -> WriteOp:
        fresh = self._fresh_values()
        if cols is None:
            values = fresh
        else:
            values = {c: fresh[c] for c in cols}
        self.rows[key] = {**self.rows[key], **values}
        return WriteOp("update", self.table, key, dict(values))

    def _do_delete(self, key: int) -> WriteOp:
        del self.rows[key]
        self.live.pop(bisect_left(self.live, key))
        return WriteOp("delete", self.table, key)

    def _append_batch(self) -> list[WriteOp]:
        ops = []
        for _ in range(self.spec.ops_per_commit):
            key = self._next_slot * KEY_STRIDE
            self._next_slot += 1
            ops.append(self._do_insert(key))
        return ops

    def _sample_distinct(self, pool: list[int], n: int, used: set) -> list[int]:
        out = []
        attempts = 0
        while len(out) < n and attempts < n * 20:
            attempts += 1
            k = pool[self.rng.below(len(pool))]
            if k not in used:
                used.add(k)
                out.append(k)
        return out

    def _uniform_batch(self) -> list[WriteOp]:
        used: set = set()
        keys = self._sample_distinct(self.live, min(self.spec.ops_per_commit, len(self.live)),
                                     used)
        return [self._do_update(k) for k in keys]

    def _alternating_batch(self) -> list[WriteOp]:
        cols = ("c1", "c2") if self._commit_no % 2 == 1 else ("c3", "c4")
        used: set = set()
        keys = self._sample_distinct(self.live, min(self.spec.ops_per_commit, len(self.live)),
                                     used)
        return [self._do_update(k, cols) for k in keys]

    def _mixed_batch(self) -> list[WriteOp]:
        # Inserts append past the current maximum, the usual shape of
        # monotonically assigned surrogate keys; updates and deletes hit
        # uniformly random live rows.
        rng = self.rng
        ins_w = int(self.spec.mix[0] * 1000)
        upd_w = ins_w + int(self.spec.mix[1] * 1000)
        ops = []
        used: set = set()
        for _ in range(self.spec.ops_per_commit):
            roll = rng.below(1000)
            if roll < ins_w or not self.live:
                key = self._next_slot * KEY_STRIDE
                self._next_slot += 1
                used.add(key)
                ops.append(self._do_insert(key))
            elif roll < upd_w:
                got = self._sample_distinct(self.live, 1, used)
                if got:
                    ops.append(self._do_update(got[0]))
            else:
                got = self._sample_distinct(self.live, 1, used)
                if got:
                    ops.append(self._do_delete(got[0]))
        return ops

    def _localized_batch(self) -> list[WriteOp]:
        # One window of consecutive live keys per commit; modifications are
        # concentrated inside it: updates, gap inserts, and deletes, so both
        # value content and key positions churn locally. The window is fixed
        # in key space at batch start so in-batch churn cannot widen it.
        rng = self.rng
        span = min(self.spec.locality_span, len(self.live))
        if span == 0:
            return self._append_batch()
        anchor = rng.below(max(1, len(self.live) - span + 1))
        lo_key = self.live[anchor]
        hi_key = self.live[min(anchor + span, len(self.live)) - 1]
        ops = []
        used: set = set()
        for _ in range(self.spec.ops_per_commit):
            start = bisect_left(self.live, lo_key)
            stop = bisect_left(self.live, hi_key + 1)
            window = self.live[start:stop]
            if not window:
                break
            roll = rng.below(10)
            if roll < 6:
                got = self._sample_distinct(window, 1, used)
                if got:
                    ops.append(self._do_update(got[0]))
            elif roll < 8:
                lo = window[rng.below(len(window))]
                idx = bisect_left(self.live, lo)
                hi = self.live[idx + 1] if idx + 1 < len(self.live) else lo + KEY_STRIDE
                mid = (lo + hi) // 2
                if lo < mid < min(hi, hi_key + 1) and mid not in used and mid not in self.rows:
                    used.add(mid)
                    ops.append(self._do_insert(mid))
            else:
                got = self._sample_distinct(window, 1, used)
                if got:
                    ops.append(self._do_delete(got[0]))
        return ops


def gen_workload(spec: WorkloadSpec, table: str = "data"):
    """(initial bulk WriteOps, list of per-commit batches). Deterministic."""
    gen = WorkloadGenerator(spec, table)
    initial = gen.initial_rows()
    return initial, list(gen.batches())
