"""Sync edges between branches: direction, conditions, frequency, alerts.

An edge watches commits on its source side (either peer, when
bidirectional), gates them through blocking conditions, and propagates the
transformed changes to the target as AutoPropagation commits. Propagation
is immediate, deferred (flushed before the target is read), on-demand, or
periodic on an injected logical tick clock. A blocked condition does not
fail the source commit: the edge disassociates permanently and an alert is
logged, leaving the target frozen but readable and directly committable
again.

Queued work is stored as source snapshot ids; each commit's delta is
recomputed against its chain parent at flush time and the run is composed
into a single target commit. Deltas arriving over an edge are never echoed
back along the same edge, and a propagation cascade never revisits a branch
it already passed through.

Propagation applies with upsert semantics (insert-or-update, ignore
missing deletes) so that concurrent peers converge instead of failing on
benign overlap; genuinely failing transforms disassociate the edge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from .changes import ChangeSummary, CommitDelta, compose_commit_deltas
from .errors import IllegalSyncTopology, LdbError, NotBidirectionallyCompatible, NotFound
from .evolution import TransformOp

logger = logging.getLogger(__name__)


class SyncDirection(str, Enum):
    UNIDIRECTIONAL = "uni"
    BIDIRECTIONAL = "bi"


class BranchRole(str, Enum):
    FREE = "free"
    UNI_TARGET = "uni_target"
    BI_PEER = "bi_peer"


class FrequencyKind(str, Enum):
    IMMEDIATE = "immediate"
    DEFERRED = "deferred"
    ON_DEMAND = "ondemand"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Frequency:
    kind: FrequencyKind
    period: int = 0

    def __post_init__(self):
        if self.kind is FrequencyKind.PERIODIC and self.period < 1:
            raise LdbError("periodic frequency needs a positive period")

    @classmethod
    def parse(cls, text: str) -> "Frequency":
        if text.startswith("periodic:"):
            return cls(FrequencyKind.PERIODIC, int(text.split(":", 1)[1]))
        return cls(FrequencyKind(text))

    def to_json(self):
        return {"kind": self.kind.value, "period": self.period}

    @classmethod
    def from_json(cls, d):
        return cls(FrequencyKind(d["kind"]), d["period"])


class ConditionKind(str, Enum):
    TABLES_TOUCHED = "tables"
    FRACTION_CHANGED = "fraction"
    ROWS_CHANGED = "rows"
    SCHEMA_CHANGE_INVOLVED = "schemachange"


@dataclass(frozen=True)
class Condition:
    """Blocking gate over a commit's change summary."""

    kind: ConditionKind
    tables: tuple[str, ...] = ()
    threshold: float = 0.0
    max_rows: int = 0

    def matches(self, summary: ChangeSummary) -> bool:
        k = self.kind
        if k is ConditionKind.TABLES_TOUCHED:
            return bool(set(self.tables) & summary.tables_touched)
        if k is ConditionKind.FRACTION_CHANGED:
            return any(tc.fraction >= self.threshold for tc in summary.tables.values())
        if k is ConditionKind.ROWS_CHANGED:
            return summary.total_rows_changed() > self.max_rows
        return summary.is_schema_change

    def describe(self) -> str:
        k = self.kind
        if k is ConditionKind.TABLES_TOUCHED:
            return f"tables={','.join(self.tables)}"
        if k is ConditionKind.FRACTION_CHANGED:
            return f"fraction>={self.threshold}"
        if k is ConditionKind.ROWS_CHANGED:
            return f"rows>{self.max_rows}"
        return "schemachange"

    def to_json(self):
        return {"kind": self.kind.value, "tables": list(self.tables),
                "threshold": self.threshold, "max_rows": self.max_rows}

    @classmethod
    def from_json(cls, d):
        return cls(ConditionKind(d["kind"]), tuple(d["tables"]), d["threshold"], d["max_rows"])


@dataclass(frozen=True)
class Alert:
    tick: int
    edge_id: str
    reason: str
    summary: ChangeSummary | None

    def to_json(self):
        return {"tick": self.tick, "edge": self.edge_id, "reason": self.reason,
                "summary": self.summary.to_json() if self.summary else None}

    @classmethod
    def from_json(cls, d):
        return cls(d["tick"], d["edge"], d["reason"],
                   ChangeSummary.from_json(d["summary"]) if d["summary"] else None)


class EdgeState(str, Enum):
    ACTIVE = "active"
    DISASSOCIATED = "disassociated"


@dataclass
class SyncEdge:
    edge_id: str
    source: str  # internal branch ids
    target: str
    direction: SyncDirection
    forward: TransformOp  # source -> target
    reverse: TransformOp | None  # target -> source, bidirectional only
    conditions: tuple[Condition, ...]
    frequency: Frequency
    state: EdgeState = EdgeState.ACTIVE
    reason: str = ""
    pending_fwd: list = field(default_factory=list)  # queued source snapshot ids
    pending_rev: list = field(default_factory=list)
    last_fired_tick: int = 0

    def peers(self) -> tuple[str, str]:
        return (self.source, self.target)

    def to_json(self):
        return {
            "id": self.edge_id, "source": self.source, "target": self.target,
            "direction": self.direction.value,
            "forward": self.forward.to_json(),
            "reverse": self.reverse.to_json() if self.reverse else None,
            "conditions": [c.to_json() for c in self.conditions],
            "frequency": self.frequency.to_json(),
            "last_fired": self.last_fired_tick,
        }


class Pass:
    pass


@dataclass(frozen=True)
class Block:
    reason: str


def evaluate_conditions(edge: SyncEdge, summary: ChangeSummary):
    """Block iff any condition matches the summary; Pass otherwise."""
    for cond in edge.conditions:
        if cond.matches(summary):
            return Block(f"condition {cond.describe()} matched")
    return Pass()


class SyncEngine:
    """Propagation state machine; runs on the caller's thread under the
    database metadata lock. The database wires itself in at construction."""

    def __init__(self, db):
        self.db = db
        self.edges: dict[str, SyncEdge] = {}
        self.alerts: list[Alert] = []
        self.tick_now: int = 0
        self._next_edge = 1

    # -- attachment ----------------------------------------------------------

    def attach(self, source_bid: str, target_bid: str, direction: SyncDirection,
               forward: TransformOp, reverse: TransformOp | None,
               conditions: tuple[Condition, ...], frequency: Frequency,
               *, _replay_id: str | None = None) -> SyncEdge:
        db = self.db
        src_b, tgt_b = db.branch_by_id(source_bid), db.branch_by_id(target_bid)
        if source_bid == target_bid:
            raise IllegalSyncTopology("cannot sync a branch with itself")
        if direction is SyncDirection.BIDIRECTIONAL:
            if src_b.role is BranchRole.UNI_TARGET or tgt_b.role is BranchRole.UNI_TARGET:
                raise IllegalSyncTopology(
                    "a unidirectional sync target cannot join a bidirectional sync")
            if reverse is None or not forward.available() or not reverse.available():
                raise NotBidirectionallyCompatible(
                    "bidirectional sync needs both forward and reverse transforms")
        else:
            if tgt_b.role is not BranchRole.FREE:
                raise IllegalSyncTopology(
                    f"branch {tgt_b.name} already has sync role {tgt_b.role.value}")
            if not forward.available():
                raise NotBidirectionallyCompatible("forward transform unavailable")
        edge_id = _replay_id or f"e{self._next_edge}"
        self._next_edge = max(self._next_edge + 1, int(edge_id[1:]) + 1)
        edge = SyncEdge(edge_id, source_bid, target_bid, direction, forward, reverse,
                        tuple(conditions), frequency, last_fired_tick=self.tick_now)
        self.edges[edge_id] = edge
        if direction is SyncDirection.BIDIRECTIONAL:
            db.set_branch_role(source_bid, BranchRole.BI_PEER)
            db.set_branch_role(target_bid, BranchRole.BI_PEER)
        else:
            db.set_branch_role(target_bid, BranchRole.UNI_TARGET)
        if _replay_id is None:
            db.log_sync("attach", edge_id, edge.to_json())
        return edge

    def edge(self, edge_id: str) -> SyncEdge:
        try:
            return self.edges[edge_id]
        except KeyError:
            raise NotFound(f"no sync edge {edge_id}") from None

    # -- commit hook ---------------------------------------------------------

    def on_commit(self, branch_id: str, snapshot_id, delta: CommitDelta,
                  summary: ChangeSummary, origin_edge: str | None = None,
                  visited: frozenset = frozenset()):
        """Route one commit through every active edge sourced at this branch."""
        for edge in list(self.edges.values()):
            if edge.state is not EdgeState.ACTIVE or edge.edge_id == origin_edge:
                continue
            if edge.source == branch_id:
                outbound, transform, queue = edge.target, edge.forward, edge.pending_fwd
            elif edge.direction is SyncDirection.BIDIRECTIONAL and edge.target == branch_id:
                outbound, transform, queue = edge.source, edge.reverse, edge.pending_rev
            else:
                continue
            if outbound in visited:
                continue  # cycle guard for chained syncs
            verdict = evaluate_conditions(edge, summary)
            if isinstance(verdict, Block):
                self.disassociate(edge.edge_id, verdict.reason, summary)
                continue
            if edge.frequency.kind is FrequencyKind.IMMEDIATE:
                self._propagate(edge, transform, outbound, [delta],
                                visited | {branch_id}, snapshot_id)
            else:
                queue.append(snapshot_id)
                self.db.log_sync("enqueue", edge.edge_id, {
                    "dir": "fwd" if outbound == edge.target else "rev",
                    "snapshot": snapshot_id.hex})

    def on_schema_change(self, branch_id: str, summary: ChangeSummary):
        """Schema changes never propagate; they only trip blocking conditions."""
        for edge in list(self.edges.values()):
            if edge.state is not EdgeState.ACTIVE:
                continue
            if edge.source != branch_id and not (
                    edge.direction is SyncDirection.BIDIRECTIONAL and edge.target == branch_id):
                continue
            verdict = evaluate_conditions(edge, summary)
            if isinstance(verdict, Block):
                self.disassociate(edge.edge_id, verdict.reason, summary)

    # -- propagation ---------------------------------------------------------

    def _propagate(self, edge: SyncEdge, transform: TransformOp, target_bid: str,
                   deltas: list[CommitDelta], visited: frozenset, source_snapshot):
        composed = compose_commit_deltas(deltas)
        if not composed:
            return None
        try:
            out_delta = transform.apply_delta(composed)
        except LdbError as exc:
            self.disassociate(edge.edge_id, f"transform failed: {exc}", None)
            return None
        if not out_delta:
            return None
        try:
            return self.db.propagation_commit(
                target_bid, out_delta, edge.edge_id, source_snapshot, visited)
        except LdbError as exc:
            self.disassociate(edge.edge_id, f"propagation failed: {exc}", None)
            return None

    def _flush_direction(self, edge: SyncEdge, rev: bool, visited: frozenset):
        queue = edge.pending_rev if rev else edge.pending_fwd
        if not queue or edge.state is not EdgeState.ACTIVE:
            return
        snaps = list(queue)
        target = edge.source if rev else edge.target
        transform = edge.reverse if rev else edge.forward
        deltas = [self.db.commit_delta_of(sid) for sid in snaps]
        del queue[:len(snaps)]
        self.db.log_sync("flush", edge.edge_id, {"dir": "rev" if rev else "fwd",
                                                 "count": len(snaps)})
        self._propagate(edge, transform, target, deltas, visited, snaps[-1])

    def flush_edge(self, edge_id: str, visited: frozenset = frozenset()):
        edge = self.edge(edge_id)
        self._flush_direction(edge, rev=False, visited=visited)
        if edge.direction is SyncDirection.BIDIRECTIONAL:
            self._flush_direction(edge, rev=True, visited=visited)

    def sync_now(self, edge_id: str):
        """On-demand trigger; flushes whatever is queued on one edge."""
        self.flush_edge(edge_id)

    def flush_for_read(self, branch_id: str, _seen: frozenset = frozenset()):
        """Flush deferred edges targeting this branch, upstream first, so a
        read observes every source commit that preceded it."""
        if branch_id in _seen:
            return
        seen = _seen | {branch_id}
        for edge in list(self.edges.values()):
            if edge.state is not EdgeState.ACTIVE:
                continue
            if edge.frequency.kind is not FrequencyKind.DEFERRED:
                continue
            if edge.target == branch_id:
                self.flush_for_read(edge.source, seen)
                self._flush_direction(edge, rev=False, visited=frozenset(seen - {branch_id}))
            elif edge.direction is SyncDirection.BIDIRECTIONAL and edge.source == branch_id:
                self.flush_for_read(edge.target, seen)
                self._flush_direction(edge, rev=True, visited=frozenset(seen - {branch_id}))

    def tick(self, now: int):
        """Advance the logical clock; due periodic edges flush their queues."""
        if now < self.tick_now:
            raise LdbError("ticks must be monotone")
        self.tick_now = now
        self.db.log_sync("tick", "", {"now": now})
        for edge in list(self.edges.values()):
            if (edge.state is EdgeState.ACTIVE
                    and edge.frequency.kind is FrequencyKind.PERIODIC
                    and now - edge.last_fired_tick >= edge.frequency.period):
                edge.last_fired_tick = now
                self.db.log_sync("fired", edge.edge_id, {"tick": now})
                self.flush_edge(edge.edge_id)

    # -- disassociation ------------------------------------------------------

    def disassociate(self, edge_id: str, reason: str,
                     summary: ChangeSummary | None = None) -> Alert:
        edge = self.edge(edge_id)
        if edge.state is EdgeState.DISASSOCIATED:
            return Alert(self.tick_now, edge_id, reason, summary)
        edge.state = EdgeState.DISASSOCIATED
        edge.reason = reason
        edge.pending_fwd.clear()
        edge.pending_rev.clear()
        self.db.log_sync("disassociate", edge_id, {"reason": reason})
        self._revert_roles(edge)
        alert = Alert(self.tick_now, edge_id, reason, summary)
        self.alerts.append(alert)
        self.db.log_alert(alert)
        logger.warning("sync edge %s disassociated: %s", edge_id, reason)
        return alert

    def _revert_roles(self, edge: SyncEdge):
        for bid in edge.peers():
            still_uni_target = any(
                e.state is EdgeState.ACTIVE and e.target == bid
                and e.direction is SyncDirection.UNIDIRECTIONAL
                for e in self.edges.values())
            still_bi = any(
                e.state is EdgeState.ACTIVE and bid in e.peers()
                and e.direction is SyncDirection.BIDIRECTIONAL
                for e in self.edges.values())
            if still_uni_target:
                role = BranchRole.UNI_TARGET
            elif still_bi:
                role = BranchRole.BI_PEER
            else:
                role = BranchRole.FREE
            self.db.set_branch_role(bid, role)
