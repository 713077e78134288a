"""Experiment runner: chunking-policy sharing, multi-branch storage, and
attribute-grouping studies at desk or full scale.

Three experiments:

  E1  One table bulk-loaded, then four workloads (append-only, localized,
      uniform, mixed) under both chunking policies. The capacity policy is
      calibrated so its span size matches the content policy's realized
      mean over the bulk-loaded data.
  E2  Five branches forked from one loaded snapshot, a mixed workload on
      each, comparing unique chunks and bytes across policies.
  E3  The alternating-columns workload against a row layout versus two
      attribute groups, under both policies; reports the storage reduction
      the grouped layout achieves.

Every configuration runs in its own fresh store under the experiment root.
Reported chunk and byte counts come from store stats, which are themselves
recomputed from a directory walk on open, so the numbers are audit-friendly.
Desk scale cuts rows and commits by five for sub-minute runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .chunker import ChunkingPolicy, Entry, PolicyMode, expected_span_stats
from .database import Database
from .errors import RefusingToOverwrite
from .relation import encode_key, ColumnType
from .workloads import (
    KEY_STRIDE,
    WorkloadGenerator,
    WorkloadKind,
    WorkloadSpec,
    experiment_schema,
)

DEFAULT_SEED = 0xC0FFEE
DEFAULT_TARGET = 16
OPS_PER_COMMIT = 200

SCALES = {
    "desk": {"rows": 10_000, "commits": 100, "branch_commits": 50},
    "full": {"rows": 50_000, "commits": 500, "branch_commits": 250},
}

E1_WORKLOADS = [
    WorkloadKind.APPEND_ONLY,
    WorkloadKind.LOCALIZED_UPDATE,
    WorkloadKind.UNIFORM_UPDATE,
    WorkloadKind.MIXED,
]

REPORT_COLUMNS = ["experiment", "workload", "policy", "layout",
                  "unique_chunks", "total_bytes", "mean_chunk_entries", "seconds"]


@dataclass(frozen=True)
class ExperimentRow:
    experiment: str
    workload: str
    policy: str
    layout: str
    unique_chunks: int
    total_bytes: int
    mean_chunk_entries: float
    seconds: float

    def tsv(self) -> str:
        return "\t".join([
            self.experiment, self.workload, self.policy, self.layout,
            str(self.unique_chunks), str(self.total_bytes),
            f"{self.mean_chunk_entries:.2f}", f"{self.seconds:.3f}",
        ])


def content_policy(target: int = DEFAULT_TARGET) -> ChunkingPolicy:
    return ChunkingPolicy(PolicyMode.CONTENT, target)


def calibrated_capacity_policy(rows: int, target: int = DEFAULT_TARGET) -> ChunkingPolicy:
    """Capacity target matching the content policy's realized mean span
    over the initial key population."""
    keys = [Entry(encode_key(ColumnType.INT64, i * KEY_STRIDE), b"") for i in range(rows)]
    mean, _, _ = expected_span_stats(keys, content_policy(target))
    return ChunkingPolicy(PolicyMode.CAPACITY, max(1, round(mean)))


def _policy_for(name: str, rows: int, target: int, calibrated: bool) -> ChunkingPolicy:
    if name == "content":
        return content_policy(target)
    if calibrated:
        return calibrated_capacity_policy(rows, target)
    return ChunkingPolicy(PolicyMode.CAPACITY, target)


def realized_mean_entries(db: Database, branch: str = "main") -> float:
    """Entries per leaf averaged over every (table, group) tree at a head."""
    snap = db.snapshot(db.branch(branch).head)
    total_entries = 0
    total_leaves = 0
    for table, groups in snap.tables.items():
        for gid, ref in groups.items():
            ref = db._resolve_ref(ref)
            if ref.height == 0:
                continue
            tree = db._tree(snap.schema_digest, table, gid)
            _, _, leaves = tree.leaf_stats(ref)
            total_entries += ref.entry_count
            total_leaves += leaves
    return total_entries / total_leaves if total_leaves else 0.0


def _commit_batches(db: Database, gen_batches, branch: str = "main"):
    for batch in gen_batches:
        db.commit(branch, batch, actor="bench")


def materialized_snapshot_bytes(db: Database, branch: str = "main") -> int:
    """Payload bytes of every chunk reachable from one head, counted once."""
    snap = db.snapshot(db.branch(branch).head)
    seen = set()
    total = 0
    for table, groups in snap.tables.items():
        for gid, ref in groups.items():
            ref = db._resolve_ref(ref)
            if ref.height == 0:
                continue
            tree = db._tree(snap.schema_digest, table, gid)
            stack = [(ref.root, ref.height)]
            while stack:
                cid, h = stack.pop()
                if cid in seen:
                    continue
                seen.add(cid)
                chunk = db.store.get(cid)
                total += len(chunk.payload)
                if h > 1:
                    from .tree import decode_interior
                    from .store import ChunkId
                    for e in decode_interior(chunk.payload):
                        stack.append((ChunkId(e.value), h - 1))
    return total


def _fresh_db(root: Path, name: str, policy: ChunkingPolicy, grouped: bool) -> Database:
    path = Path(root) / name
    if path.exists() and any(path.iterdir()):
        raise RefusingToOverwrite(f"store root {path} is not empty")
    schema = experiment_schema(grouped=grouped)
    return Database.create(path, {"data": schema}, policy)


def run_single_workload(root: Path, name: str, kind: WorkloadKind,
                        policy: ChunkingPolicy, *, rows: int, commits: int,
                        grouped: bool = False, seed: int = DEFAULT_SEED) -> tuple[Database, ExperimentRow, float]:
    """Bulk load + one workload in a fresh store; returns the open database,
    its report row, and the elapsed seconds."""
    started = time.perf_counter()
    db = _fresh_db(root, name, policy, grouped)
    spec = WorkloadSpec(kind, rows, commits, OPS_PER_COMMIT, seed=seed)
    gen = WorkloadGenerator(spec)
    db.commit("main", gen.initial_rows(), actor="bench")
    _commit_batches(db, gen.batches())
    elapsed = time.perf_counter() - started
    stats = db.stats()
    row = ExperimentRow(
        "E?", kind.value, policy.mode.value, "grouped" if grouped else "row",
        stats.unique_chunks, stats.total_bytes, realized_mean_entries(db), elapsed)
    return db, row, elapsed


def run_e1(root: Path, scale: str, *, policy: str | None = None,
           workloads=None, seed: int = DEFAULT_SEED,
           target: int = DEFAULT_TARGET) -> list[ExperimentRow]:
    params = SCALES[scale]
    rows = []
    kinds = workloads or E1_WORKLOADS
    policies = [policy] if policy else ["capacity", "content"]
    for kind in kinds:
        for pol_name in policies:
            pol = _policy_for(pol_name, params["rows"], target, calibrated=True)
            name = f"e1-{kind.value}-{pol_name}"
            db, row, _ = run_single_workload(
                root, name, kind, pol, rows=params["rows"],
                commits=params["commits"], seed=seed)
            db.close()
            rows.append(ExperimentRow("E1", *_rest(row)))
    return rows


def run_e2(root: Path, scale: str, *, policy: str | None = None,
           seed: int = DEFAULT_SEED, target: int = DEFAULT_TARGET,
           branches: int = 5) -> list[ExperimentRow]:
    params = SCALES[scale]
    out = []
    for pol_name in ([policy] if policy else ["capacity", "content"]):
        pol = _policy_for(pol_name, params["rows"], target, calibrated=True)
        started = time.perf_counter()
        db = _fresh_db(root, f"e2-{pol_name}", pol, grouped=False)
        base_spec = WorkloadSpec(WorkloadKind.MIXED, params["rows"], 1, seed=seed)
        base_gen = WorkloadGenerator(base_spec)
        db.commit("main", base_gen.initial_rows(), actor="bench")
        for b in range(branches):
            bname = f"branch{b}"
            db.create_branch(bname, "main")
            spec = WorkloadSpec(WorkloadKind.MIXED, params["rows"],
                                params["branch_commits"], OPS_PER_COMMIT,
                                seed=seed + 1 + b)
            gen = WorkloadGenerator(spec)
            gen.rows = dict(base_gen.rows)
            gen.live = list(base_gen.live)
            gen._next_slot = base_gen._next_slot
            _commit_batches(db, gen.batches(), bname)
        elapsed = time.perf_counter() - started
        stats = db.stats()
        out.append(ExperimentRow("E2", f"mixed-x{branches}", pol_name, "row",
                                 stats.unique_chunks, stats.total_bytes,
                                 realized_mean_entries(db, "branch0"), elapsed))
        db.close()
    return out


def run_e3(root: Path, scale: str, *, policy: str | None = None,
           layout: str | None = None, seed: int = DEFAULT_SEED,
           target: int = DEFAULT_TARGET) -> list[ExperimentRow]:
    params = SCALES[scale]
    out = []
    for pol_name in ([policy] if policy else ["capacity", "content"]):
        pol = _policy_for(pol_name, params["rows"], target, calibrated=False)
        for grouped in ([layout == "grouped"] if layout else [False, True]):
            name = f"e3-{pol_name}-{'grouped' if grouped else 'row'}"
            db, row, _ = run_single_workload(
                root, name, WorkloadKind.ALTERNATING_COLUMNS, pol,
                rows=params["rows"], commits=params["commits"],
                grouped=grouped, seed=seed)
            db.close()
            out.append(ExperimentRow("E3", *_rest(row)))
    return out


def _rest(row: ExperimentRow):
    return (row.workload, row.policy, row.layout, row.unique_chunks,
            row.total_bytes, row.mean_chunk_entries, row.seconds)


def run_experiment(name: str, root: str | Path, scale: str = "desk", *,
                   policy: str | None = None, layout: str | None = None,
                   seed: int = DEFAULT_SEED,
                   target: int = DEFAULT_TARGET) -> list[ExperimentRow]:
    """Run one named experiment; returns its report rows."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if name == "E1":
        return run_e1(root, scale, policy=policy, seed=seed, target=target)
    if name == "E2":
        return run_e2(root, scale, policy=policy, seed=seed, target=target)
    if name == "E3":
        return run_e3(root, scale, policy=policy, layout=layout, seed=seed, target=target)
    from .errors import InvalidInput
    raise InvalidInput(f"unknown experiment {name!r}")


def write_report(rows: list[ExperimentRow], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            fh.write(row.tsv() + "\n")


def format_report(rows: list[ExperimentRow]) -> str:
    headers = REPORT_COLUMNS
    table = [headers] + [r.tsv().split("\t") for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(headers))]
    lines = []
    for i, line in enumerate(table):
        lines.append("  ".join(c.ljust(w) for c, w in zip(line, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
