"""Command-line interface.

Exit codes: 0 success, 1 domain error (message on stderr), 2 usage error.
Ops files are TSV: ``op<TAB>table<TAB>key<TAB>col=val,...`` with insert,
update, or delete ops; ``null`` denotes SQL NULL. String values must not
contain commas or tabs (use the API for those).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import format_report, run_experiment, write_report
from .chunker import ChunkingPolicy, PolicyMode
from .database import Database, SnapshotId, WriteOp
from .errors import LdbError
from .evolution import SchemaChangeOp
from .relation import Column, ColumnType, Schema, parse_column_spec, parse_schema_config
from .syncing import Condition, ConditionKind, Frequency, SyncDirection
from .views import ViewDef, parse_predicate


def _coerce(col: Column, raw: str):
    if raw == "null":
        return None
    if col.type is ColumnType.INT64:
        return int(raw)
    if col.type is ColumnType.FLOAT64:
        return float(raw)
    return raw


def _typed_key(schema: Schema, raw: str):
    return _coerce(schema.pk_column(), raw)


def _schema_at(db: Database, target: str, table: str) -> Schema:
    snap = db._resolve_snapshot(target)
    tables = db.schemas[snap.schema_digest]
    if table not in tables:
        raise LdbError(f"no table {table!r}")
    return tables[table]


def _parse_values(schema: Schema, text: str) -> dict:
    values = {}
    if not text.strip():
        return values
    for part in text.split(","):
        name, _, raw = part.partition("=")
        name = name.strip()
        values[name] = _coerce(schema.column(name), raw.strip())
    return values


def _format_row(row: dict) -> str:
    return ",".join(f"{k}={'null' if v is None else v}" for k, v in row.items())


def _read_ops_file(db: Database, branch: str, path: str) -> list[WriteOp]:
    tables = db.schemas[db.branch(branch).schema_digest]
    ops = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise LdbError(f"{path}:{lineno}: need op<TAB>table<TAB>key")
            op, table, raw_key = parts[0], parts[1], parts[2]
            if table not in tables:
                raise LdbError(f"{path}:{lineno}: no table {table!r}")
            schema = tables[table]
            key = _typed_key(schema, raw_key)
            values = _parse_values(schema, parts[3]) if len(parts) > 3 else {}
            ops.append(WriteOp(op, table, key, values or None))
    return ops


def _parse_conditions(raw_conditions: list[str]) -> tuple[Condition, ...]:
    out = []
    for raw in raw_conditions or []:
        if raw.startswith("tables="):
            out.append(Condition(ConditionKind.TABLES_TOUCHED,
                                 tables=tuple(raw[len("tables="):].split(","))))
        elif raw.startswith("fraction="):
            out.append(Condition(ConditionKind.FRACTION_CHANGED,
                                 threshold=float(raw[len("fraction="):])))
        elif raw.startswith("rows="):
            out.append(Condition(ConditionKind.ROWS_CHANGED,
                                 max_rows=int(raw[len("rows="):])))
        elif raw == "schemachange":
            out.append(Condition(ConditionKind.SCHEMA_CHANGE_INVOLVED))
        else:
            raise LdbError(f"unknown condition {raw!r}")
    return tuple(out)


def _log_line(db: Database, sid, ann) -> str:
    if ann is None:
        return f"{sid.hex}\t(root)"
    return (f"{sid.hex}\t{ann.kind.value}\tts={ann.provenance.ts}"
            f"\tactor={ann.provenance.actor}\t{ann.description}")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_init(args) -> int:
    text = Path(args.schema).read_text(encoding="utf-8")
    tables = parse_schema_config(text)
    policy = ChunkingPolicy(
        PolicyMode(args.policy), args.target_entries, args.window,
        args.min_entries, args.max_entries)
    Database.create(args.root, tables, policy).close()
    print(f"initialized {args.root} with tables: {', '.join(tables)}")
    return 0


def cmd_branch(args) -> int:
    db = Database.open(args.root)
    b = db.create_branch(args.name, args.source, actor=args.actor)
    print(f"branch {b.name} at {b.head.hex}")
    db.close()
    return 0


def cmd_commit(args) -> int:
    db = Database.open(args.root)
    ops = _read_ops_file(db, args.branch, args.ops)
    at = SnapshotId.from_hex(args.at) if args.at else None
    sid = db.commit(args.branch, ops, at=at, actor=args.actor)
    print(sid.hex)
    db.close()
    return 0


def cmd_get(args) -> int:
    db = Database.open(args.root)
    schema = _schema_at(db, args.target, args.table)
    row = db.read_row(args.target, args.table, _typed_key(schema, args.key))
    if row is None:
        print(f"{args.key} not found", file=sys.stderr)
        db.close()
        return 1
    print(f"{args.key}\t{_format_row(row)}")
    db.close()
    return 0


def cmd_scan(args) -> int:
    db = Database.open(args.root)
    schema = _schema_at(db, args.target, args.table)
    lo = _typed_key(schema, args.lo) if args.lo is not None else None
    hi = _typed_key(schema, args.hi) if args.hi is not None else None
    for pk, row in db.scan_rows(args.target, args.table, lo, hi):
        print(f"{pk}\t{_format_row(row)}")
    db.close()
    return 0


def cmd_diff(args) -> int:
    db = Database.open(args.root)
    delta = db.diff_snapshots(args.a, args.b)
    for table in sorted(delta):
        rd = delta[table]
        for pk, row in rd.added:
            print(f"added\t{table}\t{pk}\t{_format_row(row)}")
        for pk, row in rd.removed:
            print(f"removed\t{table}\t{pk}\t{_format_row(row)}")
        for pk, old, new in rd.modified:
            print(f"modified\t{table}\t{pk}\t{_format_row(old)}\t{_format_row(new)}")
    db.close()
    return 0


def cmd_log(args) -> int:
    db = Database.open(args.root)
    for sid, ann in db.log(args.branch):
        print(_log_line(db, sid, ann))
    db.close()
    return 0


def cmd_blame(args) -> int:
    db = Database.open(args.root)
    schema = _schema_at(db, args.branch, args.table)
    sid, ann = db.blame(args.branch, args.table, _typed_key(schema, args.key))
    print(_log_line(db, sid, ann))
    db.close()
    return 0


def cmd_merge(args) -> int:
    db = Database.open(args.root)
    sid = db.merge(args.source, args.dest, actor=args.actor)
    print(sid.hex)
    db.close()
    return 0


def cmd_schema(args) -> int:
    db = Database.open(args.root)
    if args.schema_cmd == "add-column":
        col = parse_column_spec(args.colspec)
        op = SchemaChangeOp.add_column(args.table, col, group_index=args.group)
    elif args.schema_cmd == "drop-column":
        op = SchemaChangeOp.drop_column(args.table, args.column)
    elif args.schema_cmd == "rename-column":
        op = SchemaChangeOp.rename_column(args.table, args.old, args.new)
    else:
        raw = args.groups.strip()
        if raw.startswith("groups="):
            raw = raw[len("groups="):]
        raw = raw.strip("[]")
        groups = [[c.strip() for c in part.split(",") if c.strip()]
                  for part in raw.split("|")]
        op = SchemaChangeOp.regroup(args.table, groups)
    b = db.apply_schema_change(
        args.branch, op, sync=args.sync, lazy=args.lazy,
        carry_name=args.carry_name, new_name=args.name, actor=args.actor)
    print(f"branch {b.name} at {b.head.hex}")
    db.close()
    return 0


def cmd_view(args) -> int:
    db = Database.open(args.root)
    base_schema = _schema_at(db, args.base, args.table)
    cols = tuple(c.strip() for c in args.cols.split(","))
    predicate = parse_predicate(args.where or "", base_schema)
    vdef = ViewDef(args.name, args.table, cols, predicate)
    b = db.create_view(args.base, vdef, Frequency.parse(args.freq),
                       _parse_conditions(args.cond), actor=args.actor)
    print(f"view branch {b.name} at {b.head.hex}")
    db.close()
    return 0


def cmd_sync(args) -> int:
    db = Database.open(args.root)
    if args.sync_cmd == "attach":
        direction = (SyncDirection.BIDIRECTIONAL if args.direction == "bi"
                     else SyncDirection.UNIDIRECTIONAL)
        edge = db.attach_sync(args.source, args.target, direction,
                              conditions=_parse_conditions(args.cond),
                              frequency=Frequency.parse(args.freq))
        print(edge.edge_id)
    else:
        db.sync_now(args.edge)
        print("flushed")
    db.close()
    return 0


def cmd_tick(args) -> int:
    db = Database.open(args.root)
    amount = args.amount
    if amount.startswith("+"):
        now = db.sync.tick_now + int(amount[1:])
    else:
        now = int(amount)
    db.tick(now)
    print(f"tick={now}")
    db.close()
    return 0


def cmd_alerts(args) -> int:
    db = Database.open(args.root)
    for alert in db.alerts():
        print(json.dumps(alert.to_json(), sort_keys=True))
    db.close()
    return 0


def cmd_stats(args) -> int:
    db = Database.open(args.root)
    s = db.stats()
    print(f"unique_chunks={s.unique_chunks}\ttotal_bytes={s.total_bytes}"
          f"\tvirtual_chunks={s.virtual_chunks}")
    db.close()
    return 0


def cmd_bench(args) -> int:
    rows = run_experiment(args.experiment, args.dir, args.scale,
                          policy=args.policy, layout=args.layout, seed=args.seed)
    print(format_report(rows))
    write_report(rows, args.out)
    print(f"report written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ldb", description="versioned branching storage engine")
    p.add_argument("--root", default=".", help="database root directory")
    p.add_argument("--actor", default="cli", help="provenance actor string")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("init", help="create a database from a schema config")
    sp.add_argument("--schema", required=True)
    sp.add_argument("--policy", choices=["capacity", "content"], default="content")
    sp.add_argument("--target-entries", type=int, default=64)
    sp.add_argument("--window", type=int, default=4)
    sp.add_argument("--min-entries", type=int, default=None)
    sp.add_argument("--max-entries", type=int, default=None)
    sp.set_defaults(fn=cmd_init)

    sp = sub.add_parser("branch", help="fork a branch")
    sp.add_argument("name")
    sp.add_argument("--from", dest="source", required=True)
    sp.set_defaults(fn=cmd_branch)

    sp = sub.add_parser("commit", help="apply an ops file to a branch head")
    sp.add_argument("branch")
    sp.add_argument("--ops", required=True)
    sp.add_argument("--at", default=None, help="expected head snapshot (hex)")
    sp.set_defaults(fn=cmd_commit)

    sp = sub.add_parser("get", help="read one row")
    sp.add_argument("target", help="branch name or snapshot hex")
    sp.add_argument("table")
    sp.add_argument("key")
    sp.set_defaults(fn=cmd_get)

    sp = sub.add_parser("scan", help="scan a key range")
    sp.add_argument("target")
    sp.add_argument("table")
    sp.add_argument("--lo", default=None)
    sp.add_argument("--hi", default=None)
    sp.set_defaults(fn=cmd_scan)

    sp = sub.add_parser("diff", help="row differences between two snapshots")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.set_defaults(fn=cmd_diff)

    sp = sub.add_parser("log", help="branch history")
    sp.add_argument("branch")
    sp.set_defaults(fn=cmd_log)

    sp = sub.add_parser("blame", help="last snapshot that touched a key")
    sp.add_argument("branch")
    sp.add_argument("table")
    sp.add_argument("key")
    sp.set_defaults(fn=cmd_blame)

    sp = sub.add_parser("merge", help="three-way merge into a branch")
    sp.add_argument("source")
    sp.add_argument("dest")
    sp.set_defaults(fn=cmd_merge)

    sp = sub.add_parser("schema", help="schema evolution (forks a new chain)")
    sp.add_argument("branch")
    ssub = sp.add_subparsers(dest="schema_cmd", required=True)
    for name in ("add-column", "drop-column", "rename-column", "regroup"):
        q = ssub.add_parser(name)
        q.add_argument("table")
        if name == "add-column":
            q.add_argument("colspec", help="name:type[:nullable][:default=v]")
            q.add_argument("--group", type=int, default=None)
        elif name == "drop-column":
            q.add_argument("column")
        elif name == "rename-column":
            q.add_argument("old")
            q.add_argument("new")
        else:
            q.add_argument("--groups", required=True, help="a,b|c,d")
        q.add_argument("--sync", choices=["bi", "fwd", "rev"], default=None)
        q.add_argument("--lazy", action="store_true")
        q.add_argument("--carry-name", action="store_true")
        q.add_argument("--name", default=None, help="name for the new chain")
    sp.set_defaults(fn=cmd_schema)

    sp = sub.add_parser("view", help="view management")
    vsub = sp.add_subparsers(dest="view_cmd", required=True)
    q = vsub.add_parser("create")
    q.add_argument("name")
    q.add_argument("--base", required=True)
    q.add_argument("--table", required=True)
    q.add_argument("--cols", required=True)
    q.add_argument("--where", default=None)
    q.add_argument("--freq", default="immediate")
    q.add_argument("--cond", action="append", default=[])
    sp.set_defaults(fn=cmd_view)

    sp = sub.add_parser("sync", help="sync edge management")
    syns = sp.add_subparsers(dest="sync_cmd", required=True)
    q = syns.add_parser("attach")
    q.add_argument("--from", dest="source", required=True)
    q.add_argument("--to", dest="target", required=True)
    q.add_argument("--direction", choices=["uni", "bi"], default="uni")
    q.add_argument("--freq", default="immediate",
                   help="immediate|deferred|ondemand|periodic:N")
    q.add_argument("--cond", action="append", default=[],
                   help="tables=t1,t2 | fraction=0.5 | rows=N | schemachange")
    q = syns.add_parser("now")
    q.add_argument("edge")
    sp.set_defaults(fn=cmd_sync)

    sp = sub.add_parser("tick", help="advance the logical clock")
    sp.add_argument("amount", help="+N or absolute tick")
    sp.set_defaults(fn=cmd_tick)

    sp = sub.add_parser("alerts", help="list sync alerts")
    sp.set_defaults(fn=cmd_alerts)

    sp = sub.add_parser("stats", help="chunk store statistics")
    sp.set_defaults(fn=cmd_stats)

    sp = sub.add_parser("bench", help="run a storage experiment")
    bsub = sp.add_subparsers(dest="bench_cmd", required=True)
    q = bsub.add_parser("run")
    q.add_argument("--experiment", choices=["E1", "E2", "E3"], required=True)
    q.add_argument("--scale", choices=["desk", "full"], default="desk")
    q.add_argument("--dir", default=None, help="experiment root (default <root>/bench)")
    q.add_argument("--policy", choices=["capacity", "content"], default=None)
    q.add_argument("--layout", choices=["row", "grouped"], default=None)
    q.add_argument("--seed", type=lambda s: int(s, 0), default=0xC0FFEE)
    q.add_argument("--out", default="report.tsv")
    sp.set_defaults(fn=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "cmd", None) == "bench" and args.dir is None:
        args.dir = str(Path(args.root) / "bench")
    try:
        return args.fn(args)
    except LdbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
