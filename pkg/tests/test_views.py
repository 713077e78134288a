"""Views as synced branches: creation, delta maintenance, versioned history."""

from __future__ import annotations

import random

import pytest

from ldb.changes import RowDelta
from ldb.chunker import ChunkingPolicy, PolicyMode
from ldb.database import Database, WriteOp
from ldb.errors import ViewError
from ldb.relation import parse_schema_config
from ldb.syncing import Condition, ConditionKind, EdgeState, Frequency, FrequencyKind
from ldb.views import Comparison, ViewDef, parse_predicate, validate_view, view_delta

CFG = "table t (id:int, a:int, b:utf8, c:float:default=0.0) pk=id groups=[a,b|c]\n"


def make_db(tmp_path):
    return Database.create(tmp_path / "db", parse_schema_config(CFG),
                           ChunkingPolicy(PolicyMode.CONTENT, 16))


def ins(k, **vals):
    return WriteOp("insert", "t", k, vals)


def upd(k, **vals):
    return WriteOp("update", "t", k, vals)


def dele(k):
    return WriteOp("delete", "t", k)


def brute_force(db, branch, viewdef):
    rows = db.scan_rows(branch, "t")
    return {pk: viewdef.project(row) for pk, row in rows if viewdef.matches(row)}


HIGH_A = ViewDef("high_a", "t", ("id", "a", "b"), (Comparison("a", ">", 10),))


class TestValidation:
    def test_must_project_pk(self, tmp_path):
        db = make_db(tmp_path)
        base = db.schemas[db.branch("main").schema_digest]["t"]
        with pytest.raises(ViewError):
            validate_view(ViewDef("v", "t", ("a",)), base)

    def test_unknown_column(self, tmp_path):
        db = make_db(tmp_path)
        base = db.schemas[db.branch("main").schema_digest]["t"]
        with pytest.raises(ViewError):
            validate_view(ViewDef("v", "t", ("id", "zz")), base)
        with pytest.raises(ViewError):
            validate_view(ViewDef("v", "t", ("id",), (Comparison("zz", "=", 1),)), base)

    def test_predicate_type_check(self, tmp_path):
        db = make_db(tmp_path)
        base = db.schemas[db.branch("main").schema_digest]["t"]
        with pytest.raises(ViewError):
            validate_view(ViewDef("v", "t", ("id", "a"), (Comparison("a", ">", "x"),)), base)

    def test_parse_predicate(self, tmp_path):
        db = make_db(tmp_path)
        base = db.schemas[db.branch("main").schema_digest]["t"]
        comps = parse_predicate("a>10 and b=hello", base)
        assert comps == (Comparison("a", ">", 10), Comparison("b", "=", "hello"))


class TestViewDelta:
    def test_insert_outside_predicate_empty(self):
        d = RowDelta(added=((1, {"id": 1, "a": 5, "b": "x", "c": 0.0}),))
        assert view_delta(HIGH_A, d).is_empty()

    def test_update_across_boundary_becomes_add(self):
        d = RowDelta(modified=((1, {"id": 1, "a": 5, "b": "x", "c": 0.0},
                                {"id": 1, "a": 15, "b": "x", "c": 0.0}),))
        vd = view_delta(HIGH_A, d)
        assert [pk for pk, _ in vd.added] == [1]
        assert not vd.removed and not vd.modified

    def test_update_leaving_becomes_remove(self):
        d = RowDelta(modified=((1, {"id": 1, "a": 15, "b": "x", "c": 0.0},
                                {"id": 1, "a": 5, "b": "x", "c": 0.0}),))
        vd = view_delta(HIGH_A, d)
        assert [pk for pk, _ in vd.removed] == [1]

    def test_projection_only_change_dropped(self):
        d = RowDelta(modified=((1, {"id": 1, "a": 15, "b": "x", "c": 0.0},
                                {"id": 1, "a": 15, "b": "x", "c": 9.0}),))
        assert view_delta(HIGH_A, d).is_empty()  # c is not projected


class TestCreateView:
    def test_identity_view_tracks_base(self, tmp_path):
        db = make_db(tmp_path)
        db.commit("main", [ins(i, a=i, b=f"s{i}") for i in range(10)])
        vdef = ViewDef("copy", "t", ("id", "a", "b", "c"))
        db.create_view("main", vdef)
        assert {pk for pk, _ in db.scan_rows("copy", "copy")} == set(range(10))
        db.commit("main", [ins(50, a=50, b="new")])
        rows = dict(db.scan_rows("copy", "copy"))
        assert rows[50]["a"] == 50

    def test_predicate_view_contents(self, tmp_path):
        db = make_db(tmp_path)
        db.commit("main", [ins(i, a=i, b="x") for i in range(1, 21)])
        db.create_view("main", HIGH_A)
        rows = dict(db.scan_rows("high_a", "high_a"))
        assert set(rows) == set(range(11, 21))
        assert all(set(r) == {"id", "a", "b"} for r in rows.values())

    def test_view_creation_is_lazy(self, tmp_path):
        db = make_db(tmp_path)
        db.commit("main", [ins(i, a=i, b="x") for i in range(200)])
        bytes_before = db.stats().total_bytes
        db.create_view("main", HIGH_A)
        assert db.stats().total_bytes == bytes_before
        db.scan_rows("high_a", "high_a")  # materializes
        assert db.stats().total_bytes > bytes_before

    def test_randomized_views_vs_brute_force(self, tmp_path):
        rng = random.Random(31)
        for trial in range(10):
            import tempfile
            root = tempfile.mkdtemp(dir=tmp_path)
            db = Database.create(f"{root}/db", parse_schema_config(CFG),
                                 ChunkingPolicy(PolicyMode.CONTENT, 16))
            db.commit("main", [ins(i, a=rng.randrange(100), b=f"s{i % 7}")
                               for i in range(50)])
            cols = ("id", "a") if rng.random() < 0.5 else ("id", "a", "b")
            preds = ()
            if rng.random() < 0.7:
                preds = (Comparison("a", rng.choice([">", "<", ">=", "<="]),
                                    rng.randrange(100)),)
            vdef = ViewDef(f"v{trial}", "t", cols, preds)
            db.create_view("main", vdef)
            live = {pk for pk, _ in db.scan_rows("main", "t")}
            for _ in range(10):
                roll = rng.random()
                if roll < 0.4:
                    k = max(live, default=0) + 1 + rng.randrange(5)
                    db.commit("main", [ins(k, a=rng.randrange(100), b="z")])
                    live.add(k)
                elif roll < 0.8 and live:
                    db.commit("main", [upd(rng.choice(sorted(live)), a=rng.randrange(100))])
                elif live:
                    k = rng.choice(sorted(live))
                    db.commit("main", [dele(k)])
                    live.discard(k)
                got = dict(db.scan_rows(vdef.name, vdef.name))
                assert got == brute_force(db, "main", vdef)
            db.close()


class TestViewHistory:
    def test_old_view_snapshots_stable(self, tmp_path):
        db = make_db(tmp_path)
        db.commit("main", [ins(i, a=i, b="x") for i in range(1, 21)])
        db.create_view("main", HIGH_A)
        db.scan_rows("high_a", "high_a")
        frozen = db.branch("high_a").head
        frozen_rows = db.scan_rows(frozen.hex, "high_a")
        db.commit("main", [upd(15, a=0), ins(100, a=100, b="y")])
        assert db.scan_rows(frozen.hex, "high_a") == frozen_rows
        now = dict(db.scan_rows("high_a", "high_a"))
        assert 15 not in now and 100 in now

    def test_deferred_view_reflects_commits_on_read(self, tmp_path):
        db = make_db(tmp_path)
        db.commit("main", [ins(1, a=20, b="x")])
        db.create_view("main", HIGH_A, frequency=Frequency(FrequencyKind.DEFERRED))
        db.commit("main", [ins(2, a=30, b="y")])
        db.commit("main", [ins(3, a=5, b="z")])
        got = dict(db.scan_rows("high_a", "high_a"))
        assert set(got) == {1, 2}

    def test_schema_change_condition_freezes_view(self, tmp_path):
        from ldb.evolution import SchemaChangeOp
        from ldb.relation import Column, ColumnType
        db = make_db(tmp_path)
        db.commit("main", [ins(i, a=i + 10, b="x") for i in range(1, 4)])
        db.create_view("main", HIGH_A,
                       conditions=(Condition(ConditionKind.SCHEMA_CHANGE_INVOLVED),))
        before = dict(db.scan_rows("high_a", "high_a"))
        db.apply_schema_change(
            "main", SchemaChangeOp.add_column("t", Column("x", ColumnType.INT64, default=0)),
            carry_name=True)
        edges = list(db.sync.edges.values())
        assert any(e.state is EdgeState.DISASSOCIATED for e in edges)
        assert len(db.alerts()) == 1
        # view frozen; the renamed old chain evolves independently
        db.commit("main", [ins(99, a=99, b="q")])
        assert dict(db.scan_rows("high_a", "high_a")) == before
