"""End-to-end CLI flows, including the shell-level diff oracle."""

from __future__ import annotations

import pytest

from ldb.cli import main

SCHEMA_CFG = "table items (id:int, name:utf8, qty:int) pk=id\n"


@pytest.fixture
def root(tmp_path):
    cfg = tmp_path / "schema.cfg"
    cfg.write_text(SCHEMA_CFG)
    rc = main(["--root", str(tmp_path / "db"), "init", "--schema", str(cfg),
               "--target-entries", "16"])
    assert rc == 0
    return tmp_path


def run(root, *argv, expect=0, capsys=None):
    rc = main(["--root", str(root / "db"), *argv])
    assert rc == expect, f"{argv} -> rc {rc}"


def ops_file(root, name, lines):
    p = root / name
    p.write_text("".join(line + "\n" for line in lines))
    return str(p)


class TestBasicFlow:
    def test_init_stats_zero(self, root, capsys):
        run(root, "stats")
        out = capsys.readouterr().out
        assert "unique_chunks=0" in out and "total_bytes=0" in out

    def test_commit_get_scan(self, root, capsys):
        ops = ops_file(root, "ops.tsv", [
            "insert\titems\t1\tname=ada,qty=3",
            "insert\titems\t2\tname=bo,qty=5",
        ])
        run(root, "commit", "main", "--ops", ops)
        capsys.readouterr()
        run(root, "get", "main", "items", "2")
        assert "name=bo" in capsys.readouterr().out
        run(root, "scan", "main", "items")
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 2

    def test_get_missing_exits_1(self, root, capsys):
        run(root, "get", "main", "items", "42", expect=1)

    def test_usage_error_exits_2(self, root):
        with pytest.raises(SystemExit) as exc:
            main(["--root", str(root / "db"), "nonsense"])
        assert exc.value.code == 2

    def test_domain_error_exits_1(self, root, capsys):
        ops = ops_file(root, "bad.tsv", ["update\titems\t404\tqty=1"])
        run(root, "commit", "main", "--ops", ops, expect=1)
        assert "error:" in capsys.readouterr().err


class TestDiffOracle:
    def test_diff_equals_scan_difference(self, root, capsys):
        run(root, "commit", "main", "--ops", ops_file(root, "a.tsv", [
            f"insert\titems\t{i}\tname=n{i},qty={i}" for i in range(10)]))
        s1 = capsys.readouterr().out.strip()
        run(root, "commit", "main", "--ops", ops_file(root, "b.tsv", [
            "update\titems\t3\tqty=99",
            "delete\titems\t5",
            "insert\titems\t50\tname=new,qty=0",
        ]))
        s2 = capsys.readouterr().out.strip()

        run(root, "scan", s1, "items")
        rows1 = dict(line.split("\t", 1) for line in capsys.readouterr().out.strip().splitlines())
        run(root, "scan", s2, "items")
        rows2 = dict(line.split("\t", 1) for line in capsys.readouterr().out.strip().splitlines())

        run(root, "diff", s1, s2)
        got = capsys.readouterr().out.strip().splitlines()
        added = {l.split("\t")[2] for l in got if l.startswith("added")}
        removed = {l.split("\t")[2] for l in got if l.startswith("removed")}
        modified = {l.split("\t")[2] for l in got if l.startswith("modified")}
        assert added == rows2.keys() - rows1.keys()
        assert removed == rows1.keys() - rows2.keys()
        assert modified == {k for k in rows1.keys() & rows2.keys() if rows1[k] != rows2[k]}


class TestHistoryCommands:
    def test_log_and_blame(self, root, capsys):
        run(root, "commit", "main", "--ops",
            ops_file(root, "o1.tsv", ["insert\titems\t1\tname=a,qty=1"]))
        run(root, "commit", "main", "--ops",
            ops_file(root, "o2.tsv", ["update\titems\t1\tqty=9"]))
        capsys.readouterr()
        run(root, "log", "main")
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        assert "(root)" in lines[0]
        run(root, "blame", "main", "items", "1")
        blame_line = capsys.readouterr().out.strip()
        assert blame_line.split("\t")[0] == lines[2].split("\t")[0]

    def test_branch_and_merge(self, root, capsys):
        run(root, "commit", "main", "--ops",
            ops_file(root, "o1.tsv", ["insert\titems\t1\tname=a,qty=1"]))
        run(root, "branch", "dev", "--from", "main")
        run(root, "commit", "dev", "--ops",
            ops_file(root, "o2.tsv", ["insert\titems\t2\tname=b,qty=2"]))
        capsys.readouterr()
        run(root, "merge", "dev", "main")
        capsys.readouterr()
        run(root, "scan", "main", "items")
        assert len(capsys.readouterr().out.strip().splitlines()) == 2


class TestSchemaAndViews:
    def test_schema_add_column_cli(self, root, capsys):
        run(root, "commit", "main", "--ops",
            ops_file(root, "o1.tsv", ["insert\titems\t1\tname=a,qty=1"]))
        capsys.readouterr()
        run(root, "schema", "main", "add-column", "items", "flag:int:default=0",
            "--name", "v2")
        capsys.readouterr()
        run(root, "get", "v2", "items", "1")
        assert "flag=0" in capsys.readouterr().out

    def test_view_create_and_read(self, root, capsys):
        run(root, "commit", "main", "--ops", ops_file(root, "o1.tsv", [
            f"insert\titems\t{i}\tname=n{i},qty={i}" for i in range(1, 8)]))
        capsys.readouterr()
        run(root, "view", "create", "big", "--base", "main", "--table", "items",
            "--cols", "id,qty", "--where", "qty>4")
        capsys.readouterr()
        run(root, "scan", "big", "big")
        lines = capsys.readouterr().out.strip().splitlines()
        assert {l.split("\t")[0] for l in lines} == {"5", "6", "7"}


class TestSyncCli:
    def test_attach_tick_alerts(self, root, capsys):
        run(root, "branch", "mirror", "--from", "main")
        capsys.readouterr()
        run(root, "sync", "attach", "--from", "main", "--to", "mirror",
            "--freq", "periodic:5", "--cond", "rows=1000")
        edge = capsys.readouterr().out.strip()
        run(root, "commit", "main", "--ops",
            ops_file(root, "o1.tsv", ["insert\titems\t1\tname=a,qty=1"]))
        capsys.readouterr()
        run(root, "tick", "+5")
        capsys.readouterr()
        run(root, "scan", "mirror", "items")
        assert len(capsys.readouterr().out.strip().splitlines()) == 1
        run(root, "alerts")
        assert capsys.readouterr().out.strip() == ""

    def test_sync_now(self, root, capsys):
        run(root, "branch", "mirror", "--from", "main")
        capsys.readouterr()
        run(root, "sync", "attach", "--from", "main", "--to", "mirror",
            "--freq", "ondemand")
        edge = capsys.readouterr().out.strip()
        run(root, "commit", "main", "--ops",
            ops_file(root, "o1.tsv", ["insert\titems\t1\tname=a,qty=1"]))
        capsys.readouterr()
        run(root, "sync", "now", edge)
        capsys.readouterr()
        run(root, "get", "mirror", "items", "1")
        assert "name=a" in capsys.readouterr().out


class TestBenchCli:
    def test_bench_writes_report(self, root, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        import ldb.bench as bench
        monkeypatch.setitem(bench.SCALES, "desk",
                            {"rows": 300, "commits": 3, "branch_commits": 2})
        run(root, "bench", "run", "--experiment", "E3", "--scale", "desk",
            "--policy", "content")
        out = capsys.readouterr().out
        assert "report written" in out
        lines = (tmp_path / "report.tsv").read_text().strip().splitlines()
        assert lines[0].startswith("experiment\t")
        assert len(lines) == 3  # header + two layouts


class TestDeterminism:
    def test_identical_invocations_identical_manifests(self, tmp_path, capsys):
        # Same CLI sequence in two fresh roots -> byte-identical manifest logs.
        def drive(root):
            cfg = root / "schema.cfg"
            cfg.write_text(SCHEMA_CFG)
            main(["--root", str(root / "db"), "init", "--schema", str(cfg),
                  "--target-entries", "16"])
            ops = root / "ops.tsv"
            ops.write_text("insert\titems\t1\tname=a,qty=1\ninsert\titems\t2\tname=b,qty=2\n")
            main(["--root", str(root / "db"), "commit", "main", "--ops", str(ops)])
            main(["--root", str(root / "db"), "branch", "dev", "--from", "main"])
            ops2 = root / "ops2.tsv"
            ops2.write_text("update\titems\t1\tqty=9\n")
            main(["--root", str(root / "db"), "commit", "dev", "--ops", str(ops2)])
            return (root / "db" / "manifest.log").read_bytes()

        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir()
        b.mkdir()
        assert drive(a) == drive(b)
        capsys.readouterr()
