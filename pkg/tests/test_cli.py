"""Command line end to end, including exit codes."""

import os
import subprocess
import sys

import pytest

from lhedb.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, EXIT_PARSE, EXIT_UNSUPPORTED, main

CSV = """id:int:key,qty:int,price:fixed(10),kind:str,day:date
1,3,1.5,apple,2024-01-03
2,1,0.5,pear,2024-01-05
3,4,2.0,apple,2024-01-09
4,2,1.0,plum,2024-01-02
5,0,0.0,pear,2024-01-07
"""


@pytest.fixture(scope="module")
def bfv_db(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "fruit.csv").write_text(CSV)
    keys, db = root / "keys", root / "db"
    assert main(["keygen", "--params", "desk", "--out", str(keys), "--seed", "5"]) == EXIT_OK
    assert main(["ingest", "--table", "fruit", "--csv", str(root / "fruit.csv"), "--db", str(db),
                 "--keys", str(keys), "--lexicographic"]) == EXIT_OK
    return root, keys, db


@pytest.fixture(scope="module")
def sim_db(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_sim")
    (root / "fruit.csv").write_text(CSV)
    db = root / "db"
    assert main(["ingest", "--table", "fruit", "--csv", str(root / "fruit.csv"), "--db", str(db),
                 "--backend", "sim", "--params", "desk-sim"]) == EXIT_OK
    return db


def test_keygen_writes_private_secret_key(bfv_db):
    _, keys, db = bfv_db
    secret = [p for p in keys.iterdir() if "secret" in p.name]
    assert secret and all(os.stat(p).st_mode & 0o077 == 0 for p in secret)
    assert (db / "params.txt").exists() and (db / "fruit" / "meta.txt").exists()


def test_query_bfv(bfv_db, capsys):
    _, keys, db = bfv_db
    sql = "SELECT kind, SUM(qty), COUNT(*) FROM fruit WHERE day < DATE '2024-01-08' GROUP BY kind ORDER BY kind"
    assert main(["query", "--db", str(db), "--keys", str(keys), "--sql", sql, "--explain"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "apple | 3 | 1" in out and "pear | 1 | 2" in out and "plum | 2 | 1" in out
    assert "(3 rows)" in out and "ops by category" in out


def test_query_sim_workers(sim_db, capsys):
    sql = "SELECT id FROM fruit WHERE price BETWEEN 0.5 AND 1.5"
    assert main(["query", "--db", str(sim_db), "--sql", sql, "--workers", "2", "--no-optimize"]) == EXIT_OK
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert lines[0] == "id" and sorted(lines[1:4]) == ["1", "2", "4"] and lines[4] == "(3 rows)"


@pytest.mark.parametrize("sql,code", [
    ("SELECT id FROM fruit LIMIT 2", EXIT_UNSUPPORTED),
    ("SELECT SUM(qty * qty * qty * qty) FROM fruit", EXIT_UNSUPPORTED),
    ("SELECT id FROM fruit WHERE qty < (SELECT SUM(qty) FROM fruit WHERE price > 0.5)", EXIT_INFEASIBLE),
    ("SELEC id FRM fruit", EXIT_PARSE),
    ("DELETE FROM fruit", EXIT_UNSUPPORTED),
    ("SELECT id FROM missing", EXIT_ERROR),
])
def test_exit_codes(sim_db, sql, code, capsys):
    assert main(["query", "--db", str(sim_db), "--sql", sql]) == code
    assert capsys.readouterr().err


def test_bfv_needs_keys_and_matching_backend(bfv_db, sim_db, capsys):
    _, _, db = bfv_db
    assert main(["query", "--db", str(db), "--sql", "SELECT id FROM fruit"]) == EXIT_ERROR
    assert main(["query", "--db", str(sim_db), "--backend", "bfv", "--sql", "SELECT id FROM fruit"]) == EXIT_ERROR
    assert main(["query", "--db", str(db.parent / "none"), "--sql", "SELECT 1"]) == EXIT_ERROR


def test_expansion(bfv_db, capsys):
    _, _, db = bfv_db
    assert main(["expansion"]) == EXIT_OK
    assert "111.00x" in capsys.readouterr().out
    assert main(["expansion", "--db", str(db), "--params", "desk"]) == EXIT_OK
    assert "fruit:" in capsys.readouterr().out


def test_bench_command(capsys):
    assert main(["bench", "--profile", "small", "--query", "Q6"]) == EXIT_OK
    assert "Q6:" in capsys.readouterr().out


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "lhedb", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "keygen" in out.stdout
