"""Engine pipeline: workers, obliviousness, on-disk databases, role separation."""

import random

import pytest

import randsql
from lhedb.catalog import build_table
from lhedb.engine import Engine, ingest_csv
from lhedb.errors import BackendMismatch, CatalogError, InfeasibleWithoutBootstrap
from lhedb.oracle import SqlOracle, results_match
from lhedb.params import profile

CSV = """id:int:key,qty:int,price:fixed(10),kind:str,day:date
1,3,1.5,apple,2024-01-03
2,1,0.5,pear,2024-01-05
3,4,2.0,apple,2024-01-09
4,2,1.0,plum,2024-01-02
5,0,0.0,pear,2024-01-07
"""


@pytest.fixture
def csv_file(tmp_path):
    path = tmp_path / "fruit.csv"
    path.write_text(CSV)
    return path


def _engine(params, seed, rows=30):
    fact, ref = randsql.make_tables(random.Random(seed), params, fact_rows=rows, ref_rows=5)
    e = Engine.in_memory(params, enforce_budget=False)
    e.load(fact)
    e.load(ref)
    return e, SqlOracle([fact, ref])


def test_workers_do_not_change_results_or_trace(micro):
    e, _ = _engine(micro, 1)
    sql = "SELECT g, COUNT(*), SUM(a) FROM t WHERE b > 0 GROUP BY g ORDER BY g"
    one = e.query(sql, workers=1)
    four = e.query(sql, workers=4)
    assert one.result.rows == four.result.rows
    assert one.trace.shape() == four.trace.shape()


def test_trace_is_oblivious_to_values(micro):
    sql = "SELECT id, b FROM t WHERE a >= 2 AND g IN ('red', 'blue') ORDER BY h"
    shapes = set()
    for seed in range(4):
        # same public schema: pin the domains so only stored values differ
        fact, ref = randsql.make_tables(random.Random(seed), micro, fact_rows=30, ref_rows=5)
        for tbl in (fact, ref):
            for c in tbl.meta.columns:
                c.lo, c.hi = {"int": (-3, 40), "date": (0, 20)}.get(c.kind, (c.lo, c.hi))
        e = Engine.in_memory(micro, enforce_budget=False)
        e.load(fact)
        e.load(ref)
        shapes.add(e.query(sql).trace.shape())
    assert len(shapes) == 1


def test_empty_table_results(micro):
    e, oracle = _engine(micro, 2, rows=0)
    for sql in ["SELECT COUNT(*), SUM(a) FROM t", "SELECT id FROM t WHERE b > 0",
                "SELECT g, COUNT(*) FROM t GROUP BY g"]:
        out = e.query(sql)
        assert results_match(out.result.rows, oracle.run(sql), False), sql


def test_budget_enforced_in_memory(micro):
    fact, ref = randsql.make_tables(random.Random(5), micro, fact_rows=20, ref_rows=4)
    e = Engine.in_memory(micro)
    e.load(fact)
    e.load(ref)
    sql = "SELECT id FROM t WHERE b < (SELECT SUM(w) FROM u WHERE w > 1)"
    with pytest.raises(InfeasibleWithoutBootstrap) as info:
        e.query(sql, optimize=False)
    assert "exceeds budget" in str(info.value)


def test_sim_database_round_trip(tmp_path, csv_file):
    db = tmp_path / "db"
    meta = ingest_csv(db, "fruit", csv_file, backend="sim", params=profile("desk-sim"), lexicographic=True)
    assert meta.rows == 5
    e = Engine.open_database(db)
    out = e.query("SELECT kind, SUM(qty) FROM fruit GROUP BY kind ORDER BY kind")
    assert out.result.rows == [("apple", 7), ("pear", 1), ("plum", 2)]
    out = e.query("SELECT id FROM fruit WHERE day >= DATE '2024-01-05' AND price < 1.5")
    assert sorted(out.result.rows) == [(2,), (5,)]


def test_bfv_database_with_roles(tmp_path, csv_file):
    from lhedb import bfv
    from lhedb.catalog import save_keys

    params = profile("desk")
    keys = tmp_path / "keys"
    save_keys(keys, params, *bfv.keygen(params, seed=11))
    db = tmp_path / "db"
    ingest_csv(db, "fruit", csv_file, keys=keys, backend="bfv")

    server = Engine.open_database(db, keys=keys, with_client=False)
    assert server.session is None
    plan, _ = server.plan("SELECT COUNT(*) FROM fruit WHERE qty > 1")
    server.execute(plan)
    with pytest.raises(CatalogError):
        server.query("SELECT COUNT(*) FROM fruit WHERE qty > 1")

    client = Engine.open_database(db, keys=keys)
    assert client.query("SELECT COUNT(*) FROM fruit WHERE qty > 1").result.rows == [(3,)]


def test_backend_mismatch(tmp_path, csv_file):
    db = tmp_path / "db"
    ingest_csv(db, "fruit", csv_file, backend="sim", params=profile("desk-sim"))
    with pytest.raises(BackendMismatch):
        Engine.open_database(db, backend="bfv")
    with pytest.raises(BackendMismatch):
        ingest_csv(db, "more", csv_file, backend="sim", params=profile("tiny"))
    with pytest.raises(CatalogError):
        Engine.open_database(tmp_path / "nowhere")


def test_unloaded_table(micro):
    e = Engine.in_memory(micro)
    e.load(build_table("x", ["v:int"], [["1"]], micro))
    with pytest.raises(CatalogError):
        e.query("SELECT v FROM y")
