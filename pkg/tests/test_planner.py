import random
from fractions import Fraction

import pytest

import randsql
from lhedb.client import client_finalize
from lhedb.engine import Engine
from lhedb.errors import InfeasibleWithoutBootstrap
from lhedb.oracle import SqlOracle, results_match
from lhedb.params import Params
from lhedb.plan import annotate_depth, explain
from lhedb.rewrite import (
    optimize,
    rewrite_r1_mask_isolation,
    rewrite_r2_independent_eval,
    rewrite_r3_late_injection,
)


@pytest.fixture(scope="module")
def engine(desk_sim):
    fact, ref = randsql.make_tables(random.Random(1), desk_sim, 30, 5)
    e = Engine.in_memory(desk_sim)
    e.load(fact)
    e.load(ref)
    return e


def depth(plan):
    return annotate_depth(plan).deepest


def test_r1_merges_duplicate_predicates(engine):
    _, orig = engine.plan("SELECT id FROM t WHERE (a = 1 OR a = 1)", optimize=False)
    r1 = rewrite_r1_mask_isolation(orig)
    assert len(r1.nodes()) < len(orig.nodes())
    assert sum(n.kind == "eq" for n in r1.nodes()) == 1
    assert depth(r1) == depth(orig)


def test_r2_conjunction_on_disjoint_columns(engine):
    """Sequential filtering puts the second equality behind the first
    (16 + 1/257 levels of predicate); independent evaluation needs 8 + 1."""
    _, orig = engine.plan("SELECT COUNT(*) FROM t WHERE g = 'red' AND h = 'x'", optimize=False)
    r2 = rewrite_r2_independent_eval(rewrite_r1_mask_isolation(orig))
    agg = Fraction(13, 257)
    assert depth(orig) == 17 + agg
    assert depth(r2) == 9 + agg


def test_r2_leaves_same_column_conjunction(engine):
    # two lower bounds on one column: not fused into a range, filtered in sequence
    _, orig = engine.plan("SELECT COUNT(*) FROM t WHERE a >= 0 AND a >= 1", optimize=False)
    r2 = rewrite_r2_independent_eval(rewrite_r1_mask_isolation(orig))
    assert any(i.kind == "select_apply" for n in r2.nodes() if n.kind != "select_apply" for i in n.inputs)


def test_same_column_range_is_fused(engine):
    plan, _ = engine.plan("SELECT COUNT(*) FROM t WHERE a >= 0 AND a < 2", optimize=False)
    assert [n.kind for n in plan.nodes()].count("between") == 1


def test_r3_injection_report(engine):
    sql = "SELECT COUNT(*), SUM(u.w) FROM t, u WHERE t.k = u.uid AND u.s = 'cube'"
    plan, orig = engine.plan(sql)
    assert depth(orig) == 19 + Fraction(13, 257)
    assert depth(plan) == 11 + Fraction(13, 257)
    assert plan.info["injection"] == ["join u->t: m=1 d_s=9 mask depth=8 B_eff=4 i*=1"]
    assert any(n.kind == "mask_inject" for n in plan.nodes())


def test_r3_is_identity_when_within_budget(engine):
    _, orig = engine.plan("SELECT id FROM t WHERE a = 1", optimize=False)
    assert rewrite_r3_late_injection(orig) is orig


def test_infeasible_plans_raise_with_report(desk_sim):
    tight = Params(n=desk_sim.n, p=257, q_bits=420, depth_budget=8, batching=False)
    fact, ref = randsql.make_tables(random.Random(2), tight, 10, 3)
    e = Engine.in_memory(tight)
    e.load(fact)
    with pytest.raises(InfeasibleWithoutBootstrap) as info:
        e.query("SELECT COUNT(*) FROM t WHERE g = 'red'")
    assert "deepest" in info.value.report


def test_explain_is_deterministic(engine):
    sql = "SELECT g, COUNT(*) FROM t WHERE h = 'x' AND a < 2 GROUP BY g ORDER BY g"
    texts = {explain(*engine.plan(sql)) for _ in range(3)}
    assert len(texts) == 1
    text = texts.pop()
    assert "deepest path:" in text and "verdict: feasible" in text


def test_rewrites_preserve_results_and_never_deepen(micro):
    rng = random.Random(12)
    checked = 0
    for _ in range(80):
        fact, ref = randsql.make_tables(rng, micro)
        e = Engine.in_memory(micro, enforce_budget=False)
        e.load(fact)
        e.load(ref)
        oracle = SqlOracle([fact, ref])
        sql = randsql.query(rng)
        _, orig = e.plan(sql, optimize=False)
        stages = [rewrite_r1_mask_isolation(orig)]
        stages.append(rewrite_r2_independent_eval(stages[0]))
        try:
            stages.append(optimize(orig))
        except InfeasibleWithoutBootstrap:
            pass
        for plan in stages:
            assert depth(plan) <= depth(orig)
            result = e.execute(plan)
            rows = client_finalize(e.session, plan, result).rows
            assert results_match(rows, oracle.run(sql, plan.sink), "ORDER BY" in sql), (sql, plan.info)
            checked += 1
    assert checked >= 200
