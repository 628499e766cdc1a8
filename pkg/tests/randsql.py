"""Random microtables and queries for oracle-equivalence tests.

Value ranges are small enough that every SUM the generator emits passes the
overflow check at p=257 (at most 40 rows times |value| <= 3).
"""

from __future__ import annotations

import datetime as dt
import random

from lhedb.catalog import build_table

GROUPS = ["red", "green", "blue"]
FLAGS = ["x", "y"]
SHAPES = ["cube", "cone", "ring"]
DAY0 = dt.date(2024, 3, 1)


def _day(k: int) -> str:
    return (DAY0 + dt.timedelta(days=k)).isoformat()


def make_tables(rng: random.Random, params, fact_rows: int | None = None, ref_rows: int | None = None):
    n_ref = ref_rows if ref_rows is not None else rng.randint(1, 8)
    n_fact = fact_rows if fact_rows is not None else rng.randint(0, 40)
    u = []
    for i in range(1, n_ref + 1):
        u.append([str(i), str(rng.randint(0, 3)), rng.choice(SHAPES), _day(rng.randint(0, 20))])
    t = []
    for i in range(1, n_fact + 1):
        t.append([str(i), str(rng.randint(0, 3)), str(rng.randint(-3, 3)),
                  f"{rng.randint(0, 3) / 10:.1f}", rng.choice(GROUPS), rng.choice(FLAGS),
                  rng.choice(["true", "false"]), _day(rng.randint(0, 20)), str(rng.randint(1, n_ref))])
    lex = rng.random() < 0.5
    fact = build_table("t", ["id:int:key", "a:int", "b:int", "c:fixed(10)", "g:str", "h:str",
                             "f:bool", "d:date", "k:int"], t, params, lexicographic=lex)
    ref = build_table("u", ["uid:int:key", "w:int", "s:str", "e:date"], u, params, lexicographic=lex)
    return fact, ref


# -- conditions ---------------------------------------------------------------------

def _num_atom(rng, cols):
    col = rng.choice(cols)
    op = rng.choice(["=", "<>", "<", "<=", ">", ">="])
    lit = rng.randint(-4, 4) if col.endswith("b") else rng.randint(-1, 4)
    return f"{col} {op} {lit}"


def _atom(rng, prefix: str = "", joined: bool = False):
    p = prefix
    kind = rng.randrange(9)
    if kind == 0:
        return _num_atom(rng, [f"{p}a", f"{p}b"])
    if kind == 1:
        lo = rng.randint(-2, 2)
        neg = "NOT " if rng.random() < 0.2 else ""
        return f"{p}b {neg}BETWEEN {lo} AND {lo + rng.randint(0, 3)}"
    if kind == 2:
        vals = ", ".join(f"'{v}'" for v in rng.sample(GROUPS, rng.randint(1, 2)))
        neg = "NOT " if rng.random() < 0.2 else ""
        return f"{p}g {neg}IN ({vals})"
    if kind == 3:
        return f"{p}h = '{rng.choice(FLAGS)}'"
    if kind == 4:
        return f"{p}f" if rng.random() < 0.5 else f"NOT {p}f"
    if kind == 5:
        op = rng.choice(["<", ">=", "=", ">"])
        return f"{p}d {op} DATE '{_day(rng.randint(0, 20))}'"
    if kind == 6:
        return f"{p}a {rng.choice(['<', '=', '>='])} {p}b"
    if kind == 7:
        return f"{p}c {rng.choice(['<', '>=', '='])} {rng.randint(0, 3) / 10:.1f}"
    if joined:
        return rng.choice([f"u.w {rng.choice(['<', '>', '='])} {rng.randint(0, 3)}",
                           f"u.s = '{rng.choice(SHAPES)}'",
                           f"u.e < DATE '{_day(rng.randint(0, 20))}'"])
    return f"{p}a + {p}b > {rng.randint(-2, 3)}"


def condition(rng, prefix: str = "", joined: bool = False, depth: int = 0) -> str:
    r = rng.random()
    if depth < 1 and r < 0.35:
        op = rng.choice(["AND", "OR"])
        parts = [condition(rng, prefix, joined, depth + 1) for _ in range(2)]
        return f"({parts[0]} {op} {parts[1]})"
    return _atom(rng, prefix, joined)


# -- queries --------------------------------------------------------------------------

def query(rng: random.Random) -> str:
    kind = rng.randrange(10)
    where = condition(rng)
    if kind == 0:
        return f"SELECT id, a, g FROM t WHERE {where}"
    if kind == 1:
        return f"SELECT * FROM t WHERE {where}"
    if kind == 2:
        agg = rng.choice(["SUM(a)", "AVG(b)", "SUM(c)", "AVG(c)", "SUM(b)"])
        return f"SELECT COUNT(*), {agg} FROM t WHERE {where}"
    if kind == 3:
        order = rng.choice(["", " ORDER BY g", " ORDER BY g DESC"])
        return f"SELECT g, COUNT(*), SUM(a) FROM t WHERE {where} GROUP BY g{order}"
    if kind == 4:
        return "SELECT h, f, AVG(b) FROM t GROUP BY h, f"
    if kind == 5:
        order = rng.choice(["h", "g DESC", "f"])
        return f"SELECT id, b FROM t WHERE {where} ORDER BY {order}"
    if kind == 6:
        cond = condition(rng, "t.", joined=True)
        return f"SELECT t.id, u.w FROM t, u WHERE t.k = u.uid AND {cond}"
    if kind == 7:
        cond = condition(rng, "t.", joined=True)
        return f"SELECT COUNT(*), SUM(u.w) FROM t, u WHERE t.k = u.uid AND {cond}"
    if kind == 8:
        return "SELECT u.s, COUNT(*) FROM t, u WHERE t.k = u.uid GROUP BY u.s"
    return f"SELECT id FROM t WHERE k IN (SELECT uid FROM u WHERE w > {rng.randint(0, 2)})"
