"""Desk-scale benchmark: Q1/Q4/Q6 shapes with and without the planner.

Every query runs twice, unoptimized and optimized, on the simulator backend
and is checked against the SQLite oracle both times.  An unoptimized plan
that exceeds the depth budget is still executed (budget enforcement off) and
flagged as needing bootstrapping, since that is what it would need on real
BFV parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .engine import Engine
from .oracle import SqlOracle, results_match
from .params import Params, profile
from .plan import annotate_depth
from .tpch import generate, queries

# bench profile name -> (parameter profile, lineitem rows)
BENCH_PROFILES = {
    "desk": ("bench", 1024),
    "small": ("desk-sim", 64),
}


@dataclass
class RunReport:
    optimized: bool
    depth: object
    needs_bootstrap: bool
    ops: dict
    categories: dict
    oracle_match: bool
    bootstrap: int
    conversion: int
    wall_time: float
    rows: int

    def stable(self) -> tuple:
        """Everything except the wall time."""
        return (self.optimized, self.depth, self.needs_bootstrap, tuple(sorted(self.ops.items())),
                tuple(sorted(self.categories.items())), self.oracle_match, self.bootstrap,
                self.conversion, self.rows)


@dataclass
class QueryReport:
    name: str
    sql: str
    runs: list[RunReport] = field(default_factory=list)

    @property
    def answers_agree(self) -> bool:
        return all(r.oracle_match for r in self.runs)


@dataclass
class BenchReport:
    profile: str
    params: Params
    seed: int
    rows: dict
    queries: list[QueryReport]

    def stable(self) -> tuple:
        return (self.profile, self.params, self.seed, tuple(sorted(self.rows.items())),
                tuple((q.name, q.sql, tuple(r.stable() for r in q.runs)) for q in self.queries))

    @property
    def all_match(self) -> bool:
        return all(q.answers_agree for q in self.queries)

    def format(self) -> str:
        out = [f"bench profile {self.profile}: {self.params.describe()} seed={self.seed}",
               "tables: " + ", ".join(f"{k}={v} rows" for k, v in sorted(self.rows.items()))]
        for q in self.queries:
            out.append(f"\n{q.name}: {q.sql}")
            for r in q.runs:
                tag = "optimized  " if r.optimized else "unoptimized"
                flag = "  NEEDS BOOTSTRAP" if r.needs_bootstrap else ""
                cats = " ".join(f"{k}={v}" for k, v in sorted(r.categories.items()))
                out.append(f"  {tag} depth={r.depth} ({float(r.depth):.3f}){flag}")
                out.append(f"    ops: {cats}")
                out.append(f"    bootstrap={r.bootstrap} conversion={r.conversion} "
                           f"wall={r.wall_time:.2f}s rows={r.rows} oracle={'match' if r.oracle_match else 'MISMATCH'}")
        out.append(f"\nall oracle checks pass: {self.all_match}")
        return "\n".join(out)


def run_bench(name: str = "desk", seed: int = 0, only: list[str] | None = None) -> BenchReport:
    try:
        params_name, rows = BENCH_PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown bench profile {name!r}; choose from {sorted(BENCH_PROFILES)}") from None
    params = profile(params_name)
    tables = generate(params, rows, seed)
    engine = Engine.in_memory(params, "sim", enforce_budget=False)
    for t in tables.values():
        engine.load(t)
    oracle = SqlOracle(tables.values())
    reports = []
    for qname, sql in queries(params, rows).items():
        if only and qname not in only:
            continue
        rep = QueryReport(qname, sql)
        for optimized in (False, True):
            outcome = engine.query(sql, optimize=optimized)
            depth = annotate_depth(outcome.plan).deepest
            expected = oracle.run(sql, outcome.plan.sink)
            tr = outcome.trace
            rep.runs.append(RunReport(
                optimized, depth, depth > params.depth_budget,
                dict(tr.by_op()), dict(tr.by_category()),
                results_match(outcome.result.rows, expected, "ORDER BY" in sql.upper()),
                tr.bootstrap, tr.conversion, tr.wall_time, len(outcome.result.rows)))
        reports.append(rep)
    return BenchReport(name, params, seed, {k: t.meta.rows for k, t in tables.items()}, reports)
