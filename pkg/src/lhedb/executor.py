"""Untrusted-side plan execution.

The executor sees encrypted tables, public metadata and an evaluation
backend that holds no secret key.  Nodes whose inputs are ready run
together on a worker pool; every node is a pure function of its inputs, so
the results (and the operation trace) do not depend on the worker count.
"""

from __future__ import annotations

import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

from . import predicates as pr
from . import relational as rel
from .catalog import EncryptedTable
from .plan import Plan, PlanError, PlanNode
from .vector import (
    Backend,
    HEVector,
    OpTrace,
    he_add,
    he_add_const,
    he_mul,
    he_mul_const,
    he_plain_rsub,
    he_sub,
    product_balanced,
    sum_balanced,
)

CATEGORY = {
    "scan": "scan",
    "eq": "filter", "lt": "filter", "in": "filter", "between": "filter",
    "and": "filter", "or": "filter", "not": "filter", "select_apply": "filter",
    "join": "join", "gather": "join", "mask_inject": "join", "match": "join",
    "group_by": "group", "order_by": "group",
    "arith": "project",
    "aggregate": "aggregate",
}


@dataclass
class ExecutionTrace:
    counts: Counter
    depth: Fraction
    node_depths: dict
    wall_time: float
    ciphertexts: dict = field(default_factory=dict)
    bootstrap: int = 0
    conversion: int = 0

    def by_category(self) -> Counter:
        out: Counter = Counter()
        for (cat, _), c in self.counts.items():
            out[cat] += c
        return out

    def by_op(self) -> Counter:
        out: Counter = Counter()
        for (_, op), c in self.counts.items():
            out[op] += c
        return out

    def shape(self) -> tuple:
        """Everything a server-side observer sees, minus timings."""
        return (tuple(sorted(self.counts.items())), tuple(sorted(self.ciphertexts.items(), key=repr)))

    def summary(self) -> str:
        cats = ", ".join(f"{k}={v}" for k, v in sorted(self.by_category().items()))
        ops = ", ".join(f"{k}={v}" for k, v in sorted(self.by_op().items()))
        return (f"ops by category: {cats}\nops by kind: {ops}\n"
                f"measured depth: {self.depth} (= {float(self.depth):.4f})\n"
                f"bootstrap={self.bootstrap} conversion={self.conversion} wall={self.wall_time:.3f}s")


@dataclass
class ExecutionResult:
    outputs: dict
    trace: ExecutionTrace


def _per_chunk(fn, *inputs):
    """Apply ``fn`` chunk by chunk; scalar (single-vector) inputs are reused
    for every chunk."""
    count = max((len(x) for x in inputs if isinstance(x, list)), default=1)
    out = []
    for c in range(count):
        out.append(fn(*(x[c] if isinstance(x, list) else x for x in inputs)))
    return out


def _lt(op: str, const, terms):
    def f(x, y=None):
        other = const if y is None else y
        d = pr.diff(x, other) if op in ("lt", "ge") else pr.diff(other, x)
        inside = pr.eq_sum(d, terms)
        return pr.bool_not(inside) if op in ("le", "ge") else inside
    return f


def _between_product(lo_terms, hi_terms, lo, hi):
    def f(x):
        geq = pr.bool_not(pr.eq_sum(pr.diff(x, lo), lo_terms))
        leq = pr.bool_not(pr.eq_sum(pr.diff(hi, x), hi_terms))
        return he_mul(geq, leq)
    return f


def _arith(op: str, const):
    if const is not None:
        if op == "add":
            return lambda x: he_add_const(x, const)
        if op == "sub":
            return lambda x: he_add_const(x, -const)
        if op == "rsub":
            return lambda x: he_plain_rsub(x.backend.const(const), x)
        if op == "mul":
            return lambda x: he_mul_const(x, const)
    else:
        return {"add": he_add, "sub": he_sub, "mul": he_mul}[op]
    raise PlanError(f"unknown arithmetic {op!r}")


class Executor:
    def __init__(self, backend: Backend, tables: dict[str, EncryptedTable], workers: int = 1):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.backend = backend
        self.tables = tables
        self.workers = workers

    # -- node evaluation --------------------------------------------------------------

    def _scan(self, plan: Plan, node: PlanNode):
        ref, col = node.params
        source = plan.info.get("sources", {}).get(ref, ref)
        table = self.tables.get(source)
        if table is None or col not in table.columns:
            raise PlanError(f"table {source}.{col} is not loaded")
        return list(table.columns[col].vectors)

    def _eval(self, plan: Plan, node: PlanNode, ins: list):
        kind, prm = node.kind, node.params
        if kind == "scan":
            return self._scan(plan, node)
        if kind == "eq":
            if len(ins) == 2:
                return _per_chunk(pr.eq, ins[0], ins[1])
            return _per_chunk(lambda x: pr.eq(x, prm[1]), ins[0])
        if kind == "in":
            if len(ins) == 2:
                return _per_chunk(lambda x, y: pr.eq_sum(pr.diff(x, y), prm[0]), ins[0], ins[1])
            return _per_chunk(lambda x: pr.eq_sum(x, prm[0]), ins[0])
        if kind == "lt":
            return _per_chunk(_lt(prm[0], prm[1], prm[2]), *ins)
        if kind == "between":
            if prm[0] == "range":
                return _per_chunk(lambda x: pr.eq_sum(x, prm[1]), ins[0])
            return _per_chunk(_between_product(*prm[1:]), ins[0])
        if kind in ("and", "select_apply", "group_by", "order_by"):
            if len(ins) == 1:
                return ins[0]
            return _per_chunk(lambda *xs: product_balanced(list(xs)), *ins)
        if kind == "or":
            return _per_chunk(lambda *xs: pr.bool_not(product_balanced([pr.bool_not(x) for x in xs])), *ins)
        if kind == "not":
            return _per_chunk(pr.bool_not, ins[0])
        if kind == "join":
            return rel.join_masks(ins[0], ins[1], prm[0])
        if kind in ("gather", "mask_inject"):
            masks = ins[0]
            return rel.gather(masks, ins[1], len(masks[0]))
        if kind == "match":
            masks = ins[0]
            return [sum_balanced([m[c] for m in masks]) for c in range(len(masks[0]))]
        if kind == "arith":
            return _per_chunk(_arith(prm[0], prm[1]), *ins)
        if kind == "aggregate":
            rows = prm[1]
            values = rel.select_apply(ins[0], ins[1]) if len(ins) == 2 else ins[0]
            return rel.reduce_chunks(values, rows)
        raise PlanError(f"cannot execute node kind {kind!r}")

    # -- driver --------------------------------------------------------------------------

    def run(self, plan: Plan) -> ExecutionResult:
        be = self.backend
        be.trace = OpTrace()
        order = plan.nodes()
        level: dict[int, int] = {}
        for node in order:
            level[node.nid] = 1 + max((level[i.nid] for i in node.inputs), default=0)
        waves: dict[int, list[PlanNode]] = {}
        for node in order:
            waves.setdefault(level[node.nid], []).append(node)
        values: dict[int, object] = {}

        def run_node(node: PlanNode):
            with be.trace.category(CATEGORY.get(node.kind, "other")):
                return self._eval(plan, node, [values[i.nid] for i in node.inputs])

        start = time.perf_counter()
        pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        try:
            for lvl in sorted(waves):
                batch = waves[lvl]
                if pool is not None and len(batch) > 1:
                    results = list(pool.map(run_node, batch))
                else:
                    results = [run_node(n) for n in batch]
                for n, r in zip(batch, results):
                    values[n.nid] = r
        finally:
            if pool is not None:
                pool.shutdown()
        wall = time.perf_counter() - start

        outputs = {}
        ciphertexts = {}
        node_depths = {}
        for node in order:
            node_depths[node.nid] = _depth(values[node.nid])
        deepest = Fraction(0)
        for out in plan.outputs:
            val = values[out.node.nid]
            outputs[out.key] = val
            ciphertexts[out.key] = 1 if isinstance(val, HEVector) else len(val)
            deepest = max(deepest, _depth(val))
        trace = ExecutionTrace(Counter(be.trace.counts), deepest, node_depths, wall, ciphertexts)
        return ExecutionResult(outputs, trace)


def _depth(value) -> Fraction:
    if isinstance(value, HEVector):
        return value.depth
    if value and isinstance(value[0], list):
        return max(v.depth for row in value for v in row)
    return max((v.depth for v in value), default=Fraction(0))


def execute(plan: Plan, tables: dict[str, EncryptedTable], backend: Backend, workers: int = 1) -> ExecutionResult:
    return Executor(backend, tables, workers).run(plan)
