"""Physical operator DAG, depth annotation and plan reports.

Nodes are immutable after construction; rewrites build new nodes and share
untouched subgraphs.  Each node produces either a column (one vector per
chunk of its row space), a mask (same shape, slots 0/1), a join map (one
mask per reference row) or a scalar (one vector, all slots equal).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from . import depth as dp
from .catalog import ColumnSpec, TableMeta, chunk_count
from .errors import LheError
from .params import Params

_ids = itertools.count(1)

PREDICATE_KINDS = {"eq", "lt", "in", "between"}
MASK_KINDS = PREDICATE_KINDS | {"and", "or", "not", "mask_inject", "match", "group_by", "order_by"}
KINDS = MASK_KINDS | {"scan", "select_apply", "join", "gather", "arith", "aggregate"}


class PlanError(LheError):
    """Malformed plan (unknown node kind, bad arity)."""


@dataclass(eq=False)
class PlanNode:
    kind: str
    inputs: tuple = ()
    params: tuple = ()
    rowspace: str = ""
    attrs: frozenset = frozenset()
    nid: int = field(default_factory=lambda: next(_ids))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlanError(f"unknown node kind {self.kind!r}")
        self.inputs = tuple(self.inputs)

    @property
    def is_mask(self) -> bool:
        return self.kind in MASK_KINDS

    @property
    def is_scalar(self) -> bool:
        return self.rowspace == ""

    def label(self) -> str:
        if self.kind == "scan":
            return f"scan {self.params[0]}.{self.params[1]}"
        if not self.params:
            return self.kind
        return f"{self.kind}{_fmt_params(self.params)}"

    def __repr__(self):
        return f"<{self.label()} #{self.nid}>"


def _fmt_params(params) -> str:
    parts = []
    for p in params:
        if isinstance(p, tuple) and len(p) > 6:
            parts.append(f"({p[0]}..{p[-1]}; {len(p)} values)")
        else:
            parts.append(str(p))
    return "(" + ", ".join(parts) + ")"


def make(kind: str, inputs: Iterable[PlanNode], params: tuple = (), rowspace: str | None = None) -> PlanNode:
    inputs = tuple(inputs)
    if rowspace is None:
        spaces = {i.rowspace for i in inputs if i.rowspace}
        if len(spaces) > 1:
            raise PlanError(f"{kind} mixes row spaces {sorted(spaces)}")
        rowspace = spaces.pop() if spaces else ""
    attrs = frozenset().union(*(i.attrs for i in inputs)) if inputs else frozenset()
    return PlanNode(kind, inputs, tuple(params), rowspace, attrs)


def scan(table: str, column: str) -> PlanNode:
    return PlanNode("scan", (), (table, column), table, frozenset({f"{table}.{column}"}))


def pred_at_zero(node: PlanNode) -> int:
    """Value of a comparison node when all its encrypted inputs are 0."""
    kind, prm = node.kind, node.params
    two = len(node.inputs) == 2
    if kind == "eq":
        return int(two or prm[1] == 0)
    if kind == "in":
        return int(0 in prm[0])
    if kind == "lt":
        op, c, terms = prm[0], prm[1], prm[2]
        d0 = 0 if two else (-c if op in ("lt", "ge") else c)
        return int(d0 in terms) ^ int(op in ("le", "ge"))
    if kind == "between":
        if prm[0] == "range":
            return int(0 in prm[1])
        _, lo_terms, hi_terms, lo, hi = prm
        return (1 - int(-lo in lo_terms)) * (1 - int(hi in hi_terms))
    raise ValueError(f"{kind} is not a comparison")


# -- traversal -----------------------------------------------------------------------

def topo_order(roots: Iterable[PlanNode]) -> list[PlanNode]:
    """Inputs before consumers; deterministic (first-visit order)."""
    order, seen = [], set()
    stack = [(r, False) for r in reversed(list(roots))]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.nid in seen:
            continue
        seen.add(node.nid)
        stack.append((node, True))
        for child in reversed(node.inputs):
            if child.nid not in seen:
                stack.append((child, False))
    return order


def signatures(nodes: Iterable[PlanNode]) -> dict[int, int]:
    """Structural identity: equal subtrees get equal integers."""
    table: dict = {}
    sig: dict[int, int] = {}
    for node in topo_order(nodes):
        key = (node.kind, node.params, node.rowspace, tuple(sig[i.nid] for i in node.inputs))
        sig[node.nid] = table.setdefault(key, len(table))
    return sig


# -- plans ---------------------------------------------------------------------------

@dataclass
class Output:
    key: tuple
    node: PlanNode


@dataclass
class ResultItem:
    """One SELECT-list entry: a column, or COUNT/SUM/AVG."""

    name: str
    func: str  # col | expr | key | count | sum | avg
    spec: ColumnSpec | None = None
    scale: int = 1
    index: int = -1  # position in the group key for func == "key"


@dataclass
class Plan:
    kind: str  # rows | aggregate | groups | ordered
    params: Params
    tables: dict[str, TableMeta]
    outputs: list[Output]
    items: list[ResultItem]
    groups: list[tuple] = field(default_factory=list)
    sink: str = ""
    info: dict = field(default_factory=dict)

    def roots(self) -> list[PlanNode]:
        return [o.node for o in self.outputs]

    def nodes(self) -> list[PlanNode]:
        return topo_order(self.roots())

    def chunks(self, rowspace: str) -> int:
        if not rowspace:
            return 1
        return chunk_count(self.tables[rowspace].rows, self.params.n)

    def rows(self, rowspace: str) -> int:
        return self.tables[rowspace].rows

    def replace_outputs(self, mapping: dict[int, PlanNode]) -> "Plan":
        outs = [Output(o.key, mapping.get(o.node.nid, o.node)) for o in self.outputs]
        return Plan(self.kind, self.params, self.tables, outs, self.items, self.groups, self.sink,
                    dict(self.info))


# -- depth model -----------------------------------------------------------------------

def pow_depth(d: Fraction, p: int) -> Fraction:
    return dp.power_depth(d, p - 1)


def sum_of_equal(d: Fraction, k: int, p: int) -> Fraction:
    """Balanced sum of k terms of equal depth d."""
    return d + Fraction(dp.ceil_log2(k), p) if k > 1 else d


def pred_terms(node: PlanNode) -> int:
    """Number of equality terms summed by a comparison node."""
    kind, prm = node.kind, node.params
    if kind == "eq":
        return 1
    if kind == "in":
        return len(prm[0])
    if kind == "lt":
        return len(prm[2])
    if kind == "between" and prm[0] == "range":
        return len(prm[1])
    raise PlanError(f"no term count for {kind}")


def _diff_depth(node: PlanNode, d: list[Fraction], p: int) -> Fraction:
    # two encrypted operands -> one ciphertext subtraction; constants are free
    return dp.add_depth(d[0], d[1], p) if len(d) == 2 else d[0]


def _sum_eq_depth(node: PlanNode, d: list[Fraction], p: int, terms: int) -> Fraction:
    diff = _diff_depth(node, d, p)
    if terms == 0:
        return diff
    return sum_of_equal(pow_depth(diff, p), terms, p)


def node_depth(node: PlanNode, d: list[Fraction], params: Params) -> Fraction:
    """Depth of ``node`` given the depths of its inputs."""
    p, n = params.p, params.n
    kind = node.kind
    if kind == "scan":
        return dp.ZERO
    if kind in ("eq", "in", "lt"):
        return _sum_eq_depth(node, d, p, pred_terms(node))
    if kind == "between":
        strategy = node.params[0]
        if strategy == "range":
            return _sum_eq_depth(node, d, p, pred_terms(node))
        lo_terms, hi_terms = len(node.params[1]), len(node.params[2])
        return dp.mul_depth(_sum_eq_depth(node, d, p, lo_terms), _sum_eq_depth(node, d, p, hi_terms))
    if kind in ("and", "select_apply", "group_by", "order_by"):
        return dp.product_depth(d) if len(d) > 1 else d[0]
    if kind == "or":
        return dp.product_depth(d)
    if kind == "not":
        return d[0]
    if kind == "join":
        bcast = d[1] + Fraction(params.log_n, p)
        return pow_depth(dp.add_depth(d[0], bcast, p), p)
    if kind in ("gather", "mask_inject"):
        ref_rows = node.params[0]
        term = dp.mul_depth(d[0], d[1] + Fraction(params.log_n, p))
        return sum_of_equal(term, ref_rows, p)
    if kind == "match":
        return sum_of_equal(d[0], node.params[0], p)
    if kind == "arith":
        op = node.params[0]
        if len(d) == 1:
            return d[0]
        return dp.mul_depth(d[0], d[1]) if op == "mul" else dp.add_depth(d[0], d[1], p)
    if kind == "aggregate":
        func, chunks = node.params[0], node.params[2]
        base = dp.mul_depth(d[0], d[1]) if len(d) == 2 else d[0]
        return sum_of_equal(base, chunks, p) + Fraction(params.log_n, p)
    raise PlanError(f"unknown node kind {kind!r}")


def _pow_mults(p: int) -> int:
    e = p - 1
    return (e.bit_length() - 1) + (bin(e).count("1") - 1)


def node_mults(node: PlanNode, plan: Plan) -> int:
    """Ciphertext-ciphertext multiplications performed by ``node``."""
    p = plan.params.p
    chunks = plan.chunks(node.rowspace)
    kind = node.kind
    if kind in ("eq", "in", "lt"):
        return pred_terms(node) * _pow_mults(p) * chunks
    if kind == "between":
        if node.params[0] == "range":
            return pred_terms(node) * _pow_mults(p) * chunks
        terms = len(node.params[1]) + len(node.params[2])
        return (terms * _pow_mults(p) + 1) * chunks
    if kind in ("and", "or", "select_apply", "group_by", "order_by"):
        return (len(node.inputs) - 1) * chunks
    if kind == "join":
        return node.params[0] * _pow_mults(p) * chunks
    if kind in ("gather", "mask_inject"):
        return node.params[0] * chunks
    if kind == "arith":
        return chunks if node.params[0] == "mul" and len(node.inputs) == 2 else 0
    if kind == "aggregate":
        return node.params[2] if len(node.inputs) == 2 else 0
    return 0


@dataclass
class Annotation:
    depth: dict[int, Fraction]
    deepest: Fraction
    path: list[PlanNode]
    mults: int

    def of(self, node: PlanNode) -> Fraction:
        return self.depth[node.nid]


def annotate_depth(plan: Plan) -> Annotation:
    """Per-node depth and the deepest path, in one traversal."""
    depth: dict[int, Fraction] = {}
    via: dict[int, PlanNode | None] = {}
    mults = 0
    for node in plan.nodes():
        ins = [depth[i.nid] for i in node.inputs]
        depth[node.nid] = node_depth(node, ins, plan.params)
        via[node.nid] = max(node.inputs, key=lambda i: depth[i.nid]) if node.inputs else None
        mults += node_mults(node, plan)
    if not depth:
        return Annotation(depth, dp.ZERO, [], 0)
    roots = plan.roots()
    end = max(roots, key=lambda r: depth[r.nid])
    path = []
    cur = end
    while cur is not None:
        path.append(cur)
        cur = via[cur.nid]
    return Annotation(depth, depth[end.nid], path[::-1], mults)


# -- reports ---------------------------------------------------------------------------

def dump(plan: Plan) -> str:
    """Deterministic tree dump (node numbering is local to the dump)."""
    local = {}
    lines = []
    for node in plan.nodes():
        local[node.nid] = len(local) + 1
        ins = ",".join(f"n{local[i.nid]}" for i in node.inputs)
        lines.append(f"n{local[node.nid]} = {node.label()} [{node.rowspace or 'scalar'}] <- ({ins})")
    for o in plan.outputs:
        lines.append(f"out {o.key} = n{local[o.node.nid]}")
    return "\n".join(lines) + "\n"


def explain(plan: Plan, original: Plan | None = None) -> str:
    ann = annotate_depth(plan)
    budget = plan.params.depth_budget
    lines = [f"plan kind={plan.kind} sink={plan.sink or '-'} p={plan.params.p} n={plan.params.n} "
             f"budget={dp.fmt(budget)}"]
    local = {}
    for node in plan.nodes():
        local[node.nid] = len(local) + 1
        ins = ",".join(f"n{local[i.nid]}" for i in node.inputs)
        lines.append(f"  n{local[node.nid]:<3} depth={dp.fmt(ann.of(node)):<12} mults={node_mults(node, plan):<8} "
                     f"{node.label()} [{node.rowspace or 'scalar'}] <- ({ins})")
    lines.append("deepest path: " + " -> ".join(f"n{local[n.nid]}" for n in ann.path))
    if original is not None:
        before = annotate_depth(original).deepest
        lines.append(f"depth before optimization: {dp.fmt(before)} (= {float(before):.4f})")
    lines.append(f"deepest depth: {dp.fmt(ann.deepest)} (= {float(ann.deepest):.4f})")
    inj = plan.info.get("injection")
    if inj:
        for entry in inj:
            lines.append(f"injection: {entry}")
    else:
        lines.append("injection: none")
    lines.append(f"ciphertext multiplications: {ann.mults}")
    verdict = "feasible" if ann.deepest <= budget else "infeasible without bootstrapping"
    lines.append(f"verdict: {verdict}")
    return "\n".join(lines) + "\n"
