"""QueryAST -> operator DAG (the unoptimized, sequential plan).

Lowering follows the textbook pipeline: each table's filters are applied one
after another (a predicate reads the columns already restricted by the
previous masks), a filtered reference table restricts its join key before
the join, and the grouping/aggregation sink sits on top.  The planner in
:mod:`rewrite` then removes the avoidable depth.

Every public bound the encrypted evaluation relies on (no wraparound mod p
in differences, sums and counts) is checked here from catalog metadata and
reported as :class:`BoundCheckError`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from decimal import Decimal

from .catalog import ColumnSpec, EncodingError, TableMeta, chunk_count, decode_value, encode_value, to_signed
from .errors import BoundCheckError, CatalogError, UnsupportedFeature
from .params import Params
from .plan import (
    PREDICATE_KINDS,
    Output,
    Plan,
    PlanError,
    PlanNode,
    ResultItem,
    make,
    pred_at_zero,
    scan,
)
from .sql import (
    Agg,
    Arith,
    Between,
    BoolOp,
    Column,
    Compare,
    InList,
    InQuery,
    Literal,
    Not,
    Query,
    ScalarQuery,
    TableRef,
    parse_sql,
)

# BETWEEN is evaluated as a sum of equality tests over the admissible values
# when that needs no more terms than the two one-sided comparisons.
_FLIP = {"=": "=", "<>": "<>", "<": ">", "<=": ">=", ">": "<", ">=": "<="}
_ORDER_OPS = {"<": "lt", "<=": "le", ">": "gt", ">=": "ge"}


@dataclass
class Value:
    """A lowered scalar expression: a node with public bounds, or a constant."""

    node: PlanNode | None
    const: Decimal = Decimal(0)
    scale: int = 1
    lo: int = 0
    hi: int = 0
    spec: ColumnSpec | None = None

    @property
    def is_const(self) -> bool:
        return self.node is None


def _interval_mul(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int]:
    prods = [x * y for x in a for y in b]
    return min(prods), max(prods)


def _decimal_scale(d: Decimal) -> int:
    exp_ = d.normalize().as_tuple().exponent
    return 10 ** max(0, -exp_) if isinstance(exp_, int) else 1


def _show(expr) -> str:
    if isinstance(expr, Column):
        return expr.name
    if isinstance(expr, Literal):
        return repr(expr.value) if expr.kind == "str" else str(expr.value)
    if isinstance(expr, Arith):
        return f"{_show(expr.left)} {expr.op} {_show(expr.right)}"
    if isinstance(expr, Agg):
        return f"{expr.func.upper()}({'*' if expr.arg is None else _show(expr.arg)})"
    return str(expr)


@dataclass(frozen=True)
class _Range:
    """``lo <(=) expr <(=) hi`` merged from two one-sided comparisons."""

    expr: Column
    lo: Literal
    lo_strict: bool
    hi: Literal
    hi_strict: bool


def _one_sided(cond):
    """(column, 'lo' | 'hi', literal, strict) for ``col op literal``."""
    if not isinstance(cond, Compare) or cond.op not in _ORDER_OPS:
        return None
    left, op, right = cond.left, cond.op, cond.right
    if isinstance(left, Literal) and isinstance(right, Column):
        left, op, right = right, _FLIP[op], left
    if not (isinstance(left, Column) and isinstance(right, Literal)):
        return None
    side = "lo" if op in (">", ">=") else "hi"
    return left, side, right, op in ("<", ">")


def _merge_ranges(conds: list) -> list:
    """Fuse ``x >= a AND x < b`` on the same column into one range test, so the
    upper bound does not read the column already filtered by the lower one."""
    sides: dict = {}
    for k, c in enumerate(conds):
        hit = _one_sided(c)
        if hit is not None:
            sides.setdefault((hit[0].table, hit[0].name), {}).setdefault(hit[1], []).append((k, hit))
    out = list(conds)
    for found in sides.values():
        if len(found.get("lo", ())) != 1 or len(found.get("hi", ())) != 1:
            continue
        (k1, (col, _, lo, lo_strict)), = found["lo"]
        (k2, (_, _, hi, hi_strict)), = found["hi"]
        out[min(k1, k2)] = _Range(col, lo, lo_strict, hi, hi_strict)
        out[max(k1, k2)] = None
    return [c for c in out if c is not None]


class Compiler:
    def __init__(self, query: Query, tables: dict[str, TableMeta], params: Params):
        self.q = query
        self.catalog = tables
        self.params = params
        self.p = params.p
        self.half = params.half_p
        self.metas: dict[str, TableMeta] = {}
        self.sources: dict[str, str] = {}
        self.parents: dict[str, str] = {}
        self.keys: dict[str, tuple[str, str]] = {}
        self.children: dict[str, list[str]] = {}
        self.conds: dict[str, list] = {}
        self.current: dict[str, PlanNode | None] = {}
        self._matches: dict[int, PlanNode] = {}
        self._joins: dict[str, PlanNode] = {}
        self._zs: dict[int, frozenset] = {}
        self._sub_ids = itertools.count(1)
        self.public: dict = {}

    # -- names and scopes -----------------------------------------------------------

    def _add_ref(self, ref: TableRef, name: str | None = None) -> str:
        meta = self.catalog.get(ref.name)
        if meta is None:
            raise CatalogError(f"unknown table {ref.name!r}")
        key = name or ref.ref
        if key in self.metas:
            raise UnsupportedFeature(f"table {key!r} appears twice; give it an alias")
        self.metas[key] = meta
        self.sources[key] = meta.name
        self.children.setdefault(key, [])
        self.conds.setdefault(key, [])
        self.current[key] = None
        return key

    def _resolve(self, col: Column, scope: dict[str, str]) -> tuple[str, ColumnSpec]:
        """scope maps the names usable in SQL text to internal row spaces."""
        if col.table is not None:
            rs = scope.get(col.table)
            if rs is None:
                raise CatalogError(f"unknown table or alias {col.table!r}")
            return rs, self.metas[rs].column(col.name)
        hits = [rs for rs in dict.fromkeys(scope.values()) if self.metas[rs].has_column(col.name)]
        if not hits:
            raise CatalogError(f"unknown column {col.name!r}")
        if len(hits) > 1:
            raise CatalogError(f"column {col.name!r} is ambiguous")
        return hits[0], self.metas[hits[0]].column(col.name)

    def _refs_of(self, cond, scope) -> set[str]:
        out = set()

        def visit(e):
            if isinstance(e, Column):
                out.add(self._resolve(e, scope)[0])
            elif isinstance(e, (Arith, Compare)):
                visit(e.left)
                visit(e.right)
            elif isinstance(e, (InList, InQuery)):
                visit(e.expr)
            elif isinstance(e, Between):
                visit(e.expr)
                visit(e.lo)
                visit(e.hi)
            elif isinstance(e, BoolOp):
                for i in e.items:
                    visit(i)
            elif isinstance(e, Not):
                visit(e.item)

        visit(cond)
        return out

    def _is_descendant(self, ref: str, ancestor: str) -> bool:
        while ref in self.parents:
            ref = self.parents[ref]
            if ref == ancestor:
                return True
        return False

    # -- join tree ------------------------------------------------------------------

    def _link(self, fact: str, fact_col: str, ref: str, ref_col: str) -> None:
        if ref in self.parents:
            raise UnsupportedFeature(f"table {ref!r} is the reference side of two joins")
        self.parents[ref] = fact
        self.keys[ref] = (fact_col, ref_col)
        self.children[fact].append(ref)
        for rs, col in ((fact, fact_col), (ref, ref_col)):
            spec = self.metas[rs].column(col)
            if spec.kind != "int":
                # dictionaries and date epochs are per column, so only integer
                # codes are comparable across tables
                raise UnsupportedFeature(f"join key {rs}.{col} must be an integer column")
            if self.metas[rs].rows and spec.lo < 1:
                raise BoundCheckError(f"join key {rs}.{col} must be >= 1 (0 marks padding and filtered rows)")

    def _plan_joins(self, pairs, scope, order: list[str]) -> str:
        for a, b in pairs:
            ra, sa = self._resolve(a, scope)
            rb, sb = self._resolve(b, scope)
            if sb.unique and (not sa.unique or order.index(rb) > order.index(ra)):
                self._link(ra, sa.name, rb, sb.name)
            elif sa.unique:
                self._link(rb, sb.name, ra, sa.name)
            else:
                raise UnsupportedFeature(
                    f"join {a} = {b} needs a unique key on one side (declare it with ':key' at ingest)")
        roots = [r for r in order if r not in self.parents]
        if len(roots) != 1:
            raise UnsupportedFeature("every table must be linked by an equi-join (no cross products)")
        for r in order:
            seen, cur = set(), r
            while cur in self.parents:
                if cur in seen:
                    raise UnsupportedFeature("cyclic join graph")
                seen.add(cur)
                cur = self.parents[cur]
        return roots[0]

    # -- zero support ---------------------------------------------------------------

    def _match(self, join: PlanNode) -> PlanNode:
        hit = self._matches.get(join.nid)
        if hit is None:
            hit = make("match", (join,), (join.params[0],), rowspace=join.rowspace)
            self._matches[join.nid] = hit
        return hit

    def _zero_support(self, node: PlanNode) -> frozenset:
        """nids of masks M such that ``node`` is 0 in every slot where M is 0."""
        hit = self._zs.get(node.nid)
        if hit is not None:
            return hit
        kind = node.kind
        out: set = set()
        if kind == "select_apply":
            out |= self._zero_support(node.inputs[0])
            for m in node.inputs[1:]:
                out |= {m.nid} | self._zero_support(m)
        elif kind in ("and", "group_by", "order_by"):
            for m in node.inputs:
                out |= {m.nid} | self._zero_support(m)
        elif kind in ("gather", "mask_inject"):
            out.add(self._match(node.inputs[0]).nid)
        elif kind in PREDICATE_KINDS and pred_at_zero(node) == 0:
            if all(i.rowspace for i in node.inputs):
                sets = [self._zero_support(i) for i in node.inputs]
                out = set(frozenset.intersection(*sets))
        elif kind == "arith":
            op, c = node.params
            sets = [self._zero_support(i) for i in node.inputs if i.rowspace]
            if op == "mul":
                out = set().union(*sets) if sets else set()
            elif len(node.inputs) == 2 and len(sets) == 2:
                out = set(sets[0] & sets[1])
            elif c == 0 and sets:
                out = set(sets[0])
        res = frozenset(out)
        self._zs[node.nid] = res
        return res

    def _implied(self, mask: PlanNode, rowmask: PlanNode) -> bool:
        if mask is rowmask:
            return True
        zs = self._zero_support(mask)
        factors = rowmask.inputs if rowmask.kind == "and" else (rowmask,)
        return rowmask.nid in zs or all(f.nid in zs for f in factors)

    def _restrict(self, rs: str, mask: PlanNode) -> None:
        cur = self.current[rs]
        if cur is None or self._implied(mask, cur):
            self.current[rs] = mask
        else:
            self.current[rs] = make("and", (mask, cur))

    # -- building table pipelines ---------------------------------------------------

    def _join(self, fact: str, ref: str) -> PlanNode:
        # one join node per edge, so match() and gathers share it
        hit = self._joins.get(ref)
        if hit is not None:
            return hit
        fact_col, ref_col = self.keys[ref]
        fk = scan(fact, fact_col)
        rk = scan(ref, ref_col)
        if self.current[ref] is not None:
            rk = make("select_apply", (rk, self.current[ref]), rowspace=ref)
        ref_rows = max(1, self.metas[ref].rows)
        hit = make("join", (fk, rk), (ref_rows, ref), rowspace=fact)
        self._joins[ref] = hit
        return hit

    def _build(self, rs: str, scope) -> None:
        for child in self.children[rs]:
            self._build(child, scope)
        for child in self.children[rs]:
            self._restrict(rs, self._match(self._join(rs, child)))
        for cond in _merge_ranges(self.conds[rs]):
            self._restrict(rs, self._cond(cond, rs, scope))

    # -- values ---------------------------------------------------------------------

    def _column(self, col: Column, at: str, scope, view: bool) -> Value:
        src, spec = self._resolve(col, scope)
        node = scan(src, spec.name)
        if src == at:
            if view and self.current[at] is not None:
                node = make("select_apply", (node, self.current[at]), rowspace=at)
        elif self._is_descendant(src, at):
            cur = src
            while cur != at:
                join = self._join(self.parents[cur], cur)
                node = make("gather", (join, node), (join.params[0],), rowspace=self.parents[cur])
                cur = self.parents[cur]
        else:
            raise PlanError(f"column {col} is not reachable from {at}")
        scale = spec.fixed.scale if spec.kind == "fixed" else 1
        return Value(node, scale=scale, lo=min(spec.lo, 0), hi=max(spec.hi, 0), spec=spec)

    def _check(self, lo: int, hi: int, what: str) -> None:
        if lo < -self.half or hi > self.half:
            raise BoundCheckError(f"{what} may range over [{lo}, {hi}], outside the signed "
                                  f"plaintext space [-{self.half}, {self.half}] of p={self.p}")

    def _rescale(self, v: Value, scale: int) -> Value:
        if v.scale == scale:
            return v
        if v.is_const:
            return Value(None, v.const, scale)
        f = scale // v.scale
        lo, hi = v.lo * f, v.hi * f
        self._check(lo, hi, "rescaled value")
        return Value(make("arith", (v.node,), ("mul", f)), scale=scale, lo=lo, hi=hi)

    def _value(self, expr, at: str, scope, view: bool = True) -> Value:
        if isinstance(expr, Column):
            return self._column(expr, at, scope, view)
        if isinstance(expr, Literal):
            if expr.kind != "num":
                raise UnsupportedFeature(f"{expr.kind} literal {expr.value!r} in arithmetic")
            d = Decimal(expr.value)
            return Value(None, d, _decimal_scale(d))
        if isinstance(expr, Arith):
            return self._arith(expr.op, self._value(expr.left, at, scope, view),
                               self._value(expr.right, at, scope, view))
        if isinstance(expr, (Agg, ScalarQuery)):
            raise UnsupportedFeature("aggregates inside expressions")
        raise UnsupportedFeature(f"expression {expr!r}")

    def _arith(self, op: str, a: Value, b: Value) -> Value:
        if a.is_const and b.is_const:
            val = {"+": a.const + b.const, "-": a.const - b.const, "*": a.const * b.const}[op]
            return Value(None, val, _decimal_scale(val))
        if op == "*":
            if a.is_const:
                a, b = b, a
            if b.is_const:
                c = int(b.const * b.scale)
                lo, hi = _interval_mul((a.lo, a.hi), (c, c))
                self._check(lo, hi, "product")
                return Value(make("arith", (a.node,), ("mul", c)), scale=a.scale * b.scale, lo=lo, hi=hi)
            lo, hi = _interval_mul((a.lo, a.hi), (b.lo, b.hi))
            self._check(lo, hi, "product")
            return Value(make("arith", (a.node, b.node), ("mul", None)), scale=a.scale * b.scale, lo=lo, hi=hi)
        scale = max(a.scale, b.scale)
        a, b = self._rescale(a, scale), self._rescale(b, scale)
        if b.is_const or a.is_const:
            node_v, const_v = (a, b) if b.is_const else (b, a)
            c = int(const_v.const * scale)
            if op == "+":
                params, lo, hi = ("add", c), node_v.lo + c, node_v.hi + c
            elif b.is_const:
                params, lo, hi = ("sub", c), node_v.lo - c, node_v.hi - c
            else:
                params, lo, hi = ("rsub", c), c - node_v.hi, c - node_v.lo
            self._check(lo, hi, "sum")
            return Value(make("arith", (node_v.node,), params), scale=scale, lo=lo, hi=hi)
        if op == "+":
            lo, hi = a.lo + b.lo, a.hi + b.hi
        else:
            lo, hi = a.lo - b.hi, a.hi - b.lo
        self._check(lo, hi, "sum")
        return Value(make("arith", (a.node, b.node), ("add" if op == "+" else "sub", None)),
                     scale=scale, lo=lo, hi=hi)

    # -- constants ------------------------------------------------------------------

    def _encode(self, lit: Literal, v: Value, rounding: str):
        """Code of ``lit`` in the encoding of ``v``.  Returns None when no
        value of the column can equal the literal (unknown string, or a real
        that is not representable at the column's scale)."""
        spec = v.spec
        if spec is not None and spec.kind in ("str", "date", "bool"):
            if spec.kind == "str":
                if lit.kind != "str":
                    raise CatalogError(f"column {spec.name} holds strings, got {lit.value!r}")
                if lit.value not in spec.dictionary:
                    if rounding != "exact":
                        raise UnsupportedFeature(
                            f"ordering comparison with {lit.value!r}, which is not in the dictionary")
                    return None
                if rounding != "exact" and spec.dictionary.values != sorted(spec.dictionary.values):
                    raise UnsupportedFeature(
                        f"ordering comparison on {spec.name} needs a lexicographic dictionary (ingest --lexicographic)")
                return spec.dictionary.id_of(lit.value)
            try:
                return encode_value(lit.value, spec)
            except EncodingError as exc:
                raise CatalogError(str(exc)) from None
        if lit.kind == "bool":
            return int(lit.value) * v.scale
        if lit.kind != "num":
            raise CatalogError(f"cannot compare a numeric value with {lit.value!r}")
        scaled = Decimal(lit.value) * v.scale
        if scaled == scaled.to_integral_value():
            return int(scaled)
        if rounding == "exact":
            return None
        return math.floor(scaled) if rounding == "floor" else math.ceil(scaled)

    # -- predicates -----------------------------------------------------------------

    @staticmethod
    def _never(v: Value) -> PlanNode:
        return make("in", (v.node,), ((),))

    def _lt(self, inputs, opname: str, c, dlo: int, dhi: int, shift: int = 0) -> PlanNode:
        # terms: encrypted differences d whose true difference d + shift is negative
        self._check(dlo, dhi, "comparison difference")
        terms = tuple(range(dlo, min(dhi, -1 - shift) + 1))
        return make("lt", inputs, (opname, c, terms))

    def _compare_const(self, v: Value, op: str, lit: Literal) -> PlanNode:
        # constants outside the public range [lo, hi] are clamped to it, which
        # keeps every difference small without changing any answer
        if op in ("=", "<>"):
            c = self._encode(lit, v, "exact")
            hit = c is not None and v.lo <= c <= v.hi
            node = make("eq", (v.node,), ("const", c)) if hit else self._never(v)
            return node if op == "=" else make("not", (node,))
        opname = _ORDER_OPS[op]
        c = self._encode(lit, v, "ceil" if opname in ("lt", "ge") else "floor")
        if opname in ("lt", "ge"):
            c = min(max(c, v.lo), v.hi + 1)
            return self._lt((v.node,), opname, c, v.lo - c, v.hi - c)
        c = min(max(c, v.lo - 1), v.hi)
        return self._lt((v.node,), opname, c, c - v.hi, c - v.lo)

    def _compare_values(self, a: Value, op: str, b: Value) -> PlanNode:
        # dates with different epochs: a's true offset from b's epoch is a + shift
        shift = 0
        if a.spec is not None and b.spec is not None and a.spec.kind == b.spec.kind:
            if a.spec.kind == "str" and a.spec.dictionary != b.spec.dictionary:
                raise UnsupportedFeature(f"comparing {a.spec.name} with {b.spec.name}: different dictionaries")
            if a.spec.kind == "date" and a.spec.epoch != b.spec.epoch:
                shift = (a.spec.epoch - b.spec.epoch).days
        elif (a.spec and a.spec.kind in ("str", "date")) or (b.spec and b.spec.kind in ("str", "date")):
            raise UnsupportedFeature("comparing columns of different types")
        scale = max(a.scale, b.scale)
        a, b = self._rescale(a, scale), self._rescale(b, scale)
        if op in ("=", "<>"):
            self._check(a.lo - b.hi, a.hi - b.lo, "comparison difference")
            if shift == 0:
                node = make("eq", (a.node, b.node), ("col",))
            else:
                hit = (-shift,) if a.lo - b.hi <= -shift <= a.hi - b.lo else ()
                node = make("in", (a.node, b.node), (hit,))
            return node if op == "=" else make("not", (node,))
        opname = _ORDER_OPS[op]
        if opname in ("lt", "ge"):
            return self._lt((a.node, b.node), opname, None, a.lo - b.hi, a.hi - b.lo, shift)
        return self._lt((a.node, b.node), opname, None, b.lo - a.hi, b.hi - a.lo, -shift)

    def _cond(self, cond, at: str, scope) -> PlanNode:
        if isinstance(cond, BoolOp):
            parts = [self._cond(c, at, scope) for c in cond.items]
            return parts[0] if len(parts) == 1 else make(cond.op, parts, rowspace=at)
        if isinstance(cond, Not):
            return make("not", (self._cond(cond.item, at, scope),), rowspace=at)
        if isinstance(cond, Compare):
            left, op, right = cond.left, cond.op, cond.right
            if isinstance(left, ScalarQuery) or (isinstance(left, Literal) and not isinstance(right, Literal)):
                left, op, right = right, _FLIP[op], left
            if isinstance(right, ScalarQuery):
                return self._compare_scalar(left, op, right.query, at, scope)
            lv = self._value(left, at, scope)
            if lv.is_const:
                raise UnsupportedFeature("conditions between two constants")
            if isinstance(right, Literal):
                return self._compare_const(lv, op, right)
            rv = self._value(right, at, scope)
            if rv.is_const:
                lit = Literal(rv.const, "num")
                return self._compare_const(lv, op, lit)
            return self._compare_values(lv, op, rv)
        if isinstance(cond, InList):
            v = self._value(cond.expr, at, scope)
            if v.is_const:
                raise UnsupportedFeature("IN over a constant")
            codes = {self._encode(lit, v, "exact") for lit in cond.values}
            codes = {c for c in codes if c is not None and v.lo <= c <= v.hi}
            self._check(v.lo - max(codes, default=0), v.hi - min(codes, default=0), "IN difference")
            values = tuple(sorted({to_signed(c, self.p) for c in codes}))
            node = make("in", (v.node,), (values,))
            return make("not", (node,)) if cond.negated else node
        if isinstance(cond, Between):
            return self._between(cond, at, scope)
        if isinstance(cond, _Range):
            v = self._value(cond.expr, at, scope)
            lo = self._encode(cond.lo, v, "floor" if cond.lo_strict else "ceil") + cond.lo_strict
            hi = self._encode(cond.hi, v, "ceil" if cond.hi_strict else "floor") - cond.hi_strict
            return self._range(v, lo, hi, negated=False)
        if isinstance(cond, InQuery):
            return self._semi_join(cond, at, scope)
        raise UnsupportedFeature(f"condition {cond!r}")

    def _between(self, cond: Between, at: str, scope) -> PlanNode:
        v = self._value(cond.expr, at, scope)
        if v.is_const or not isinstance(cond.lo, Literal) or not isinstance(cond.hi, Literal):
            raise UnsupportedFeature("BETWEEN needs a column expression and constant bounds")
        return self._range(v, self._encode(cond.lo, v, "ceil"), self._encode(cond.hi, v, "floor"), cond.negated)

    def _range(self, v: Value, lo: int, hi: int, negated: bool) -> PlanNode:
        """lo <= v <= hi on codes."""
        lo = min(max(lo, v.lo), v.hi + 1)
        hi = min(max(hi, v.lo - 1), v.hi)
        a, b = max(lo, v.lo), min(hi, v.hi)
        values = tuple(range(a, b + 1)) if a <= b else ()
        self._check(v.lo - hi, v.hi - lo, "BETWEEN difference")
        lo_terms = tuple(range(max(v.lo - lo, -self.half), min(v.hi - lo, -1) + 1))
        hi_terms = tuple(range(max(hi - v.hi, -self.half), min(hi - v.lo, -1) + 1))
        if lo > hi or len(values) <= len(lo_terms) + len(hi_terms):
            node = make("between", (v.node,), ("range", values))
        else:
            node = make("between", (v.node,), ("product", lo_terms, hi_terms, lo, hi))
        return make("not", (node,)) if negated else node

    # -- subqueries -----------------------------------------------------------------

    def _subquery_scope(self, q: Query) -> tuple[str, dict]:
        if len(q.tables) != 1 or q.joins:
            raise UnsupportedFeature("subqueries over more than one table")
        if q.group_by or q.order_by:
            raise UnsupportedFeature("GROUP BY / ORDER BY inside a subquery")
        ref = q.tables[0]
        rs = self._add_ref(ref, f"sq{next(self._sub_ids)}")
        scope = {ref.ref: rs, ref.name: rs}
        if q.where is not None:
            self.conds[rs] = list(q.where.items) if isinstance(q.where, BoolOp) and q.where.op == "and" else [q.where]
            for c in self.conds[rs]:
                if isinstance(c, (InQuery,)) or any(isinstance(x, ScalarQuery) for x in _operands(c)):
                    raise UnsupportedFeature("nested subqueries")
        return rs, scope

    def _semi_join(self, cond: InQuery, at: str, scope) -> PlanNode:
        if not isinstance(cond.expr, Column):
            raise UnsupportedFeature("IN (SELECT ...) needs a plain column on the left")
        q = cond.query
        if len(q.items) != 1 or not isinstance(q.items[0].expr, Column):
            raise UnsupportedFeature("IN (SELECT ...) must select exactly one key column")
        src, spec = self._resolve(cond.expr, scope)
        if src != at:
            raise UnsupportedFeature("IN (SELECT ...) on a joined column")
        rs, sub_scope = self._subquery_scope(q)
        _, key = self._resolve(q.items[0].expr, sub_scope)
        if not key.unique:
            raise UnsupportedFeature(f"IN (SELECT {key.name} ...) needs a unique key column")
        self._link(at, spec.name, rs, key.name)
        self._build(rs, sub_scope)
        node = self._match(self._join(at, rs))
        return make("not", (node,)) if cond.negated else node

    def _scalar_aggregate(self, q: Query):
        if len(q.items) != 1 or not isinstance(q.items[0].expr, Agg):
            raise UnsupportedFeature("scalar subqueries must select one COUNT/SUM/AVG")
        agg = q.items[0].expr
        rs, scope = self._subquery_scope(q)
        self._build(rs, scope)
        mask = self.current[rs]
        rows = self.metas[rs].rows
        chunks = chunk_count(rows, self.params.n)
        count = None
        if agg.func in ("count", "avg"):
            if mask is None:
                count = Value(None, Decimal(rows), 1)
            else:
                count = Value(make("aggregate", (mask,), ("count", rows, chunks), rowspace=""), lo=0, hi=rows)
        total = None
        if agg.func in ("sum", "avg"):
            v = self._value(agg.arg, rs, scope, view=False)
            if v.is_const:
                raise UnsupportedFeature("SUM over a constant")
            lo, hi = rows * min(v.lo, 0), rows * max(v.hi, 0)
            self._check(lo, hi, "subquery SUM")
            inputs = (v.node,) if mask is None else (v.node, mask)
            total = Value(make("aggregate", inputs, ("sum", rows, chunks), rowspace=""),
                          scale=v.scale, lo=lo, hi=hi)
        return agg.func, count, total

    def _compare_scalar(self, left, op: str, q: Query, at: str, scope) -> PlanNode:
        x = self._value(left, at, scope)
        if x.is_const:
            raise UnsupportedFeature("constant compared with a subquery")
        if x.spec is not None and x.spec.kind in ("date", "str", "bool"):
            raise UnsupportedFeature(f"{x.spec.kind} column compared with a numeric subquery")
        func, count, total = self._scalar_aggregate(q)
        if func == "count":
            if count.is_const:
                return self._compare_const(x, op, Literal(count.const, "num"))
            return self._compare_values(x, op, count)
        if func == "sum":
            return self._compare_values(x, op, total)
        # x op SUM/COUNT  <=>  x * COUNT op SUM, evaluated without division
        if op not in ("<", ">"):
            raise UnsupportedFeature("comparisons with AVG(...) other than < and >")
        scale = max(x.scale, total.scale)
        x, total = self._rescale(x, scale), self._rescale(total, scale)
        scaled = self._arith("*", x, count)
        return self._compare_values(scaled, op, total)

    # -- sinks ----------------------------------------------------------------------

    def _aggregate_parts(self, agg: Agg, mask: PlanNode | None, root: str, scope) -> dict:
        rows = self.metas[root].rows
        chunks = chunk_count(rows, self.params.n)
        parts = {}
        if agg.func in ("count", "avg"):
            if rows >= self.p:
                raise BoundCheckError(f"COUNT over {rows} rows would wrap modulo p={self.p}")
            if mask is None:
                parts["count"] = rows
            else:
                parts["count"] = make("aggregate", (mask,), ("count", rows, chunks), rowspace="")
        scale = 1
        if agg.func in ("sum", "avg"):
            v = self._value(agg.arg, root, scope, view=False)
            if v.is_const:
                raise UnsupportedFeature("SUM/AVG over a constant")
            self._check(rows * min(v.lo, 0), rows * max(v.hi, 0), f"SUM({_show(agg.arg)})")
            inputs = (v.node,) if mask is None else (v.node, mask)
            parts["sum"] = make("aggregate", inputs, ("sum", rows, chunks), rowspace="")
            scale = v.scale
        return parts, scale

    def _keyed_masks(self, kind: str, cols, root: str, scope, reverse: list[bool]):
        """One mask per key tuple of the cross product of the column domains."""
        specs, views = [], []
        for c in cols:
            if not isinstance(c, Column):
                raise UnsupportedFeature(f"{kind.replace('_', ' ').upper()} on an expression")
            v = self._column(c, root, scope, view=True)
            if not v.spec.enumerable:
                raise UnsupportedFeature(
                    f"{kind.replace('_', ' ').upper()} on {v.spec.name}: only dictionary-encoded "
                    f"(string) and boolean columns have an enumerable domain")
            specs.append(v.spec)
            views.append(v.node)
        # keys follow the logical value order, whatever the dictionary order
        domains = [sorted(s.domain(), key=lambda c, s=s: decode_value(c, s), reverse=r)
                   for s, r in zip(specs, reverse)]
        rowmask = self.current[root]
        out = []
        for key in itertools.product(*domains):
            eqs = [make("eq", (view,), ("const", code)) for view, code in zip(views, key)]
            mask = make(kind, eqs, rowspace=root)
            if rowmask is not None and not self._implied(mask, rowmask):
                mask = make("and", (mask, rowmask))
            out.append((key, mask))
        return specs, out

    def _item_value(self, item, root, scope, idx):
        expr = item.expr
        name = item.alias or _show(expr)
        if isinstance(expr, Column):
            v = self._column(expr, root, scope, view=False)
            return v, ResultItem(name, "col", v.spec, v.scale)
        v = self._value(expr, root, scope, view=False)
        if v.is_const:
            raise UnsupportedFeature("constant select items")
        return v, ResultItem(name, "expr", None, v.scale)

    def compile(self) -> Plan:
        q = self.q
        scope = {}
        order = []
        for t in q.tables:
            rs = self._add_ref(t)
            scope[t.ref] = rs
            scope.setdefault(t.name, rs)
            order.append(rs)
        conds = []
        if q.where is not None:
            conds = list(q.where.items) if isinstance(q.where, BoolOp) and q.where.op == "and" else [q.where]
        pairs = list(q.joins)
        rest = []
        for c in conds:
            if (isinstance(c, Compare) and c.op == "=" and isinstance(c.left, Column)
                    and isinstance(c.right, Column)
                    and self._resolve(c.left, scope)[0] != self._resolve(c.right, scope)[0]):
                pairs.append((c.left, c.right))
            else:
                rest.append(c)
        root = self._plan_joins(pairs, scope, order)
        for c in rest:
            refs = self._refs_of(c, scope)
            target = refs.pop() if len(refs) == 1 else root
            self.conds[target].append(c)
        self._build(root, scope)
        rowmask = self.current[root]
        plan_kind, outputs, items, groups = self._sink(root, scope, rowmask)
        tables = dict(self.metas)
        info = {"parents": dict(self.parents), "sources": dict(self.sources), "public": self.public}
        return Plan(plan_kind, self.params, tables, outputs, items, groups, root, info)

    def _sink(self, root: str, scope, rowmask):
        q = self.q
        outputs: list[Output] = []
        items: list[ResultItem] = []
        if any(i.expr == "*" for i in q.items):
            if q.has_aggregates or q.group_by:
                raise UnsupportedFeature("SELECT * with aggregates")
            expanded = []
            for i in q.items:
                if i.expr == "*":
                    for rs in scope.values():
                        for c in self.metas[rs].column_names:
                            expanded.append(type(i)(Column(rs, c)))
                else:
                    expanded.append(i)
            q.items = list(dict.fromkeys(expanded))
        if q.group_by:
            return self._sink_groups(root, scope)
        if q.has_aggregates:
            if not all(isinstance(i.expr, Agg) for i in q.items):
                raise UnsupportedFeature("mixing aggregates and plain columns needs GROUP BY")
            if q.order_by:
                raise UnsupportedFeature("ORDER BY on a single aggregate row")
            # hidden row count: SUM/AVG over no rows is NULL on the client
            hidden, _ = self._aggregate_parts(Agg("count"), rowmask, root, scope)
            if isinstance(hidden["count"], int):
                self.public[("agg", "n")] = hidden["count"]
            else:
                outputs.append(Output(("agg", "n"), hidden["count"]))
            for i, item in enumerate(q.items):
                parts, scale = self._aggregate_parts(item.expr, rowmask, root, scope)
                for part, node in parts.items():
                    if isinstance(node, int):
                        self.public[("agg", i, part)] = node
                    else:
                        outputs.append(Output(("agg", i, part), node))
                items.append(ResultItem(item.alias or _show(item.expr), item.expr.func, None, scale))
            return "aggregate", outputs, items, []
        if q.order_by:
            return self._sink_ordered(root, scope)
        for i, item in enumerate(q.items):
            v, ri = self._item_value(item, root, scope, i)
            node = v.node if rowmask is None else make("select_apply", (v.node, rowmask), rowspace=root)
            outputs.append(Output(("col", i), node))
            items.append(ri)
        if rowmask is not None:
            outputs.insert(0, Output(("mask",), rowmask))
        return "rows", outputs, items, []

    def _sink_groups(self, root: str, scope):
        q = self.q
        cols = list(q.group_by)
        resolved = [self._resolve(c, scope) for c in cols]
        reverse = [False] * len(cols)
        for o in q.order_by:
            if not isinstance(o.expr, Column):
                raise UnsupportedFeature("ORDER BY an aggregate")
            key = self._resolve(o.expr, scope)
            if key not in resolved:
                raise UnsupportedFeature("ORDER BY must use the GROUP BY columns")
            reverse[resolved.index(key)] = o.descending
        # ORDER BY may list the group columns in a different order
        if q.order_by:
            ordered = [resolved.index(self._resolve(o.expr, scope)) for o in q.order_by]
            ordered += [i for i in range(len(cols)) if i not in ordered]
        else:
            ordered = list(range(len(cols)))
        cols_o = [cols[i] for i in ordered]
        specs, masks = self._keyed_masks("group_by", cols_o, root, scope, [reverse[i] for i in ordered])
        back = [ordered.index(i) for i in range(len(cols))]
        outputs, items = [], []
        for i, item in enumerate(q.items):
            if isinstance(item.expr, Agg):
                items.append(ResultItem(item.alias or _show(item.expr), item.expr.func))
                continue
            if not isinstance(item.expr, Column) or self._resolve(item.expr, scope) not in resolved:
                raise UnsupportedFeature(f"{_show(item.expr)} must appear in GROUP BY")
            pos = resolved.index(self._resolve(item.expr, scope))
            spec = self._resolve(item.expr, scope)[1]
            items.append(ResultItem(item.alias or _show(item.expr), "key", spec, index=pos))
        groups = []
        rows = self.metas[root].rows
        chunks = chunk_count(rows, self.params.n)
        if rows >= self.p:
            raise BoundCheckError(f"group counts over {rows} rows would wrap modulo p={self.p}")
        for gi, (key, mask) in enumerate(masks):
            groups.append(tuple(key[back[j]] for j in range(len(cols))))
            outputs.append(Output(("group", gi, "n"), make("aggregate", (mask,), ("count", rows, chunks), rowspace="")))
            for i, item in enumerate(q.items):
                if isinstance(item.expr, Agg):
                    parts, scale = self._aggregate_parts(item.expr, mask, root, scope)
                    items[i].scale = scale
                    for part, node in parts.items():
                        outputs.append(Output(("group", gi, i, part), node))
        return "groups", outputs, items, groups

    def _sink_ordered(self, root: str, scope):
        q = self.q
        cols = [o.expr for o in q.order_by]
        specs, masks = self._keyed_masks("order_by", cols, root, scope, [o.descending for o in q.order_by])
        rows = self.metas[root].rows
        chunks = chunk_count(rows, self.params.n)
        values, items = [], []
        for i, item in enumerate(q.items):
            v, ri = self._item_value(item, root, scope, i)
            values.append(v)
            items.append(ri)
        outputs, groups = [], []
        for gi, (key, mask) in enumerate(masks):
            groups.append(key)
            outputs.append(Output(("ord", gi, "mask"), mask))
            outputs.append(Output(("ord", gi, "count"), make("aggregate", (mask,), ("count", rows, chunks), rowspace="")))
            for i, v in enumerate(values):
                outputs.append(Output(("ord", gi, "col", i), make("select_apply", (v.node, mask), rowspace=root)))
        return "ordered", outputs, items, groups


def _operands(cond):
    for attr in ("left", "right", "expr", "lo", "hi"):
        if hasattr(cond, attr):
            yield getattr(cond, attr)
    if isinstance(cond, BoolOp):
        for c in cond.items:
            yield from _operands(c)
    if isinstance(cond, Not):
        yield from _operands(cond.item)


def compile_query(query: Query | str, tables: dict[str, TableMeta], params: Params) -> Plan:
    """Lower a parsed (or textual) query against the catalog."""
    if isinstance(query, str):
        query = parse_sql(query)
    return Compiler(query, tables, params).compile()
