"""SQL subset frontend: text -> QueryAST.

Grammar (case-insensitive)::

    query    := SELECT item {, item} FROM table {, table | JOIN table ON col = col}
                [WHERE cond] [GROUP BY col {, col}] [ORDER BY col [ASC|DESC] {, ...}]
    item     := expr [AS name] | COUNT(*) | COUNT(expr) | SUM(expr) | AVG(expr) | *
    expr     := col | number | 'string' | DATE 'yyyy-mm-dd' | TRUE | FALSE
              | expr (+|-|*) expr | -expr | (SELECT AVG|SUM|COUNT(...) FROM ...)
    cond     := expr (=|==|<>|!=|<|<=|>|>=) expr | expr [NOT] IN (literal, ...)
              | expr [NOT] IN (SELECT key FROM ...) | expr [NOT] BETWEEN expr AND expr
              | cond AND cond | cond OR cond | NOT cond | (cond)

Anything else raises :class:`UnsupportedFeature` (a construct the engine
cannot evaluate under encryption) or :class:`SqlSyntaxError`.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from decimal import Decimal

import sqlglot
from sqlglot import exp
from sqlglot.errors import ParseError, TokenError

from .errors import SqlSyntaxError, UnsupportedFeature


# -- AST ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Column:
    table: str | None
    name: str

    def __str__(self):
        return f"{self.table}.{self.name}" if self.table else self.name


@dataclass(frozen=True)
class Literal:
    value: object
    kind: str  # num | str | date | bool


@dataclass(frozen=True)
class Arith:
    op: str  # + - *
    left: object
    right: object


@dataclass(frozen=True)
class Agg:
    func: str  # count | sum | avg
    arg: object = None  # None for COUNT(*)


@dataclass(frozen=True)
class ScalarQuery:
    query: "Query"


@dataclass(frozen=True)
class Compare:
    op: str  # = <> < <= > >=
    left: object
    right: object


@dataclass(frozen=True)
class InList:
    expr: object
    values: tuple
    negated: bool = False


@dataclass(frozen=True)
class InQuery:
    expr: object
    query: "Query"
    negated: bool = False


@dataclass(frozen=True)
class Between:
    expr: object
    lo: object
    hi: object
    negated: bool = False


@dataclass(frozen=True)
class BoolOp:
    op: str  # and | or
    items: tuple


@dataclass(frozen=True)
class Not:
    item: object


@dataclass(frozen=True)
class SelectItem:
    expr: object  # Column | Arith | Agg | Literal | "*"
    alias: str | None = None


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: str | None = None

    @property
    def ref(self) -> str:
        return self.alias or self.name


@dataclass(frozen=True)
class OrderItem:
    expr: object
    descending: bool = False


@dataclass
class Query:
    items: list[SelectItem]
    tables: list[TableRef]
    joins: list[tuple[Column, Column]] = field(default_factory=list)
    where: object = None
    group_by: list = field(default_factory=list)
    order_by: list[OrderItem] = field(default_factory=list)

    @property
    def has_aggregates(self) -> bool:
        return any(isinstance(i.expr, Agg) for i in self.items)


# -- conversion from the sqlglot tree ---------------------------------------------

_COMPARE = {exp.EQ: "=", exp.NEQ: "<>", exp.LT: "<", exp.LTE: "<=", exp.GT: ">", exp.GTE: ">="}
_ARITH = {exp.Add: "+", exp.Sub: "-", exp.Mul: "*"}

_UNSUPPORTED_EXPR = {
    exp.Min: "MIN", exp.Max: "MAX", exp.Like: "LIKE", exp.ILike: "ILIKE", exp.Div: "division",
    exp.Case: "CASE", exp.Exists: "EXISTS (write it as IN (SELECT key ...))", exp.Is: "IS NULL",
    exp.Null: "NULL", exp.Window: "window functions", exp.Mod: "modulo", exp.Distinct: "DISTINCT",
}


def _unsupported(what: str):
    raise UnsupportedFeature(f"{what} is not supported by the encrypted engine")


def _literal(node: exp.Expression) -> Literal:
    if isinstance(node, exp.Literal):
        if node.is_string:
            return Literal(node.this, "str")
        text = node.this
        return Literal(int(text) if text.lstrip("-").isdigit() else Decimal(text), "num")
    if isinstance(node, exp.Boolean):
        return Literal(bool(node.this), "bool")
    if isinstance(node, exp.Neg):
        inner = _literal(node.this)
        if inner.kind != "num":
            _unsupported("negating a non-number")
        return Literal(-inner.value, "num")
    if isinstance(node, (exp.Cast, exp.Date)) or (isinstance(node, exp.Anonymous) and node.name.upper() == "DATE"):
        arg = node.this if not isinstance(node, exp.Anonymous) else node.expressions[0]
        if isinstance(node, exp.Cast) and not node.to.is_type("date"):
            _unsupported(f"CAST to {node.to.sql()}")
        if isinstance(arg, exp.Literal) and arg.is_string:
            try:
                _dt.date.fromisoformat(arg.this)
            except ValueError:
                raise SqlSyntaxError(f"bad date literal {arg.this!r}") from None
            return Literal(arg.this, "date")
    if isinstance(node, exp.Paren):
        return _literal(node.this)
    raise SqlSyntaxError(f"expected a literal, got {node.sql()!r}")


def _is_literal(node) -> bool:
    try:
        _literal(node)
        return True
    except (SqlSyntaxError, UnsupportedFeature):
        return False


def _expr(node: exp.Expression):
    for cls, what in _UNSUPPORTED_EXPR.items():
        if isinstance(node, cls):
            _unsupported(what)
    if isinstance(node, exp.Paren):
        return _expr(node.this)
    if isinstance(node, exp.Column):
        if isinstance(node.this, exp.Star):
            return "*"
        return Column(node.table or None, node.name)
    if isinstance(node, exp.Star):
        return "*"
    if isinstance(node, exp.Subquery):
        return ScalarQuery(_query(node.this, nested=True))
    if type(node) in _ARITH:
        return Arith(_ARITH[type(node)], _expr(node.this), _expr(node.expression))
    if isinstance(node, exp.Neg) and not _is_literal(node):
        return Arith("-", Literal(0, "num"), _expr(node.this))
    if isinstance(node, exp.Count):
        arg = node.this
        if isinstance(arg, exp.Distinct):
            _unsupported("COUNT(DISTINCT ...)")
        if arg is None or isinstance(arg, exp.Star):
            return Agg("count")
        return Agg("count", _expr(arg))
    if isinstance(node, (exp.Sum, exp.Avg)):
        if isinstance(node.this, exp.Distinct):
            _unsupported("DISTINCT aggregates")
        return Agg("sum" if isinstance(node, exp.Sum) else "avg", _expr(node.this))
    if isinstance(node, exp.AggFunc):
        _unsupported(f"aggregate {node.key.upper()}")
    if isinstance(node, (exp.Literal, exp.Boolean, exp.Neg, exp.Cast, exp.Date)):
        return _literal(node)
    if isinstance(node, exp.Anonymous) and node.name.upper() == "DATE":
        return _literal(node)
    if isinstance(node, exp.Func):
        _unsupported(f"function {node.sql_name()}")
    if _is_condition(node):
        return _cond(node)
    raise SqlSyntaxError(f"unsupported expression {node.sql()!r}")


def _is_condition(node) -> bool:
    return isinstance(node, (exp.And, exp.Or, exp.Not, exp.In, exp.Between, *_COMPARE))


def _cond(node: exp.Expression):
    if isinstance(node, exp.Paren):
        return _cond(node.this)
    if isinstance(node, exp.And):
        return BoolOp("and", _flat(node, exp.And))
    if isinstance(node, exp.Or):
        return BoolOp("or", _flat(node, exp.Or))
    if isinstance(node, exp.Not):
        inner = node.this
        if isinstance(inner, exp.In):
            c = _cond(inner)
            return type(c)(c.expr, c.values if isinstance(c, InList) else c.query, True)
        if isinstance(inner, exp.Between):
            c = _cond(inner)
            return Between(c.expr, c.lo, c.hi, True)
        return Not(_cond(inner))
    if type(node) in _COMPARE:
        return Compare(_COMPARE[type(node)], _expr(node.this), _expr(node.expression))
    if isinstance(node, exp.In):
        target = _expr(node.this)
        query = node.args.get("query")
        if query is not None:
            sub = query.this if isinstance(query, exp.Subquery) else query
            return InQuery(target, _query(sub, nested=True))
        values = tuple(_literal(v) for v in node.expressions)
        if not values:
            raise SqlSyntaxError("IN needs at least one value")
        return InList(target, values)
    if isinstance(node, exp.Between):
        return Between(_expr(node.this), _expr(node.args["low"]), _expr(node.args["high"]))
    for cls, what in _UNSUPPORTED_EXPR.items():
        if isinstance(node, cls):
            _unsupported(what)
    if isinstance(node, exp.Column):
        # a bare boolean column used as a condition
        return Compare("=", _expr(node), Literal(True, "bool"))
    raise SqlSyntaxError(f"expected a condition, got {node.sql()!r}")


def _flat(node, cls) -> tuple:
    out = []
    stack = [node]
    while stack:
        cur = stack.pop()
        while isinstance(cur, exp.Paren):
            cur = cur.this
        if isinstance(cur, cls):
            stack.append(cur.expression)
            stack.append(cur.this)
        else:
            out.append(_cond(cur))
    return tuple(out)


def _table(node) -> TableRef:
    if not isinstance(node, exp.Table):
        _unsupported("subqueries in FROM")
    alias = node.alias or None
    return TableRef(node.name, alias)


def _query(sel: exp.Expression, nested: bool = False) -> Query:
    if isinstance(sel, (exp.Union, exp.Intersect, exp.Except)):
        _unsupported("set operations (UNION/INTERSECT/EXCEPT)")
    if not isinstance(sel, exp.Select):
        _unsupported(f"statement {sel.key.upper()}")
    for key, what in (("having", "HAVING"), ("limit", "LIMIT"), ("offset", "OFFSET"),
                      ("distinct", "SELECT DISTINCT"), ("with", "WITH"), ("windows", "WINDOW")):
        if sel.args.get(key):
            _unsupported(what)
    from_ = sel.args.get("from_") or sel.args.get("from")
    if from_ is None:
        raise SqlSyntaxError("missing FROM clause")
    tables = [_table(from_.this)]
    joins = []
    for j in sel.args.get("joins") or []:
        side = (j.side or "").upper()
        kind = (j.kind or "").upper()
        if side or kind in ("OUTER", "FULL", "CROSS", "SEMI", "ANTI"):
            _unsupported(f"{(side + ' ' + kind).strip()} JOIN (only inner equi-joins are supported)")
        tables.append(_table(j.this))
        on = j.args.get("on")
        if j.args.get("using"):
            _unsupported("JOIN ... USING")
        if on is not None:
            cond = _cond(on)
            parts = cond.items if isinstance(cond, BoolOp) and cond.op == "and" else (cond,)
            for part in parts:
                if not (isinstance(part, Compare) and part.op == "="
                        and isinstance(part.left, Column) and isinstance(part.right, Column)):
                    _unsupported("non-equi join condition")
                joins.append((part.left, part.right))
    items = []
    for e in sel.expressions:
        alias = None
        if isinstance(e, exp.Alias):
            alias = e.alias
            e = e.this
        items.append(SelectItem(_expr(e), alias))
    where = sel.args.get("where")
    group = sel.args.get("group")
    order = sel.args.get("order")
    q = Query(items, tables, joins, _cond(where.this) if where is not None else None)
    if group is not None:
        q.group_by = [_expr(g) for g in group.expressions]
    if order is not None:
        for o in order.expressions:
            q.order_by.append(OrderItem(_expr(o.this), bool(o.args.get("desc"))))
    return q


def _offset(text: str, line: int, col: int, highlight: str) -> int:
    lines = text.split("\n")
    start = sum(len(x) + 1 for x in lines[: max(0, line - 1)])
    return max(0, start + col - len(highlight or ""))


_OTHER_STATEMENTS = tuple(getattr(exp, n) for n in ("Insert", "Update", "Delete", "Create", "Drop", "Alter",
                                                     "Command", "Merge", "Use", "Set") if hasattr(exp, n))


def parse_sql(text: str) -> Query:
    """Parse one SELECT statement of the supported grammar."""
    if not text or not text.strip().rstrip(";").strip():
        raise SqlSyntaxError("empty query", 0)
    try:
        statements = sqlglot.parse(text)
    except ParseError as err:
        info = err.errors[0] if err.errors else {}
        pos = _offset(text, info.get("line", 1), info.get("col", 0), info.get("highlight", ""))
        raise SqlSyntaxError(info.get("description", str(err)).split(". Line")[0], pos) from None
    except TokenError as err:
        raise SqlSyntaxError(str(err)) from None
    statements = [s for s in statements if s is not None]
    if len(statements) != 1:
        raise SqlSyntaxError("expected exactly one statement", 0)
    stmt = statements[0]
    if not isinstance(stmt, (exp.Select, exp.Union, exp.Intersect, exp.Except) + _OTHER_STATEMENTS):
        # e.g. a misspelt keyword that sqlglot read as a bare expression
        raise SqlSyntaxError(f"expected a SELECT statement, found {stmt.sql()!r}", 0)
    return _query(stmt)


def walk_conditions(cond):
    """Yield every leaf comparison of a condition tree."""
    if cond is None:
        return
    if isinstance(cond, BoolOp):
        for c in cond.items:
            yield from walk_conditions(c)
    elif isinstance(cond, Not):
        yield from walk_conditions(cond.item)
    else:
        yield cond
