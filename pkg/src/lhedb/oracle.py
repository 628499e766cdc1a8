"""Plaintext SQL reference: the same tables in an in-memory SQLite database."""

from __future__ import annotations

import sqlite3
from typing import Iterable

import sqlglot

from .catalog import PlainTable

_SQLITE_TYPE = {"int": "INTEGER", "fixed": "REAL", "bool": "INTEGER", "date": "TEXT", "str": "TEXT"}


class SqlOracle:
    def __init__(self, tables: Iterable[PlainTable]):
        self.db = sqlite3.connect(":memory:")
        for t in tables:
            self.add(t)

    def add(self, table: PlainTable) -> None:
        cols = ", ".join(f'"{c.name}" {_SQLITE_TYPE[c.kind]}' for c in table.meta.columns)
        self.db.execute(f'CREATE TABLE "{table.meta.name}" ({cols})')
        marks = ", ".join("?" for _ in table.meta.columns)
        rows = [tuple(int(v) if isinstance(v, bool) else v for v in r) for r in table.rows]
        self.db.executemany(f'INSERT INTO "{table.meta.name}" VALUES ({marks})', rows)

    def run(self, sql: str, tiebreak: str | None = None) -> list[tuple]:
        """Run ``sql``; with ``tiebreak`` (a table reference) rows that tie on
        the ORDER BY keys come out in that table's storage order."""
        tree = sqlglot.parse_one(sql)
        if tiebreak is not None and tree.args.get("order"):
            tree = tree.order_by(f"{tiebreak}.rowid", append=True, copy=True)
        return self.db.execute(tree.sql(dialect="sqlite")).fetchall()


def normalize_value(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (int, float)):
        return round(float(v), 6)
    return v


def normalize(rows) -> list[tuple]:
    return [tuple(normalize_value(v) for v in r) for r in rows]


def results_match(got, expected, ordered: bool) -> bool:
    a, b = normalize(got), normalize(expected)
    if ordered:
        return a == b
    return sorted(a, key=repr) == sorted(b, key=repr)
