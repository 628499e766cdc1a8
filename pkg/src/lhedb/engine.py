"""End-to-end query pipeline: parse, compile, optimize, execute, finalize.

:class:`Engine` wires the two roles together in one process.  The executor
half gets only the evaluation backend (public and evaluation keys); the
:class:`ClientSession` half keeps the secret key.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import bfv
from .catalog import (
    EncryptedTable,
    PlainTable,
    TableMeta,
    build_table,
    dump_params,
    encrypt_table,
    load_keys,
    load_meta,
    load_params,
    load_table,
    persist_table,
    read_csv,
)
from .client import ClientSession, ResultSet, client_finalize
from .compiler import compile_query
from .errors import BackendMismatch, CatalogError, InfeasibleWithoutBootstrap
from .executor import ExecutionTrace, Executor
from .params import Params
from .plan import Plan, annotate_depth, explain
from .rewrite import optimize as optimize_plan
from .sql import parse_sql
from .vector import Backend, SimBackend


@dataclass
class QueryOutcome:
    result: ResultSet
    plan: Plan
    original: Plan
    trace: ExecutionTrace

    def explain(self) -> str:
        return explain(self.plan, self.original)


class Engine:
    def __init__(self, params: Params, evaluator: Backend, session: ClientSession | None,
                 loader: Callable[[str], EncryptedTable] | None = None):
        self.params = params
        self.evaluator = evaluator
        self.session = session
        self.metas: dict[str, TableMeta] = {}
        self.tables: dict[str, EncryptedTable] = {}
        self.plain: dict[str, PlainTable] = {}
        self._loader = loader

    # -- construction ------------------------------------------------------------------

    @classmethod
    def in_memory(cls, params: Params, backend: str = "sim", seed=None, enforce_budget: bool = True) -> "Engine":
        if backend == "sim":
            sim = SimBackend(params, enforce_budget)
            return cls(params, sim, ClientSession(params, simulator=sim))
        if backend == "bfv":
            sk, pk, evk = bfv.keygen(params, seed)
            evaluator = bfv.BfvEvaluator(params, evk, pk, enforce_budget, seed)
            return cls(params, evaluator, ClientSession(params, secret_key=sk))
        raise BackendMismatch(f"unknown backend {backend!r}")

    @classmethod
    def open_database(cls, db: str | Path, keys: str | Path | None = None, backend: str | None = None,
                      enforce_budget: bool = True, with_client: bool = True) -> "Engine":
        db = Path(db)
        try:
            params, stored = load_params((db / "params.txt").read_text())
        except FileNotFoundError:
            raise CatalogError(f"{db} is not a database (no params.txt)") from None
        if backend is not None and backend != stored:
            raise BackendMismatch(f"database {db} holds {stored} vectors; cannot query it with --backend {backend}")
        if stored == "sim":
            sim = SimBackend(params, enforce_budget)
            evaluator, session = sim, ClientSession(params, simulator=sim)
        else:
            if keys is None:
                raise CatalogError("the bfv backend needs --keys")
            kparams, sk, pk, evk = load_keys(keys, secret=with_client)
            if kparams != params:
                raise BackendMismatch("keys were generated for a different parameter set")
            evaluator = bfv.BfvEvaluator(params, evk, pk, enforce_budget)
            session = ClientSession(params, secret_key=sk) if with_client else None
        engine = cls(params, evaluator, session, lambda name: load_table(db / name, evaluator))
        for meta_file in sorted(db.glob("*/meta.txt")):
            meta = load_meta(meta_file.read_text())
            engine.metas[meta.name] = meta
        return engine

    # -- data ----------------------------------------------------------------------------

    def load(self, table: PlainTable) -> EncryptedTable:
        table.meta.backend = self.evaluator.tag
        table.meta.params_fingerprint = self.params.fingerprint()
        enc = encrypt_table(table, self.evaluator)
        self.metas[table.meta.name] = table.meta
        self.tables[table.meta.name] = enc
        self.plain[table.meta.name] = table
        return enc

    def load_csv(self, name: str, path: str | Path, lexicographic: bool = False) -> EncryptedTable:
        header, records = read_csv(path)
        return self.load(build_table(name, header, records, self.params, lexicographic))

    def _table(self, name: str) -> EncryptedTable:
        hit = self.tables.get(name)
        if hit is None:
            if self._loader is None:
                raise CatalogError(f"table {name!r} is not loaded")
            hit = self.tables[name] = self._loader(name)
        return hit

    # -- queries -------------------------------------------------------------------------

    def plan(self, sql: str, optimize: bool = True) -> tuple[Plan, Plan]:
        """(plan to run, unoptimized plan)."""
        original = compile_query(parse_sql(sql), self.metas, self.params)
        if not optimize:
            return original, original
        return optimize_plan(original), original

    def execute(self, plan: Plan, workers: int = 1):
        needed = {plan.info["sources"][rs] for rs in plan.tables}
        tables = {name: self._table(name) for name in needed}
        return Executor(self.evaluator, tables, workers).run(plan)

    def query(self, sql: str, optimize: bool = True, workers: int = 1) -> QueryOutcome:
        plan, original = self.plan(sql, optimize)
        ann = annotate_depth(plan)
        if ann.deepest > self.params.depth_budget and self.evaluator.enforce_budget:
            raise InfeasibleWithoutBootstrap(ann.deepest, self.params.depth_budget, explain(plan, original))
        result = self.execute(plan, workers)
        if self.session is None:
            raise CatalogError("this engine has no client session")
        return QueryOutcome(client_finalize(self.session, plan, result), plan, original, result.trace)


# -- database directories ------------------------------------------------------------------

def create_database(db: str | Path, params: Params, backend: str) -> Path:
    db = Path(db)
    db.mkdir(parents=True, exist_ok=True)
    target = db / "params.txt"
    text = dump_params(params, backend)
    if target.exists():
        stored, tag = load_params(target.read_text())
        if stored != params or tag != backend:
            raise BackendMismatch(f"{db} already holds a different parameter set or backend")
    else:
        target.write_text(text)
    return db


def ingest_csv(db: str | Path, table: str, csv_path: str | Path, keys: str | Path | None = None,
               backend: str = "bfv", params: Params | None = None, lexicographic: bool = False) -> TableMeta:
    """Encrypt a CSV file into ``<db>/<table>/``.  Uses public material only."""
    db = Path(db)
    if backend == "bfv":
        if keys is None:
            raise CatalogError("ingest with the bfv backend needs --keys")
        kparams, _, pk, evk = load_keys(keys, secret=False)
        params = kparams
        evaluator: Backend = bfv.BfvEvaluator(params, evk, pk)
    elif backend == "sim":
        if params is None:
            if (db / "params.txt").exists():
                params, _ = load_params((db / "params.txt").read_text())
            else:
                raise CatalogError("ingest with the sim backend needs --params")
        evaluator = SimBackend(params)
    else:
        raise BackendMismatch(f"unknown backend {backend!r}")
    create_database(db, params, backend)
    header, records = read_csv(csv_path)
    plain = build_table(table, header, records, params, lexicographic)
    plain.meta.backend = backend
    enc = encrypt_table(plain, evaluator)
    persist_table(enc, db / table)
    return plain.meta
