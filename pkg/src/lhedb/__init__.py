"""Encrypted SQL over leveled BFV with a multiplicative-depth-aware planner."""

from .client import ClientSession, ResultSet, client_finalize
from .compiler import compile_query
from .cost import choose_injection
from .engine import Engine, QueryOutcome, ingest_csv
from .errors import (
    BoundCheckError,
    DepthBudgetExceeded,
    InfeasibleWithoutBootstrap,
    LheError,
    SqlSyntaxError,
    UnsupportedFeature,
)
from .executor import Executor, execute
from .params import Params, profile
from .plan import annotate_depth, explain
from .rewrite import optimize
from .sql import parse_sql
from .vector import SimBackend

__all__ = [
    "BoundCheckError", "ClientSession", "DepthBudgetExceeded", "Engine", "Executor",
    "InfeasibleWithoutBootstrap", "LheError", "Params", "QueryOutcome", "ResultSet", "SimBackend",
    "SqlSyntaxError", "UnsupportedFeature", "annotate_depth", "choose_injection", "client_finalize",
    "compile_query", "execute", "explain", "ingest_csv", "optimize", "parse_sql", "profile",
]
