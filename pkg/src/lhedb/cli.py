"""Command line: keygen, ingest, query, bench, expansion.

Exit codes: 0 ok, 1 other error, 2 unsupported feature (including failed
overflow checks), 3 infeasible without bootstrapping, 4 parse error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bfv
from .bench import BENCH_PROFILES, run_bench
from .catalog import expansion_of_directory, expansion_report, load_params, save_keys
from .engine import Engine, ingest_csv
from .errors import InfeasibleWithoutBootstrap, LheError, SqlSyntaxError, UnsupportedFeature
from .params import profile, profile_names
from .plan import annotate_depth, explain

EXIT_OK, EXIT_ERROR, EXIT_UNSUPPORTED, EXIT_INFEASIBLE, EXIT_PARSE = 0, 1, 2, 3, 4


def cmd_keygen(args) -> int:
    params = profile(args.params)
    sk, pk, evk = bfv.keygen(params, args.seed)
    out = save_keys(args.out, params, sk, pk, evk)
    print(f"wrote keys for {params.describe()} to {out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    backend = args.backend or ("bfv" if args.keys else "sim")
    params = profile(args.params) if args.params else None
    meta = ingest_csv(args.db, args.table, args.csv, keys=args.keys, backend=backend,
                      params=params, lexicographic=args.lexicographic)
    cols = ", ".join(f"{c.name}:{c.kind}" for c in meta.columns)
    print(f"ingested {meta.rows} rows into {args.db}/{meta.name} ({backend}): {cols}")
    return EXIT_OK


def cmd_query(args) -> int:
    engine = Engine.open_database(args.db, keys=args.keys, backend=args.backend)
    plan, original = engine.plan(args.sql, optimize=not args.no_optimize)
    if args.explain:
        print(explain(plan, None if args.no_optimize else original))
        print()
    deepest = annotate_depth(plan).deepest
    if deepest > engine.params.depth_budget:
        raise InfeasibleWithoutBootstrap(deepest, engine.params.depth_budget, explain(plan, original))
    outcome = engine.query(args.sql, optimize=not args.no_optimize, workers=args.workers)
    print(outcome.result.format())
    if args.explain:
        print()
        print(outcome.trace.summary())
    return EXIT_OK


def cmd_bench(args) -> int:
    report = run_bench(args.profile, args.seed, args.query or None)
    print(report.format())
    return EXIT_OK if report.all_match else EXIT_ERROR


def cmd_expansion(args) -> int:
    if args.db:
        db = Path(args.db)
        params, backend = load_params((db / "params.txt").read_text())
        for meta_file in sorted(db.glob("*/meta.txt")):
            rep = expansion_of_directory(meta_file.parent, args.raw_width)
            print(f"{meta_file.parent.name}: {rep.ciphertext_bytes} ciphertext bytes / "
                  f"{rep.raw_bytes} raw bytes = {rep.ratio:.2f}x ({backend}, n={params.n})")
    params = profile(args.params)
    rep = expansion_report(params, params.n, args.raw_width)
    print(f"{params.name} profile, one full column of {params.n} values at {args.raw_width} bytes: "
          f"{rep.ciphertext_bytes} / {rep.raw_bytes} bytes = {rep.ratio:.2f}x")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lhedb", description="Encrypted SQL over leveled BFV")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate secret, public and evaluation keys")
    p.add_argument("--params", default="desk", choices=profile_names())
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("ingest", help="encrypt a CSV file into a database directory")
    p.add_argument("--table", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--keys", help="key directory (public material is used)")
    p.add_argument("--backend", choices=("sim", "bfv"))
    p.add_argument("--params", choices=profile_names(), help="parameter profile for the sim backend")
    p.add_argument("--lexicographic", action="store_true",
                   help="number strings in sorted order so <, > and ORDER BY follow string order")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", help="run a SQL query")
    p.add_argument("--db", required=True)
    p.add_argument("--sql", required=True)
    p.add_argument("--keys")
    p.add_argument("--explain", action="store_true")
    p.add_argument("--no-optimize", action="store_true")
    p.add_argument("--backend", choices=("sim", "bfv"))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="run the Q1/Q4/Q6-shaped benchmark")
    p.add_argument("--profile", default="desk", choices=sorted(BENCH_PROFILES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--query", action="append", choices=("Q1", "Q4", "Q6"))
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("expansion", help="report ciphertext expansion")
    p.add_argument("--db")
    p.add_argument("--params", default="paper", choices=profile_names())
    p.add_argument("--raw-width", type=int, default=2, help="bytes per raw value")
    p.set_defaults(func=cmd_expansion)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SqlSyntaxError as exc:
        print(f"syntax error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except UnsupportedFeature as exc:
        print(f"unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except InfeasibleWithoutBootstrap as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        if exc.report:
            print(exc.report, file=sys.stderr)
        return EXIT_INFEASIBLE
    except (LheError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
