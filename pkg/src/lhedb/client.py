"""Trusted-side session: decryption and result post-processing.

Only this module touches secret material.  It decrypts the fixed-shape
outputs of a plan, drops the rows whose mask decrypted to 0, divides
SUM/COUNT pairs for AVG and maps codes back to logical values.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .bfv import BfvClient, SecretKey
from .catalog import decode_value, to_signed
from .errors import ClientError
from .executor import ExecutionResult
from .plan import Plan, ResultItem
from .vector import HEVector, SimBackend


@dataclass
class ResultSet:
    columns: list[str]
    rows: list[tuple]

    def __len__(self):
        return len(self.rows)

    def format(self) -> str:
        lines = [" | ".join(self.columns)]
        for r in self.rows:
            lines.append(" | ".join("NULL" if v is None else str(v) for v in r))
        lines.append(f"({len(self.rows)} row{'s' if len(self.rows) != 1 else ''})")
        return "\n".join(lines)


class ClientSession:
    """Holds the decryption capability.

    For the BFV backend that is the secret key; for the simulator it is the
    simulator itself (the simulated payload is the plaintext).
    """

    def __init__(self, params, secret_key: SecretKey | None = None, simulator: SimBackend | None = None):
        if (secret_key is None) == (simulator is None):
            raise ClientError("a session needs exactly one of a secret key or a simulator")
        self.params = params
        self._dec = BfvClient(secret_key) if secret_key is not None else simulator

    def decrypt(self, vec: HEVector) -> np.ndarray:
        return np.asarray(self._dec.decrypt(vec), dtype=np.int64) % self.params.p

    def decrypt_column(self, chunks, rows: int) -> np.ndarray:
        if isinstance(chunks, HEVector):
            return self.decrypt(chunks)[:1]
        if not chunks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([self.decrypt(c) for c in chunks])[:rows]

    def scalar(self, vec: HEVector) -> int:
        return int(self.decrypt(vec)[0])


def divide_avg(total: Decimal, count: int):
    if count == 0:
        raise ClientError("AVG over zero rows")
    return float(total / count)


def _decode(item: ResultItem, code: int, p: int):
    signed = to_signed(code, p)
    if item.func == "col" and item.spec is not None:
        return decode_value(signed, item.spec)
    if item.scale == 1:
        return signed
    return float(Decimal(signed) / item.scale)


def _aggregate(item: ResultItem, parts: dict, n: int, p: int):
    if item.func == "count":
        return parts["count"]
    total = Decimal(to_signed(parts["sum"], p)) / item.scale
    if n == 0:
        return None
    if item.func == "sum":
        return int(total) if item.scale == 1 else float(total)
    return divide_avg(total, parts["count"])


def client_finalize(session: ClientSession, plan: Plan, result: ExecutionResult) -> ResultSet:
    p = plan.params.p
    out = result.outputs
    public = plan.info.get("public", {})
    names = [i.name for i in plan.items]
    rows_public = plan.tables[plan.sink].rows if plan.sink else 0

    def scalar(key):
        if key in public:
            return public[key]
        return session.scalar(out[key])

    if plan.kind == "aggregate":
        n = scalar(("agg", "n"))
        row = []
        for i, item in enumerate(plan.items):
            parts = {part: scalar(("agg", i, part)) for part in ("sum", "count")
                     if ("agg", i, part) in out or ("agg", i, part) in public}
            row.append(_aggregate(item, parts, n, p))
        return ResultSet(names, [tuple(row)])

    if plan.kind == "groups":
        rows = []
        for gi, key in enumerate(plan.groups):
            n = scalar(("group", gi, "n"))
            if n == 0:
                continue
            row = []
            for i, item in enumerate(plan.items):
                if item.func == "key":
                    row.append(decode_value(key[item.index], item.spec))
                    continue
                parts = {part: scalar(("group", gi, i, part)) for part in ("sum", "count")
                         if ("group", gi, i, part) in out}
                row.append(_aggregate(item, parts, n, p))
            rows.append(tuple(row))
        return ResultSet(names, rows)

    if plan.kind == "rows":
        mask = None
        if ("mask",) in out:
            mask = session.decrypt_column(out[("mask",)], rows_public)
        cols = [session.decrypt_column(out[("col", i)], rows_public) for i in range(len(plan.items))]
        rows = []
        for s in range(rows_public):
            if mask is not None:
                if mask[s] not in (0, 1):
                    raise ClientError(f"row mask slot {s} decrypted to {mask[s]}")
                if mask[s] == 0:
                    continue
            rows.append(tuple(_decode(item, int(c[s]), p) for item, c in zip(plan.items, cols)))
        return ResultSet(names, rows)

    if plan.kind == "ordered":
        rows = []
        for gi in range(len(plan.groups)):
            count = session.scalar(out[("ord", gi, "count")])
            if count == 0:
                continue
            mask = session.decrypt_column(out[("ord", gi, "mask")], rows_public)
            cols = [session.decrypt_column(out[("ord", gi, "col", i)], rows_public)
                    for i in range(len(plan.items))]
            hits = [s for s in range(rows_public) if mask[s] == 1]
            if len(hits) != count:
                raise ClientError(f"sort bucket {gi}: mask has {len(hits)} rows, count says {count}")
            for s in hits:
                rows.append(tuple(_decode(item, int(c[s]), p) for item, c in zip(plan.items, cols)))
        return ResultSet(names, rows)

    raise ClientError(f"unknown plan kind {plan.kind!r}")
