"""Deterministic TPC-H-like microtables and the Q1/Q4/Q6-shaped queries.

Value ranges shrink with the plaintext prime so that every benchmarked SUM
passes the public overflow check: the row count times the largest value must
stay below (p-1)/2.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass

import numpy as np

from .catalog import PlainTable, build_table
from .params import Params

PRIORITIES = ["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"]
RETURN_FLAGS = ["A", "N", "R"]
LINE_STATUS = ["F", "O"]
ORDER_STATUS = ["F", "O", "P"]

EPOCH = _dt.date(1994, 1, 1)

ORDERS_HEADER = ["o_orderkey:int:key", "o_orderdate:date", "o_orderpriority:str", "o_orderstatus:str"]
LINEITEM_HEADER = ["l_orderkey:int", "l_quantity:int", "l_price:int", "l_discount:fixed(100)",
                   "l_shipdate:date", "l_commitdate:date", "l_receiptdate:date",
                   "l_returnflag:str", "l_linestatus:str"]


@dataclass(frozen=True)
class Ranges:
    days: int       # date window length
    quantity: int   # l_quantity in 1..quantity
    price: int      # l_price in 1..price
    discount: int   # l_discount in 0.00..discount/100


def ranges_for(params: Params, lineitem_rows: int) -> Ranges:
    half = params.half_p
    per_row = max(1, half // max(1, lineitem_rows))
    return Ranges(
        days=min(half // 2, 360),
        quantity=max(1, min(50, per_row)),
        price=max(1, min(40, per_row)),
        discount=max(1, min(10, per_row)),
    )


def _date(offset: int) -> str:
    return (EPOCH + _dt.timedelta(days=int(offset))).isoformat()


def generate_records(params: Params, lineitem_rows: int, seed: int = 0) -> tuple[list, list]:
    """Text records for ``orders`` (one row per 4 lineitems, unique key) and
    ``lineitem``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    r = ranges_for(params, lineitem_rows)
    order_rows = max(1, lineitem_rows // 4)
    order_rows = min(order_rows, params.half_p)

    orders = []
    order_dates = []
    for k in range(1, order_rows + 1):
        d = int(rng.integers(0, max(1, r.days - 30)))
        order_dates.append(d)
        orders.append([str(k), _date(d),
                       PRIORITIES[int(rng.integers(0, len(PRIORITIES)))],
                       ORDER_STATUS[int(rng.integers(0, len(ORDER_STATUS)))]])
    # pin the window ends so the date epoch is the same for every seed
    orders[0][1] = _date(0)

    lines = []
    for i in range(lineitem_rows):
        # the first rows give every order at least one line
        k = i + 1 if i < order_rows else int(rng.integers(1, order_rows + 1))
        ship = order_dates[k - 1] + int(rng.integers(1, 15))
        commit = order_dates[k - 1] + int(rng.integers(1, 15))
        receipt = ship + int(rng.integers(1, 15))
        lines.append([
            str(k),
            str(int(rng.integers(1, r.quantity + 1))),
            str(int(rng.integers(1, r.price + 1))),
            f"{int(rng.integers(0, r.discount + 1)) / 100:.2f}",
            _date(ship), _date(commit), _date(receipt),
            RETURN_FLAGS[int(rng.integers(0, len(RETURN_FLAGS)))],
            LINE_STATUS[int(rng.integers(0, len(LINE_STATUS)))],
        ])
    if lines:
        lines[0][4] = _date(0)

    return orders, lines


def generate(params: Params, lineitem_rows: int, seed: int = 0) -> dict[str, PlainTable]:
    return build_tables(params, *generate_records(params, lineitem_rows, seed))


def build_tables(params: Params, orders, lines) -> dict[str, PlainTable]:
    """Encode CSV-style ``orders`` and ``lineitem`` records."""
    return {
        "orders": build_table("orders", ORDERS_HEADER, orders, params, lexicographic=True),
        "lineitem": build_table("lineitem", LINEITEM_HEADER, lines, params, lexicographic=True),
    }


def queries(params: Params, lineitem_rows: int) -> dict[str, str]:
    r = ranges_for(params, lineitem_rows)
    cut = _date(r.days * 3 // 4)
    lo, hi = _date(r.days // 4), _date(r.days // 2)
    disc_lo = f"{max(0, r.discount // 2 - 1) / 100:.2f}"
    disc_hi = f"{(r.discount // 2 + 1) / 100:.2f}"
    qty = max(2, r.quantity // 2)
    return {
        "Q1": ("SELECT l_returnflag, l_linestatus, SUM(l_quantity), SUM(l_price), AVG(l_quantity), "
               "AVG(l_discount), COUNT(*) FROM lineitem "
               f"WHERE l_shipdate <= DATE '{cut}' "
               "GROUP BY l_returnflag, l_linestatus ORDER BY l_returnflag, l_linestatus"),
        # filter on the reference side of the join, grouping on a joined column
        "Q4": ("SELECT o_orderpriority, COUNT(*) FROM lineitem, orders "
               "WHERE l_orderkey = o_orderkey AND o_orderstatus = 'F' "
               "GROUP BY o_orderpriority ORDER BY o_orderpriority"),
        "Q6": ("SELECT SUM(l_price), COUNT(*) FROM lineitem "
               f"WHERE l_shipdate BETWEEN DATE '{lo}' AND DATE '{hi}' "
               f"AND l_discount BETWEEN {disc_lo} AND {disc_hi} AND l_quantity < {qty}"),
    }
