"""Rational multiplicative-depth algebra.

Depth is measured in ciphertext-ciphertext multiplications.  A ciphertext
addition adds ``1/p``; plaintext operands, rotations and negation are free.
A multiplication starts a new level from the integer part of the deeper
operand: ``floor(max(a, b)) + 1``.  For operands whose depth is an integer
this is the plain ``max + 1`` recurrence; the floor keeps the small additive
contributions from accumulating across levels, so an equality test costs
exactly ``ceil(log2(p-1))`` even when its input carries additive noise.

The executor and the planner both go through these helpers, which is what
makes planned and measured depths agree exactly.
"""

from __future__ import annotations

import heapq
import math
from fractions import Fraction
from typing import Iterable

ZERO = Fraction(0)


def ceil_log2(k: int) -> int:
    if k < 1:
        raise ValueError("ceil_log2 needs k >= 1")
    return (k - 1).bit_length()


def add_depth(a: Fraction, b: Fraction, p: int) -> Fraction:
    return max(a, b) + Fraction(1, p)


def mul_depth(a: Fraction, b: Fraction) -> Fraction:
    return Fraction(math.floor(max(a, b)) + 1)


def sum_tree_depth(depths: Iterable[Fraction], p: int) -> Fraction:
    """Depth of a balanced pairwise addition tree over ``depths``.

    Mirrors :func:`lhedb.vector.sum_balanced`, which pairs neighbours
    level by level.
    """
    level = list(depths)
    if not level:
        raise ValueError("empty sum")
    while len(level) > 1:
        nxt = [add_depth(level[i], level[i + 1], p) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def product_order(depths: list[Fraction]) -> list[tuple[int, int]]:
    """Merge schedule for a depth-aware product of several operands.

    Repeatedly multiplies the two shallowest operands (Huffman style).  Returns
    pairs of slot indices; merged results are appended as new slots.  Ties are
    broken by slot index so the schedule is deterministic.
    """
    heap = [(d, i) for i, d in enumerate(depths)]
    heapq.heapify(heap)
    nxt = len(depths)
    order = []
    while len(heap) > 1:
        da, ia = heapq.heappop(heap)
        db, ib = heapq.heappop(heap)
        order.append((ia, ib))
        heapq.heappush(heap, (mul_depth(da, db), nxt))
        nxt += 1
    return order


def product_depth(depths: list[Fraction]) -> Fraction:
    if not depths:
        raise ValueError("empty product")
    slots = list(depths)
    for ia, ib in product_order(slots):
        slots.append(mul_depth(slots[ia], slots[ib]))
    return slots[-1]


def power_depth(d: Fraction, e: int) -> Fraction:
    """Depth of x**e computed from repeated squarings plus a depth-aware
    product of the powers selected by the binary expansion of e."""
    if e < 1:
        raise ValueError("exponent must be positive")
    powers = []
    cur = d
    for bit in range(e.bit_length()):
        if e >> bit & 1:
            powers.append(cur)
        cur = mul_depth(cur, cur)
    return product_depth(powers)


# closed forms for the operator depth table (for fresh inputs)

def eq_increment(p: int) -> int:
    return ceil_log2(p - 1)


def in_increment(p: int, k: int) -> Fraction:
    return ceil_log2(p - 1) + Fraction(ceil_log2(k), p)


def lt_increment(p: int, terms: int | None = None) -> Fraction:
    terms = (p - 1) // 2 if terms is None else terms
    return ceil_log2(p - 1) + Fraction(ceil_log2(terms), p)


def aggregation_increment(n: int, p: int) -> Fraction:
    return Fraction(n.bit_length() - 1, p)


def join_increment(p: int) -> int:
    return ceil_log2(p - 1) + 1


def fmt(d: Fraction) -> str:
    """Render a depth as ``int + num/den`` (stable text for reports)."""
    d = Fraction(d)
    whole = math.floor(d)
    frac = d - whole
    if frac == 0:
        return str(whole)
    return f"{whole}+{frac.numerator}/{frac.denominator}"
