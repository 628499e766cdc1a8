"""Comparison and boolean operators as slot arithmetic.

Equality uses Fermat's little theorem: ``(x - y) ** (p - 1)`` is 0 when the
operands agree and 1 otherwise, so ``1 - (x - y) ** (p - 1)`` is a 0/1 mask.
Order comparisons test whether ``x - y`` lands in the negative half of the
field by summing equality indicators over that range.

Operands are HEVectors or public integer constants (already encoded as
signed residues).  At least one operand of a binary comparison must be
encrypted.
"""

from __future__ import annotations

from typing import Iterable, Sequence, Union

from .vector import (
    HEVector,
    he_mul,
    he_mul_const,
    he_neg,
    he_plain_add,
    he_plain_rsub,
    he_plain_sub,
    he_pow,
    he_sub,
    sum_balanced,
)

Operand = Union[HEVector, int]


def diff(x: Operand, y: Operand) -> HEVector:
    if isinstance(x, HEVector) and isinstance(y, HEVector):
        return he_sub(x, y)
    if isinstance(x, HEVector):
        return x if y % x.params.p == 0 else he_plain_sub(x, x.backend.const(y))
    if isinstance(y, HEVector):
        return he_plain_add(he_neg(y), y.backend.const(x))
    raise TypeError("at least one comparison operand must be encrypted")


def is_zero(d: HEVector) -> HEVector:
    """1 where the slot is 0, else 0."""
    z = he_pow(d, d.params.p - 1)
    return he_plain_rsub(d.backend.const(1), z)


def eq(x: Operand, y: Operand) -> HEVector:
    return is_zero(diff(x, y))


def _zeros_like(v: HEVector) -> HEVector:
    return he_mul_const(v, 0)


def _negative_terms(d: HEVector, diff_range: tuple[int, int] | None) -> list[int]:
    half = d.params.half_p
    lo, hi = -half, -1
    if diff_range is not None:
        lo = max(lo, diff_range[0])
        hi = min(hi, diff_range[1])
    return list(range(lo, hi + 1))


def eq_sum(d: HEVector, targets: Sequence[int]) -> HEVector:
    if not targets:
        return _zeros_like(d)
    return sum_balanced([eq(d, a) for a in targets])


def lt(x: Operand, y: Operand, diff_range: tuple[int, int] | None = None) -> HEVector:
    """1 where x < y as signed residues.

    ``diff_range`` is an optional public bound on ``x - y``; when given, only
    the negative values inside it are tested (fewer equality terms).
    """
    d = diff(x, y)
    return eq_sum(d, _negative_terms(d, diff_range))


def _flip(r: tuple[int, int] | None):
    return None if r is None else (-r[1], -r[0])


def gt(x: Operand, y: Operand, diff_range=None) -> HEVector:
    return lt(y, x, _flip(diff_range))


def leq(x: Operand, y: Operand, diff_range=None) -> HEVector:
    return bool_not(gt(x, y, diff_range))


def geq(x: Operand, y: Operand, diff_range=None) -> HEVector:
    return bool_not(lt(x, y, diff_range))


def in_set(x: HEVector, values: Iterable[int]) -> HEVector:
    """1 where the slot equals any member of the public set."""
    p = x.params.p
    members = sorted({v % p for v in values})
    if not members:
        raise ValueError("IN needs a non-empty set")
    return sum_balanced([eq(x, v) for v in members])


def between(x: HEVector, lo: int, hi: int, strategy: str = "product",
            value_range: tuple[int, int] | None = None) -> HEVector:
    """1 where lo <= x <= hi (signed).

    ``product`` multiplies ``geq(x, lo)`` by ``leq(x, hi)``.  ``range`` sums
    equality tests over the k = hi - lo + 1 public values instead, which costs
    one equality level plus ceil(log2 k)/p.  ``value_range`` optionally bounds
    x publicly, trimming the range form and the comparison sums.
    """
    if lo > hi:
        raise ValueError(f"empty BETWEEN range [{lo}, {hi}]")
    if strategy == "range":
        a, b = lo, hi
        if value_range is not None:
            a, b = max(a, value_range[0]), min(b, value_range[1])
        if a > b:
            return _zeros_like(x)
        return in_set(x, range(a, b + 1))
    if strategy != "product":
        raise ValueError(f"unknown BETWEEN strategy {strategy!r}")
    lo_range = hi_range = None
    if value_range is not None:
        lo_range = (value_range[0] - lo, value_range[1] - lo)
        hi_range = (value_range[0] - hi, value_range[1] - hi)
    return he_mul(geq(x, lo, lo_range), leq(x, hi, hi_range))


def bool_and(a: HEVector, b: HEVector) -> HEVector:
    return he_mul(a, b)


def bool_or(a: HEVector, b: HEVector) -> HEVector:
    """a + b - ab, evaluated as 1 - (1 - a)(1 - b) so it costs one level."""
    return bool_not(he_mul(bool_not(a), bool_not(b)))


def bool_not(a: HEVector) -> HEVector:
    return he_plain_rsub(a.backend.const(1), a)
