"""Cost-and-decision model for mask injection.

A mask produced before a chain of ``m`` join stages can be multiplied in
right away (every later stage stacks on the mask's depth) or carried past
``i`` stages first.  Carrying costs one extra multiplication per stage and
no depth; the remaining ``m - i`` stages each add ``d_s`` levels.

    D_i       = (m - i) * d_s
    dMUL_i    = i * C_mul
    Cost(i)   = (m - i) * C_mul + dMUL_i + [D_i > B] * C_boot
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class CostModel:
    m: int
    d_s: Fraction
    c_mul: Fraction = Fraction(1)
    c_boot: Fraction = Fraction(100_000)
    budget: Fraction = Fraction(12)

    def depth_at(self, i: int) -> Fraction:
        return (self.m - i) * Fraction(self.d_s)

    def extra_mults(self, i: int) -> Fraction:
        return i * Fraction(self.c_mul)

    def feasible(self, i: int) -> bool:
        return self.depth_at(i) <= self.budget

    def cost(self, i: int) -> Fraction:
        boot = 0 if self.feasible(i) else Fraction(self.c_boot)
        return (self.m - i) * Fraction(self.c_mul) + self.extra_mults(i) + boot


def choose_injection(m: int, d_s, c_mul=1, c_boot=100_000, budget=12) -> int:
    """Stage after which to inject a mask.

    Returns the earliest stage ``i`` whose remaining depth ``(m - i) * d_s``
    fits the budget, and ``m`` (inject at the very end) when none does.  The
    earliest feasible stage needs the fewest carried levels; every feasible
    stage has the same model cost, so this is also a cost minimizer.
    """
    if m < 1:
        raise ValueError("need at least one stage")
    if Fraction(d_s) <= 0:
        raise ValueError("per-stage depth must be positive")
    model = CostModel(m, Fraction(d_s), Fraction(c_mul), Fraction(c_boot), Fraction(budget))
    for i in range(m + 1):
        if model.feasible(i):
            return i
    return m


def exhaustive_best(model: CostModel) -> tuple[Fraction, list[int]]:
    """Minimum cost and every stage attaining it (brute force)."""
    costs = {i: model.cost(i) for i in range(model.m + 1)}
    best = min(costs.values())
    return best, [i for i, c in costs.items() if c == best]
