from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lhedb.cost import CostModel, choose_injection, exhaustive_best
from lhedb.rewrite import stage_depth


@given(st.integers(1, 15), st.integers(1, 20), st.integers(0, 60), st.integers(1, 50))
def test_choice_is_earliest_feasible_stage(m, d_s, budget, c_mul):
    i = choose_injection(m, d_s, c_mul, 1000 * c_mul, budget)
    model = CostModel(m, Fraction(d_s), c_mul, 1000 * c_mul, budget)
    assert model.feasible(i)
    assert all(not model.feasible(k) for k in range(i))
    best, argmins = exhaustive_best(model)
    assert model.cost(i) == best and i == min(argmins)


def test_q4_numbers():
    # one join stage of 9 levels, mask already 8 deep, budget 12
    assert stage_depth(257) == 9
    assert choose_injection(1, 9, budget=12 - 8) == 1
    assert choose_injection(1, 9, budget=12) == 0
    assert choose_injection(3, 9, budget=20) == 1


def test_cost_formula():
    model = CostModel(4, Fraction(5), Fraction(2), Fraction(10_000), Fraction(12))
    assert [model.depth_at(i) for i in range(5)] == [20, 15, 10, 5, 0]
    assert [model.cost(i) for i in range(5)] == [10_008, 10_008, 8, 8, 8]


def test_argument_validation():
    with pytest.raises(ValueError):
        choose_injection(0, 9)
    with pytest.raises(ValueError):
        choose_injection(2, 0)
