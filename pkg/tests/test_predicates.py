from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lhedb import predicates as pr
from lhedb.params import Params
from lhedb.vector import SimBackend

P = 257
N = 16
PARAMS = Params(n=N, p=P, q_bits=420, depth_budget=12, batching=False)
small = st.lists(st.integers(-64, 64), min_size=N, max_size=N)
bits = st.lists(st.integers(0, 1), min_size=N, max_size=N)


def signed(v):
    v = np.asarray(v) % P
    return np.where(v > P // 2, v - P, v)


@pytest.fixture(scope="module")
def be():
    return SimBackend(PARAMS)


@given(small, small)
def test_comparisons_match_integer_order(x, y):
    be = SimBackend(PARAMS)
    a, b = be.encrypt(x), be.encrypt(y)
    xa, ya = np.array(x), np.array(y)
    assert np.array_equal(be.decrypt(pr.eq(a, b)), (xa == ya).astype(int))
    assert np.array_equal(be.decrypt(pr.lt(a, b)), (xa < ya).astype(int))
    assert np.array_equal(be.decrypt(pr.gt(a, b)), (xa > ya).astype(int))
    assert np.array_equal(be.decrypt(pr.leq(a, b)), (xa <= ya).astype(int))
    assert np.array_equal(be.decrypt(pr.geq(a, b)), (xa >= ya).astype(int))


@given(small, st.integers(-64, 64))
def test_constant_operands_either_side(x, c):
    be = SimBackend(PARAMS)
    a = be.encrypt(x)
    xa = np.array(x)
    assert np.array_equal(be.decrypt(pr.lt(a, c)), (xa < c).astype(int))
    assert np.array_equal(be.decrypt(pr.lt(c, a)), (c < xa).astype(int))
    assert np.array_equal(be.decrypt(pr.eq(c, a)), (xa == c).astype(int))


@given(small, st.integers(-64, 64))
def test_public_range_trims_terms_without_changing_result(x, c):
    be = SimBackend(PARAMS)
    a = be.encrypt(x)
    full = pr.lt(a, c)
    trimmed = pr.lt(a, c, diff_range=(-64 - c, 64 - c))
    assert np.array_equal(be.decrypt(full), be.decrypt(trimmed))
    assert trimmed.depth <= full.depth


@given(small, st.integers(-8, 8), st.integers(0, 12))
def test_between_strategies_agree(x, lo, width):
    be = SimBackend(PARAMS)
    a = be.encrypt(x)
    hi = lo + width
    want = ((np.array(x) >= lo) & (np.array(x) <= hi)).astype(int)
    r = pr.between(a, lo, hi, "range")
    q = pr.between(a, lo, hi, "product")
    assert np.array_equal(be.decrypt(r), want)
    assert np.array_equal(be.decrypt(q), want)
    k = width + 1
    assert r.depth == 8 + Fraction((k - 1).bit_length(), P)
    assert q.depth == 9


@given(small, st.sets(st.integers(-70, 70), min_size=1, max_size=6))
def test_in_set(x, members):
    be = SimBackend(PARAMS)
    got = be.decrypt(pr.in_set(be.encrypt(x), members))
    assert np.array_equal(got, np.isin(x, list(members)).astype(int))


@given(bits, bits)
def test_boolean_algebra(a, b):
    be = SimBackend(PARAMS)
    ea, eb = be.encrypt(a), be.encrypt(b)
    aa, ba = np.array(a), np.array(b)
    assert np.array_equal(be.decrypt(pr.bool_and(ea, eb)), aa & ba)
    assert np.array_equal(be.decrypt(pr.bool_or(ea, eb)), aa | ba)
    assert np.array_equal(be.decrypt(pr.bool_not(ea)), 1 - aa)
    assert pr.bool_or(ea, eb).depth == 1


def test_depths_of_fresh_predicates(be):
    x, y = be.encrypt(range(N)), be.encrypt(range(N))
    assert pr.eq(x, y).depth == 8
    assert pr.lt(x, y).depth == 8 + Fraction(7, P)     # 128 terms
    assert pr.lt(x, 5, diff_range=(-5, 10)).depth == 8 + Fraction(3, P)   # 5 terms
    assert pr.in_set(x, [1, 2, 3]).depth == 8 + Fraction(2, P)


def test_field_wrap_semantics(be):
    """lt tests the sign of x - y in Z_p; outside the non-wrapping range the
    difference wraps (documented behaviour)."""
    x, y = be.encrypt([100] * N), be.encrypt([-100] * N)
    assert be.decrypt(pr.lt(x, y))[0] == int(signed(200)[()] < 0)


def test_argument_errors(be):
    x = be.encrypt([1])
    with pytest.raises(ValueError):
        pr.in_set(x, [])
    with pytest.raises(ValueError):
        pr.between(x, 3, 2)
    with pytest.raises(ValueError):
        pr.between(x, 1, 2, strategy="bogus")
    with pytest.raises(TypeError):
        pr.diff(1, 2)
    assert be.decrypt(pr.between(x, 1, 5, "range", value_range=(10, 20))).sum() == 0
