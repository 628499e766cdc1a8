"""SIMD homomorphic vector interface and the slot-simulation backend.

Every operator in the engine is written against the functions in this module
(``he_add``, ``he_mul``, ``rotate_sum`` ...).  They do the depth bookkeeping
once, and dispatch the slot arithmetic to a backend: :class:`SimBackend`
tracks plaintext slots directly, :class:`lhedb.bfv.BfvEvaluator` works on real
ciphertexts.
"""

from __future__ import annotations

import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from . import depth as dp
from .errors import BackendMismatch, DepthBudgetExceeded
from .params import Params


class PlainVector:
    """n public slot values reduced mod p."""

    __slots__ = ("values", "p", "_key")

    def __init__(self, values, p: int, n: int | None = None):
        v = np.asarray(values, dtype=np.int64)
        if v.ndim != 1:
            raise ValueError("plain vector must be one-dimensional")
        if n is not None and len(v) != n:
            raise ValueError(f"plain vector has {len(v)} slots, expected {n}")
        v = v % p
        v.setflags(write=False)
        self.values = v
        self.p = p
        self._key = None

    def __len__(self):
        return len(self.values)

    @property
    def key(self) -> bytes:
        if self._key is None:
            self._key = self.values.tobytes()
        return self._key

    def __eq__(self, other):
        return isinstance(other, PlainVector) and self.p == other.p and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        head = ", ".join(str(x) for x in self.values[:8])
        return f"PlainVector([{head}{', ...' if len(self) > 8 else ''}], p={self.p})"


class OpTrace:
    """Thread-safe counters of primitive operations, bucketed by category."""

    def __init__(self):
        self.counts: Counter = Counter()
        self._lock = threading.Lock()
        self._local = threading.local()

    @contextmanager
    def category(self, name: str):
        prev = getattr(self._local, "cat", "other")
        self._local.cat = name
        try:
            yield
        finally:
            self._local.cat = prev

    def record(self, op: str, times: int = 1) -> None:
        cat = getattr(self._local, "cat", "other")
        with self._lock:
            self.counts[(cat, op)] += times

    def by_op(self) -> Counter:
        out: Counter = Counter()
        for (_, op), c in self.counts.items():
            out[op] += c
        return out

    def by_category(self) -> Counter:
        out: Counter = Counter()
        for (cat, _), c in self.counts.items():
            out[cat] += c
        return out

    def total(self) -> int:
        return sum(self.counts.values())


class Backend:
    """Slot arithmetic on backend-specific payloads.

    Subclasses implement the underscore primitives; depth bookkeeping and
    budget checks live in the module-level functions.
    """

    tag = "abstract"

    def __init__(self, params: Params, enforce_budget: bool = True):
        self.params = params
        self.enforce_budget = enforce_budget
        self.trace: OpTrace | None = None
        self._plain_cache: dict = {}
        self._plain_lock = threading.Lock()

    # -- primitives -------------------------------------------------------
    def _add(self, a, b): raise NotImplementedError
    def _sub(self, a, b): raise NotImplementedError
    def _neg(self, a): raise NotImplementedError
    def _mul(self, a, b): raise NotImplementedError
    def _plain_add(self, a, m: PlainVector): raise NotImplementedError
    def _plain_mul(self, a, m: PlainVector): raise NotImplementedError
    def _rotate(self, a, k: int): raise NotImplementedError

    def _rotate_in_sum(self, a, k: int):
        """Rotation used inside rotate-sum; backends may exploit that the
        input is already periodic at this point."""
        return self._rotate(a, k)

    def encrypt(self, values) -> "HEVector":
        raise NotImplementedError

    def wrap(self, data, depth=dp.ZERO, fresh: bool = False) -> "HEVector":
        return HEVector(self, data, Fraction(depth), fresh)

    # -- helpers ----------------------------------------------------------
    def plain(self, values) -> PlainVector:
        return PlainVector(values, self.params.p, self.params.n)

    def cached_plain(self, key, build) -> PlainVector:
        with self._plain_lock:
            hit = self._plain_cache.get(key)
        if hit is None:
            hit = self.plain(build())
            with self._plain_lock:
                self._plain_cache[key] = hit
        return hit

    def const(self, c: int) -> PlainVector:
        n, p = self.params.n, self.params.p
        return self.cached_plain(("const", c % p), lambda: np.full(n, c % p, dtype=np.int64))

    def basis(self, i: int) -> PlainVector:
        n = self.params.n

        def build():
            v = np.zeros(n, dtype=np.int64)
            v[i] = 1
            return v
        return self.cached_plain(("basis", i), build)

    def count(self, op: str, times: int = 1) -> None:
        if self.trace is not None:
            self.trace.record(op, times)

    def compatible(self, other: "Backend") -> bool:
        return other is self or (type(other) is type(self) and other.params == self.params
                                 and other.key_id == self.key_id)

    @property
    def key_id(self):
        return None


@dataclass(frozen=True, eq=False)
class HEVector:
    """An encrypted (or simulated) vector of n slots mod p with its depth."""

    backend: Backend
    data: Any
    depth: Fraction
    fresh: bool = False

    @property
    def params(self) -> Params:
        return self.backend.params

    @property
    def n(self) -> int:
        return self.backend.params.n

    def __repr__(self):
        return f"HEVector({self.backend.tag}, depth={dp.fmt(self.depth)})"


class SimBackend(Backend):
    """Plaintext slot simulation: the payload is the slot vector itself."""

    tag = "sim"

    def encrypt(self, values) -> HEVector:
        n, p = self.params.n, self.params.p
        v = np.zeros(n, dtype=np.int64)
        vals = np.asarray(values, dtype=np.int64)
        if len(vals) > n:
            raise ValueError(f"at most {n} values per vector")
        v[: len(vals)] = vals % p
        v.setflags(write=False)
        return HEVector(self, v, dp.ZERO, True)

    def decrypt(self, vec: HEVector) -> np.ndarray:
        return np.array(vec.data, dtype=np.int64)

    def _frozen(self, v):
        v.setflags(write=False)
        return v

    def _add(self, a, b):
        return self._frozen((a + b) % self.params.p)

    def _sub(self, a, b):
        return self._frozen((a - b) % self.params.p)

    def _neg(self, a):
        return self._frozen((-a) % self.params.p)

    def _mul(self, a, b):
        return self._frozen(a * b % self.params.p)

    def _plain_add(self, a, m):
        return self._frozen((a + m.values) % self.params.p)

    def _plain_mul(self, a, m):
        return self._frozen(a * m.values % self.params.p)

    def _rotate(self, a, k):
        return self._frozen(np.roll(a, -k))


# -- operations ---------------------------------------------------------------

def _check_pair(a: HEVector, b: HEVector) -> Backend:
    if not a.backend.compatible(b.backend):
        raise BackendMismatch(f"{a.backend.tag}/{b.backend.tag} operands with different params or keys")
    return a.backend


def _check_plain(a: HEVector, m: PlainVector) -> None:
    if len(m) != a.n:
        raise ValueError(f"plain operand has {len(m)} slots, vector has {a.n}")
    if m.p != a.params.p:
        raise BackendMismatch("plain operand reduced mod a different p")


def _result(backend: Backend, data, depth: Fraction) -> HEVector:
    if backend.enforce_budget and depth > backend.params.depth_budget:
        raise DepthBudgetExceeded(depth, backend.params.depth_budget)
    return HEVector(backend, data, depth)


def he_add(a: HEVector, b: HEVector) -> HEVector:
    be = _check_pair(a, b)
    be.count("add")
    return _result(be, be._add(a.data, b.data), dp.add_depth(a.depth, b.depth, be.params.p))


def he_sub(a: HEVector, b: HEVector) -> HEVector:
    be = _check_pair(a, b)
    be.count("sub")
    return _result(be, be._sub(a.data, b.data), dp.add_depth(a.depth, b.depth, be.params.p))


def he_neg(a: HEVector) -> HEVector:
    a.backend.count("neg")
    return HEVector(a.backend, a.backend._neg(a.data), a.depth)


def he_mul(a: HEVector, b: HEVector) -> HEVector:
    be = _check_pair(a, b)
    be.count("mul")
    return _result(be, be._mul(a.data, b.data), dp.mul_depth(a.depth, b.depth))


def he_plain_mul(a: HEVector, m: PlainVector) -> HEVector:
    _check_plain(a, m)
    a.backend.count("plain_mul")
    return HEVector(a.backend, a.backend._plain_mul(a.data, m), a.depth)


def he_plain_add(a: HEVector, m: PlainVector) -> HEVector:
    _check_plain(a, m)
    a.backend.count("plain_add")
    return HEVector(a.backend, a.backend._plain_add(a.data, m), a.depth)


def he_plain_sub(a: HEVector, m: PlainVector) -> HEVector:
    """a - m, slot-wise."""
    _check_plain(a, m)
    neg = PlainVector(-m.values, m.p)
    a.backend.count("plain_add")
    return HEVector(a.backend, a.backend._plain_add(a.data, neg), a.depth)


def he_plain_rsub(m: PlainVector, a: HEVector) -> HEVector:
    """m - a, slot-wise (e.g. the ``1 - z`` step of equality)."""
    return he_plain_add(he_neg(a), m)


def he_add_const(a: HEVector, c: int) -> HEVector:
    return he_plain_add(a, a.backend.const(c))


def he_mul_const(a: HEVector, c: int) -> HEVector:
    return he_plain_mul(a, a.backend.const(c))


def he_rotate(a: HEVector, k: int) -> HEVector:
    """Left rotation: slot i of the result is slot (i + k) mod n of ``a``."""
    n = a.n
    if not 0 <= k < n:
        raise ValueError(f"rotation offset {k} outside [0, {n})")
    if k == 0:
        return a
    a.backend.count("rotate")
    return HEVector(a.backend, a.backend._rotate(a.data, k), a.depth)


def extract(a: HEVector, i: int) -> HEVector:
    """Keep slot i, zero every other slot (one plaintext multiplication)."""
    if not 0 <= i < a.n:
        raise IndexError(f"slot {i} outside [0, {a.n})")
    return he_plain_mul(a, a.backend.basis(i))


def rotate_sum(a: HEVector) -> HEVector:
    """Every slot of the result holds the sum of all slots of ``a``.

    log2(n) rotate-and-add steps with shifts n/2, n/4, ..., 1.
    """
    be = a.backend
    v = a
    shift = a.n // 2
    while shift >= 1:
        be.count("rotate")
        rot = HEVector(be, be._rotate_in_sum(v.data, shift), v.depth)
        v = he_add(v, rot)
        shift //= 2
    return v


def broadcast(a: HEVector, i: int) -> HEVector:
    """Replicate slot i of ``a`` into every slot."""
    return rotate_sum(extract(a, i))


def depth_of(a: HEVector) -> Fraction:
    return a.depth


def sum_balanced(vectors: Sequence[HEVector]) -> HEVector:
    """Pairwise (divide-and-conquer) sum; depth grows by ceil(log2 k)/p."""
    level = list(vectors)
    if not level:
        raise ValueError("empty sum")
    while len(level) > 1:
        nxt = [he_add(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def product_balanced(vectors: Sequence[HEVector]) -> HEVector:
    """Depth-aware product: always multiplies the two shallowest operands."""
    slots = list(vectors)
    if not slots:
        raise ValueError("empty product")
    for ia, ib in dp.product_order([v.depth for v in slots]):
        slots.append(he_mul(slots[ia], slots[ib]))
    return slots[-1]


def he_pow(a: HEVector, e: int) -> HEVector:
    """a**e by squaring; the selected powers are combined depth-aware."""
    if e < 1:
        raise ValueError("exponent must be positive")
    chosen = []
    cur = a
    top = e.bit_length() - 1
    for bit in range(top + 1):
        if e >> bit & 1:
            chosen.append(cur)
        if bit < top:
            cur = he_mul(cur, cur)
    return product_balanced(chosen)
