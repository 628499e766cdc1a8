"""Arithmetic in Z_q[X]/(X^n + 1) for a single multi-precision modulus q.

Polynomials are plain Python lists of n integers in [0, q).  Products use
Kronecker substitution: both operands are packed into one big integer with
wide enough coefficient slots, multiplied once by GMP, and unpacked.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import gmpy2

Poly = list


class PolyRing:
    def __init__(self, n: int, q: int):
        self.n = n
        self.q = q
        self.qbits = q.bit_length()

    # -- packing ----------------------------------------------------------
    @staticmethod
    def slot_bytes(bound_bits: int) -> int:
        return (bound_bits + 8) // 8

    @staticmethod
    def pack(coeffs: Sequence[int], width: int):
        raw = b"".join(int(c).to_bytes(width, "little") for c in coeffs)
        return gmpy2.mpz(int.from_bytes(raw, "little"))

    def _unpack_fold(self, value, width: int) -> Poly:
        n, q = self.n, self.q
        raw = int(value).to_bytes(2 * n * width, "little")
        lo = [int.from_bytes(raw[i * width:(i + 1) * width], "little") for i in range(n)]
        hi = [int.from_bytes(raw[(i + n) * width:(i + n + 1) * width], "little") for i in range(n)]
        return [(a - b) % q for a, b in zip(lo, hi)]

    def _unpack_signed(self, value, width: int) -> list[int]:
        """Negacyclic fold without reducing mod q (used before rescaling)."""
        n = self.n
        raw = int(value).to_bytes(2 * n * width, "little")
        lo = [int.from_bytes(raw[i * width:(i + 1) * width], "little") for i in range(n)]
        hi = [int.from_bytes(raw[(i + n) * width:(i + n + 1) * width], "little") for i in range(n)]
        return [a - b for a, b in zip(lo, hi)]

    def product_width(self, abits: int, bbits: int, terms: int = 1) -> int:
        bound = abits + bbits + self.n.bit_length() + terms.bit_length() + 1
        return self.slot_bytes(bound)

    # -- linear ops ---------------------------------------------------------
    def add(self, a: Poly, b: Poly) -> Poly:
        q = self.q
        return [(x + y) % q for x, y in zip(a, b)]

    def sub(self, a: Poly, b: Poly) -> Poly:
        q = self.q
        return [(x - y) % q for x, y in zip(a, b)]

    def neg(self, a: Poly) -> Poly:
        q = self.q
        return [(-x) % q for x in a]

    def scalar(self, a: Poly, c: int) -> Poly:
        q = self.q
        return [x * c % q for x in a]

    def from_signed(self, coeffs: Iterable[int]) -> Poly:
        q = self.q
        return [int(c) % q for c in coeffs]

    def centered(self, a: Poly) -> list[int]:
        q, half = self.q, self.q // 2
        return [x - q if x > half else x for x in a]

    # -- products -----------------------------------------------------------
    def mul(self, a: Poly, b: Poly) -> Poly:
        w = self.product_width(self.qbits, self.qbits)
        return self._unpack_fold(self.pack(a, w) * self.pack(b, w), w)

    def mul_small(self, a: Poly, small: "SmallPoly") -> Poly:
        """a * s for a signed polynomial s with small coefficients."""
        w = self.product_width(self.qbits, small.bits)
        pa = self.pack(a, w)
        pos = self._unpack_signed(pa * small.packed_pos(w), w)
        neg = self._unpack_signed(pa * small.packed_neg(w), w)
        q = self.q
        return [(x - y) % q for x, y in zip(pos, neg)]

    def mul_small_signed(self, a: Poly, small: "SmallPoly") -> list[int]:
        """Like :meth:`mul_small` but without the final reduction mod q."""
        w = self.product_width(self.qbits, small.bits)
        pa = self.pack(a, w)
        pos = self._unpack_signed(pa * small.packed_pos(w), w)
        neg = self._unpack_signed(pa * small.packed_neg(w), w)
        return [x - y for x, y in zip(pos, neg)]

    def automorphism(self, a: Poly, g: int) -> Poly:
        """a(X) -> a(X^g) for odd g."""
        n, q = self.n, self.q
        out = [0] * n
        two_n = 2 * n
        for i, c in enumerate(a):
            j = i * g % two_n
            if j < n:
                out[j] = c
            else:
                out[j - n] = (-c) % q
        return out


class SmallPoly:
    """A signed polynomial with small coefficients, split into its positive
    and negative parts so Kronecker packing stays non-negative."""

    def __init__(self, coeffs: Sequence[int]):
        self.coeffs = [int(c) for c in coeffs]
        self.pos = [c if c > 0 else 0 for c in self.coeffs]
        self.neg = [-c if c < 0 else 0 for c in self.coeffs]
        self.bits = max((abs(c) for c in self.coeffs), default=0).bit_length() or 1
        self._cache: dict = {}

    def packed_pos(self, width: int):
        key = ("p", width)
        if key not in self._cache:
            self._cache[key] = PolyRing.pack(self.pos, width)
        return self._cache[key]

    def packed_neg(self, width: int):
        key = ("n", width)
        if key not in self._cache:
            self._cache[key] = PolyRing.pack(self.neg, width)
        return self._cache[key]
