"""Negacyclic NTT over Z_p and the slot batching map built on it.

Slot ``i`` of an ``n``-slot vector lives at row ``i // (n/2)``, column
``i % (n/2)`` of the usual 2 x n/2 BFV hypercube: it is the evaluation of
the plaintext polynomial at ``zeta ** e`` with ``e = +-5**col mod 2n``.
With this ordering the automorphism ``X -> X**(5**k)`` rotates both rows left
by ``k`` and ``X -> X**(2n-1)`` swaps the rows.
"""

from __future__ import annotations

from functools import lru_cache

import gmpy2
import numpy as np


def primitive_root(p: int) -> int:
    """Smallest generator of the multiplicative group of Z_p."""
    phi = p - 1
    factors = []
    m, f = phi, 2
    while f * f <= m:
        if m % f == 0:
            factors.append(f)
            while m % f == 0:
                m //= f
        f += 1
    if m > 1:
        factors.append(m)
    for g in range(2, p):
        if all(pow(g, phi // f, p) != 1 for f in factors):
            return g
    raise ValueError(f"no primitive root mod {p}")


def root_of_unity(order: int, p: int) -> int:
    if (p - 1) % order:
        raise ValueError(f"Z_{p} has no element of order {order}")
    return pow(primitive_root(p), (p - 1) // order, p)


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


class NegacyclicNTT:
    """Forward/inverse negacyclic transform of length n over Z_p.

    ``forward(a)[k] = a(zeta ** (2k + 1))`` for a primitive 2n-th root zeta.
    """

    def __init__(self, n: int, p: int):
        if n & (n - 1):
            raise ValueError("n must be a power of two")
        self.n, self.p = n, p
        self.zeta = root_of_unity(2 * n, p)
        omega = self.zeta * self.zeta % p
        self._rev = _bit_reverse(n)
        self._omega_pows = self._powers(omega, n)
        self._omega_inv_pows = self._powers(pow(omega, -1, p), n)
        self._twist = self._powers(self.zeta, n)
        self._untwist = self._powers(pow(self.zeta, -1, p), n) * pow(n, -1, p) % p

    def _powers(self, base: int, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        acc = 1
        for i in range(count):
            out[i] = acc
            acc = acc * base % self.p
        return out

    def _cyclic(self, a: np.ndarray, table: np.ndarray) -> np.ndarray:
        n, p = self.n, self.p
        a = a[self._rev]
        m = 1
        while m < n:
            tw = table[np.arange(m) * (n // (2 * m))]
            blocks = a.reshape(-1, 2 * m)
            u = blocks[:, :m]
            v = blocks[:, m:] * tw % p
            a = np.concatenate(((u + v) % p, (u - v) % p), axis=1).ravel()
            m *= 2
        return a

    def forward(self, coeffs) -> np.ndarray:
        a = np.asarray(coeffs, dtype=np.int64) % self.p
        return self._cyclic(a * self._twist % self.p, self._omega_pows)

    def inverse(self, evals) -> np.ndarray:
        a = np.asarray(evals, dtype=np.int64) % self.p
        return self._cyclic(a, self._omega_inv_pows) * self._untwist % self.p

    def convolve(self, a, b) -> np.ndarray:
        """Product of two polynomials in Z_p[X]/(X^n + 1)."""
        return self.inverse(self.forward(a) * self.forward(b) % self.p)


class BatchEncoder:
    """Maps n slot values mod p to a plaintext polynomial and back."""

    def __init__(self, n: int, p: int):
        self.n, self.p = n, p
        self.ntt = NegacyclicNTT(n, p)
        half = n // 2
        two_n = 2 * n
        index = np.empty(n, dtype=np.int64)
        e = 1
        for col in range(half):
            index[col] = (e - 1) // 2
            index[half + col] = (two_n - e - 1) // 2
            e = e * 5 % two_n
        if half == 0:
            index[0] = 0
        # slot i <-> evaluation index[i] of the forward transform
        self.slot_to_eval = index

    def encode(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.int64)
        if v.ndim != 1 or len(v) > self.n:
            raise ValueError(f"expected at most {self.n} values")
        if len(v) and (v.min() < 0 or v.max() >= self.p):
            raise ValueError(f"slot values must lie in [0, {self.p})")
        slots = np.zeros(self.n, dtype=np.int64)
        slots[: len(v)] = v
        evals = np.empty(self.n, dtype=np.int64)
        evals[self.slot_to_eval] = slots
        return self.ntt.inverse(evals)

    def decode(self, coeffs) -> np.ndarray:
        evals = self.ntt.forward(coeffs)
        return evals[self.slot_to_eval]


def galois_row_element(k: int, n: int) -> int:
    """Galois element rotating both hypercube rows left by k."""
    return pow(5, k, 2 * n)


def galois_swap_element(n: int) -> int:
    return 2 * n - 1


@lru_cache(maxsize=None)
def encoder(n: int, p: int) -> BatchEncoder:
    return BatchEncoder(n, p)


