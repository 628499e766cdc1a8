"""Encryption parameter sets and named profiles."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from fractions import Fraction

import gmpy2

from .errors import ParamsError


@dataclass(frozen=True)
class Params:
    """Ring degree ``n`` (= slot count), plaintext prime ``p``, coefficient
    modulus size ``q_bits`` and the multiplicative-depth budget."""

    n: int
    p: int
    q_bits: int
    depth_budget: Fraction
    security_profile: str = "desk"
    name: str = "custom"
    relin_base_bits: int = 16
    batching: bool = field(default=True, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "depth_budget", Fraction(self.depth_budget))
        self.validate()

    def validate(self) -> None:
        n, p = self.n, self.p
        if n < 2 or n & (n - 1):
            raise ParamsError(f"n={n} is not a power of two")
        if p < 3 or not gmpy2.is_prime(p):
            raise ParamsError(f"p={p} is not an odd prime")
        if self.batching and (p - 1) % (2 * n):
            raise ParamsError(f"p={p} is not 1 mod 2n={2 * n}; slot batching impossible")
        if self.depth_budget <= 0:
            raise ParamsError("depth budget must be positive")
        if self.q_bits < 2 * p.bit_length() + 8:
            raise ParamsError(f"q_bits={self.q_bits} too small for p={p}")
        if self.security_profile not in ("desk", "paper"):
            raise ParamsError(f"unknown security profile {self.security_profile!r}")
        if self.security_profile == "paper" and (n, self.q_bits, p) != PAPER_SHAPE:
            raise ParamsError("paper profile is fixed at n=32768, q_bits=881, p=65537")

    @property
    def log_n(self) -> int:
        return self.n.bit_length() - 1

    @property
    def half_p(self) -> int:
        """Largest magnitude of a signed value: (p-1)/2."""
        return (self.p - 1) // 2

    @property
    def coeff_bytes(self) -> int:
        return (self.q_bits + 7) // 8

    def with_budget(self, budget) -> "Params":
        return replace(self, depth_budget=Fraction(budget))

    def fingerprint(self) -> str:
        text = f"n={self.n};p={self.p};q_bits={self.q_bits};relin={self.relin_base_bits}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def describe(self) -> str:
        return (f"{self.name}: n={self.n} p={self.p} q_bits={self.q_bits} "
                f"budget={self.depth_budget} batching={self.batching}")


PAPER_SHAPE = (32768, 881, 65537)

# q_bits for the BFV desk profile was calibrated with the repeated-squaring
# stress test (tests/test_bfv.py::test_stress_budget_tracks_failure): the
# chain survives 14 ct-ct levels plus the plaintext multiplications used by
# rotations and extraction.
_PROFILES = {
    # real BFV at laptop scale: largest n with 257 = 1 mod 2n
    "desk": dict(n=128, p=257, q_bits=420, depth_budget=12, batching=True),
    # slot-accurate simulation at the larger desk slot count
    "desk-sim": dict(n=8192, p=257, q_bits=420, depth_budget=12, batching=False),
    # tiny ring for fast exhaustive BFV tests
    "tiny": dict(n=8, p=17, q_bits=260, depth_budget=8, batching=True),
    # benchmark profile: wider plaintext space for TPC-H-like sums
    "bench": dict(n=8192, p=65537, q_bits=881, depth_budget=40, batching=True),
    "paper": dict(n=32768, p=65537, q_bits=881, depth_budget=20, batching=True,
                  security_profile="paper"),
}


def profile(name: str, **overrides) -> Params:
    """Return a named parameter profile, optionally overriding fields."""
    try:
        base = dict(_PROFILES[name])
    except KeyError:
        raise ParamsError(f"unknown profile {name!r}; choose from {sorted(_PROFILES)}") from None
    base.update(overrides)
    base.setdefault("name", name)
    return Params(**base)


def profile_names() -> list[str]:
    return sorted(_PROFILES)
