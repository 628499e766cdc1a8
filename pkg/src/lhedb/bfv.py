"""Textbook BFV over a single multi-precision modulus q.

Keys are split by role: :class:`SecretKey` stays with the trusted client,
:class:`PublicKey` and :class:`EvalKeys` (relinearization and Galois keys)
are all the untrusted evaluator ever sees.

Rotations follow the slot layout of :mod:`lhedb.ntt`: the native Galois
automorphisms rotate the two hypercube rows independently or swap them, and a
full n-slot rotation is assembled from those with two plaintext masks.
"""

from __future__ import annotations

import io
import math
import secrets
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import gmpy2
import numpy as np

from .errors import CatalogError, DecryptionError, MissingGaloisKey, ParamsError
from .ntt import encoder, galois_row_element, galois_swap_element
from .params import Params
from .ring import PolyRing, SmallPoly
from .vector import Backend, HEVector, PlainVector

CT_MAGIC = b"NSHE"
KEY_MAGIC = b"NSHK"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHIHQB")


@lru_cache(maxsize=None)
def coefficient_modulus(q_bits: int) -> int:
    """Largest prime below 2**q_bits."""
    q = int(gmpy2.prev_prime(1 << q_bits))
    assert q.bit_length() == q_bits
    return q


class BfvContext:
    """Precomputed ring, encoder and constants for one parameter set."""

    def __init__(self, params: Params):
        if not params.batching:
            raise ParamsError(f"{params.name}: p={params.p} does not support slot batching (p != 1 mod 2n)")
        self.params = params
        self.n, self.t = params.n, params.p
        self.q = coefficient_modulus(params.q_bits)
        self.delta = self.q // self.t
        self.ring = PolyRing(self.n, self.q)
        self.encoder = encoder(self.n, self.t)
        self.base_bits = params.relin_base_bits
        self.digits = -(-params.q_bits // self.base_bits)
        self.half = self.n // 2
        self.row_elements = [galois_row_element(1 << j, self.n) for j in range(max(self.half.bit_length() - 1, 0))]
        self.swap_element = galois_swap_element(self.n)

    @property
    def galois_elements(self) -> list[int]:
        return self.row_elements + [self.swap_element]

    def encode_small(self, values) -> SmallPoly:
        """Slot values -> plaintext polynomial with centered coefficients."""
        coeffs = self.encoder.encode(values)
        t, half = self.t, self.t // 2
        return SmallPoly([int(c) - t if c > half else int(c) for c in coeffs])

    # -- sampling -----------------------------------------------------------
    def ternary(self, rng) -> list[int]:
        return [int(x) for x in rng.integers(-1, 2, self.n)]

    def error(self, rng) -> list[int]:
        # centered binomial with eta = 21: sigma = sqrt(10.5) ~ 3.24
        return [int(x) for x in rng.binomial(42, 0.5, self.n) - 21]

    def uniform(self, rng) -> list[int]:
        width = (self.q.bit_length() + 7) // 8 + 8
        raw = rng.bytes(self.n * width)
        q = self.q
        return [int.from_bytes(raw[i * width:(i + 1) * width], "little") % q for i in range(self.n)]


@lru_cache(maxsize=None)
def context(params: Params) -> BfvContext:
    return BfvContext(params)


def _rng(seed):
    if seed is None:
        seed = secrets.randbits(128)
    return np.random.default_rng(seed)


# -- keys -----------------------------------------------------------------------

@dataclass(frozen=True)
class SecretKey:
    params: Params
    s: tuple
    key_id: int

    @property
    def small(self) -> SmallPoly:
        return _small_cache(self)


@lru_cache(maxsize=16)
def _small_cache(sk: SecretKey) -> SmallPoly:
    return SmallPoly(sk.s)


@dataclass(frozen=True)
class PublicKey:
    params: Params
    b: list
    a: list
    key_id: int


class KeySwitchKey:
    """Digit-decomposed encryptions of ``base**i * s'`` under s."""

    def __init__(self, k0: list, k1: list):
        self.k0 = k0
        self.k1 = k1
        self._packed: dict = {}

    def packed(self, width: int):
        hit = self._packed.get(width)
        if hit is None:
            hit = ([PolyRing.pack(k, width) for k in self.k0],
                   [PolyRing.pack(k, width) for k in self.k1])
            self._packed[width] = hit
        return hit


@dataclass
class EvalKeys:
    params: Params
    relin: KeySwitchKey
    galois: dict
    key_id: int


def _switch_key(ctx: BfvContext, sk: SecretKey, target: list[int], rng) -> KeySwitchKey:
    ring = ctx.ring
    k0, k1 = [], []
    target_q = ring.from_signed(target)
    for i in range(ctx.digits):
        a = ctx.uniform(rng)
        e = ring.from_signed(ctx.error(rng))
        body = ring.neg(ring.add(ring.mul_small(a, sk.small), e))
        k0.append(ring.add(body, ring.scalar(target_q, 1 << (ctx.base_bits * i))))
        k1.append(a)
    return KeySwitchKey(k0, k1)


def _poly_mul_signed(a: list[int], b: list[int], n: int) -> list[int]:
    """Exact negacyclic product of two small signed polynomials."""
    full = np.convolve(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))
    out = full[:n].copy()
    out[: len(full) - n] -= full[n:]
    return [int(x) for x in out]


def keygen_public(params: Params, seed=None) -> tuple[SecretKey, PublicKey]:
    """Secret and public key only (no evaluation keys)."""
    sk, pk, _ = _keygen_base(params, seed)
    return sk, pk


def _keygen_base(params: Params, seed):
    ctx = context(params)
    rng = _rng(seed)
    key_id = int(rng.integers(1, 2**63))
    sk = SecretKey(params, tuple(ctx.ternary(rng)), key_id)
    ring = ctx.ring
    a = ctx.uniform(rng)
    e = ring.from_signed(ctx.error(rng))
    b = ring.neg(ring.add(ring.mul_small(a, sk.small), e))
    return sk, PublicKey(params, b, a, key_id), rng


def keygen(params: Params, seed=None) -> tuple[SecretKey, PublicKey, EvalKeys]:
    """Generate secret, public, relinearization and Galois keys."""
    sk, pk, rng = _keygen_base(params, seed)
    ctx = context(params)
    s = list(sk.s)
    relin = _switch_key(ctx, sk, _poly_mul_signed(s, s, ctx.n), rng)
    galois = {}
    for g in ctx.galois_elements:
        rotated = ctx.ring.centered(ctx.ring.automorphism(ctx.ring.from_signed(s), g))
        galois[g] = _switch_key(ctx, sk, rotated, rng)
    return sk, pk, EvalKeys(params, relin, galois, sk.key_id)


# -- encryption -------------------------------------------------------------------

def encrypt_poly(pk: PublicKey, m: SmallPoly, rng) -> tuple[list, list]:
    ctx = context(pk.params)
    ring = ctx.ring
    u = SmallPoly(ctx.ternary(rng))
    e1 = ctx.error(rng)
    e2 = ctx.error(rng)
    delta, q = ctx.delta, ctx.q
    c0 = ring.mul_small(pk.b, u)
    c0 = [(x + e + delta * mi) % q for x, e, mi in zip(c0, e1, m.coeffs)]
    c1 = ring.mul_small(pk.a, u)
    c1 = [(x + e) % q for x, e in zip(c1, e2)]
    return c0, c1


def encrypt(pk: PublicKey, values, rng=None) -> tuple[list, list]:
    ctx = context(pk.params)
    return encrypt_poly(pk, ctx.encode_small(values), rng if rng is not None else _rng(None))


def _phase(sk: SecretKey, ct) -> list[int]:
    ctx = context(sk.params)
    ring = ctx.ring
    if len(ct) != 2:
        raise DecryptionError(f"expected a 2-polynomial ciphertext, got {len(ct)}")
    c0, c1 = ct
    return ring.add(c0, ring.mul_small(c1, sk.small))


def decrypt_poly(sk: SecretKey, ct) -> np.ndarray:
    ctx = context(sk.params)
    t, q = ctx.t, ctx.q
    w = _phase(sk, ct)
    return np.array([((2 * t * x + q) // (2 * q)) % t for x in w], dtype=np.int64)


def decrypt(sk: SecretKey, ct) -> np.ndarray:
    return context(sk.params).encoder.decode(decrypt_poly(sk, ct))


@dataclass(frozen=True)
class NoiseBudgetReading:
    """Remaining noise budget: log2 of q over twice the current noise."""

    bits: float

    @property
    def whole_bits(self) -> int:
        return max(0, math.floor(self.bits))

    @property
    def exhausted(self) -> bool:
        return self.whole_bits == 0


def noise_budget(sk: SecretKey, ct) -> NoiseBudgetReading:
    ctx = context(sk.params)
    t, q = ctx.t, ctx.q
    worst = 0
    for x in _phase(sk, ct):
        tw = t * x
        err = abs(tw - q * ((2 * tw + q) // (2 * q)))
        worst = max(worst, err)
    if worst == 0:
        return NoiseBudgetReading(float(ctx.params.q_bits))
    return NoiseBudgetReading(math.log2(q) - math.log2(2 * worst))


# -- evaluator ----------------------------------------------------------------------

class BfvEvaluator(Backend):
    """Homomorphic evaluation with public material only."""

    tag = "bfv"

    def __init__(self, params: Params, eval_keys: EvalKeys, public_key: PublicKey | None = None,
                 enforce_budget: bool = True, seed=None):
        super().__init__(params, enforce_budget)
        if eval_keys.params != params:
            raise ParamsError("evaluation keys belong to a different parameter set")
        self.ctx = context(params)
        self.keys = eval_keys
        self.public_key = public_key
        self._rng = _rng(seed)
        self._small_cache: dict = {}

    @property
    def key_id(self):
        return self.keys.key_id

    def encrypt(self, values) -> HEVector:
        if self.public_key is None:
            raise ParamsError("this evaluator has no public key to encrypt with")
        return self.wrap(encrypt(self.public_key, values, self._rng), fresh=True)

    # plaintext operands are encoded once and cached by slot content
    def _small(self, m: PlainVector) -> SmallPoly:
        hit = self._small_cache.get(m.key)
        if hit is None:
            hit = self.ctx.encode_small(m.values)
            self._small_cache[m.key] = hit
        return hit

    def _add(self, a, b):
        r = self.ctx.ring
        return (r.add(a[0], b[0]), r.add(a[1], b[1]))

    def _sub(self, a, b):
        r = self.ctx.ring
        return (r.sub(a[0], b[0]), r.sub(a[1], b[1]))

    def _neg(self, a):
        r = self.ctx.ring
        return (r.neg(a[0]), r.neg(a[1]))

    def _plain_add(self, a, m):
        ctx = self.ctx
        q, delta = ctx.q, ctx.delta
        small = self._small(m)
        return ([(x + delta * c) % q for x, c in zip(a[0], small.coeffs)], a[1])

    def _plain_mul(self, a, m):
        small = self._small(m)
        r = self.ctx.ring
        return (r.mul_small(a[0], small), r.mul_small(a[1], small))

    def _mul(self, a, b):
        ctx = self.ctx
        ring, q, t = ctx.ring, ctx.q, ctx.t
        w = ring.product_width(ctx.q.bit_length() + 1, ctx.q.bit_length() + 1)
        pack = PolyRing.pack
        a0, a1 = pack(a[0], w), pack(a[1], w)
        b0, b1 = pack(b[0], w), pack(b[1], w)
        d0 = a0 * b0
        d2 = a1 * b1
        d1 = (a0 + a1) * (b0 + b1) - d0 - d2
        two_q = 2 * q

        def rescale(prod):
            return [((2 * t * x + q) // two_q) % q for x in ring._unpack_signed(prod, w)]

        c0, c1, c2 = rescale(d0), rescale(d1), rescale(d2)
        k0, k1 = self._key_switch(c2, self.keys.relin)
        return (ring.add(c0, k0), ring.add(c1, k1))

    def _key_switch(self, c: list[int], key: KeySwitchKey):
        ctx = self.ctx
        ring = ctx.ring
        bits, count = ctx.base_bits, ctx.digits
        w = ring.product_width(ctx.q.bit_length(), bits, count)
        p0, p1 = key.packed(w)
        mask = (1 << bits) - 1
        acc0 = acc1 = 0
        for i in range(count):
            shift = bits * i
            digit = PolyRing.pack([(x >> shift) & mask for x in c], w)
            acc0 += digit * p0[i]
            acc1 += digit * p1[i]
        return ring._unpack_fold(acc0, w), ring._unpack_fold(acc1, w)

    def _galois(self, a, g: int):
        key = self.keys.galois.get(g)
        if key is None:
            raise MissingGaloisKey(f"no Galois key for element {g}")
        ring = self.ctx.ring
        c0 = ring.automorphism(a[0], g)
        c1 = ring.automorphism(a[1], g)
        k0, k1 = self._key_switch(c1, key)
        return (ring.add(c0, k0), k1)

    def _row_rotate(self, a, k: int):
        """Rotate both hypercube rows left by k (0 <= k < n/2)."""
        j = 0
        while k:
            if k & 1:
                a = self._galois(a, self.ctx.row_elements[j])
            k >>= 1
            j += 1
        return a

    def _swap(self, a):
        return self._galois(a, self.ctx.swap_element)

    def _row_masks(self, k: int):
        half = self.ctx.half

        def build(inner: bool):
            col = np.arange(self.params.n) % half
            return ((col < half - k) == inner).astype(np.int64)
        keep = self.cached_plain(("rowmask", k, True), lambda: build(True))
        wrap = self.cached_plain(("rowmask", k, False), lambda: build(False))
        return keep, wrap

    def _rotate(self, a, k):
        half = self.ctx.half
        if k >= half:
            a = self._swap(a)
            k -= half
        if k == 0:
            return a
        rot = self._row_rotate(a, k)
        keep, wrap = self._row_masks(k)
        # slots whose source crossed a row boundary come from the other row
        return self._add(self._plain_mul(rot, keep), self._plain_mul(self._swap(rot), wrap))

    def _rotate_in_sum(self, a, k):
        # rotate-sum starts at n/2 (a row swap); afterwards both rows are
        # equal, so a row rotation is already the full-cycle rotation
        if k == self.ctx.half:
            return self._swap(a)
        return self._row_rotate(a, k)


class BfvClient:
    """Trusted-side helper holding the secret key."""

    def __init__(self, sk: SecretKey):
        self.sk = sk
        self.params = sk.params

    def decrypt(self, vec) -> np.ndarray:
        data = vec.data if isinstance(vec, HEVector) else vec
        return decrypt(self.sk, data)

    def noise_budget(self, vec) -> NoiseBudgetReading:
        data = vec.data if isinstance(vec, HEVector) else vec
        return noise_budget(self.sk, data)


# -- serialization --------------------------------------------------------------------

def serialize_polys(params: Params, polys, magic: bytes = CT_MAGIC) -> bytes:
    width = params.coeff_bytes
    head = HEADER.pack(magic, FORMAT_VERSION, params.n, params.q_bits, params.p, len(polys))
    body = b"".join(int(c).to_bytes(width, "little") for poly in polys for c in poly)
    return head + body


def ciphertext_size(params: Params, poly_count: int = 2) -> int:
    return HEADER.size + poly_count * params.n * params.coeff_bytes


def read_header(buf: bytes, offset: int = 0):
    if len(buf) - offset < HEADER.size:
        raise CatalogError("truncated ciphertext header")
    magic, version, n, q_bits, p, count = HEADER.unpack_from(buf, offset)
    if magic != CT_MAGIC:
        raise CatalogError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CatalogError(f"unsupported format version {version}")
    return n, q_bits, p, count


def deserialize_polys(buf: bytes, params: Params, offset: int = 0):
    """Parse one serialized record; returns (polys, next offset)."""
    n, q_bits, p, count = read_header(buf, offset)
    if (n, q_bits, p) != (params.n, params.q_bits, params.p):
        raise CatalogError(f"ciphertext params (n={n}, q_bits={q_bits}, p={p}) do not match {params.describe()}")
    width = params.coeff_bytes
    pos = offset + HEADER.size
    end = pos + count * n * width
    if end > len(buf):
        raise CatalogError("truncated ciphertext body")
    polys = []
    for _ in range(count):
        polys.append([int.from_bytes(buf[pos + i * width: pos + (i + 1) * width], "little") for i in range(n)])
        pos += n * width
    return tuple(polys), end


# key files: magic, version, kind, key id, then kind-specific records
_KEY_HEAD = struct.Struct("<4sHBQ")
_KIND_SECRET, _KIND_PUBLIC, _KIND_EVAL = 0, 1, 2


def _key_head(kind: int, key_id: int) -> bytes:
    return _KEY_HEAD.pack(KEY_MAGIC, FORMAT_VERSION, kind, key_id)


def _parse_key_head(buf: bytes, kind: int) -> int:
    magic, version, got, key_id = _KEY_HEAD.unpack_from(buf, 0)
    if magic != KEY_MAGIC or version != FORMAT_VERSION:
        raise CatalogError("not a key file of this format version")
    if got != kind:
        raise CatalogError(f"key file holds kind {got}, expected {kind}")
    return key_id


def dump_secret_key(sk: SecretKey) -> bytes:
    body = bytes((c + 1) for c in sk.s)
    return _key_head(_KIND_SECRET, sk.key_id) + serialize_polys(sk.params, []) + body


def load_secret_key(buf: bytes, params: Params) -> SecretKey:
    key_id = _parse_key_head(buf, _KIND_SECRET)
    _, pos = deserialize_polys(buf, params, _KEY_HEAD.size)
    s = tuple(b - 1 for b in buf[pos:pos + params.n])
    if len(s) != params.n:
        raise CatalogError("truncated secret key")
    return SecretKey(params, s, key_id)


def dump_public_key(pk: PublicKey) -> bytes:
    return _key_head(_KIND_PUBLIC, pk.key_id) + serialize_polys(pk.params, [pk.b, pk.a])


def load_public_key(buf: bytes, params: Params) -> PublicKey:
    key_id = _parse_key_head(buf, _KIND_PUBLIC)
    (b, a), _ = deserialize_polys(buf, params, _KEY_HEAD.size)
    return PublicKey(params, b, a, key_id)


def dump_eval_keys(evk: EvalKeys) -> bytes:
    out = io.BytesIO()
    out.write(_key_head(_KIND_EVAL, evk.key_id))
    out.write(struct.pack("<H", len(evk.galois)))
    out.write(serialize_polys(evk.params, evk.relin.k0 + evk.relin.k1))
    for g in sorted(evk.galois):
        key = evk.galois[g]
        out.write(struct.pack("<I", g))
        out.write(serialize_polys(evk.params, key.k0 + key.k1))
    return out.getvalue()


def load_eval_keys(buf: bytes, params: Params) -> EvalKeys:
    key_id = _parse_key_head(buf, _KIND_EVAL)
    pos = _KEY_HEAD.size
    (count,) = struct.unpack_from("<H", buf, pos)
    pos += 2

    def read_switch(pos):
        polys, pos = deserialize_polys(buf, params, pos)
        half = len(polys) // 2
        return KeySwitchKey(list(polys[:half]), list(polys[half:])), pos

    relin, pos = read_switch(pos)
    galois = {}
    for _ in range(count):
        (g,) = struct.unpack_from("<I", buf, pos)
        galois[g], pos = read_switch(pos + 4)
    return EvalKeys(params, relin, galois, key_id)
