"""A small leveled CKKS scheme behind the slot-engine interface.

Ring Z[X]/(X^N + 1) with a single power-of-two modulus per level,
q_l = 2^(log_q0 + l * log_scale).  Rescaling is a rounded right shift by
log_scale bits.  Relinearization and rotation keys live modulo P * q_L with
P = q_L and are applied by multiplying then dividing by P (ModDown).

Logical slot vectors shorter than N/2 are tiled across all N/2 slots, so a
rotation of the full slot vector is a rotation of the logical one.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

from ..engine import Ciphertext, CostMeter, Evaluator, as_slotvec, is_power_of_two
from ..errors import (
    DepthExhausted,
    EncodingError,
    KeyMismatchError,
    MissingKeyError,
    PackingError,
    ParameterError,
    ScaleError,
    ShapeError,
)
from . import ntt


@dataclass(frozen=True)
class CkksParams:
    ring_dim: int = 2 ** 13
    log_scale: int = 30
    log_q0: int = 40
    max_level: int = 4
    sigma: float = 3.2

    def __post_init__(self):
        if not is_power_of_two(self.ring_dim) or self.ring_dim < 4:
            raise ParameterError(f"ring dimension must be a power of two >= 4, got {self.ring_dim}")
        if self.max_level < 1:
            raise ParameterError("need at least one level")
        if self.log_scale >= self.log_q0:
            raise ParameterError(
                f"scale 2^{self.log_scale} must be below the smallest modulus 2^{self.log_q0}")
        if self.sigma <= 0:
            raise ParameterError("error std-dev must be positive")

    @property
    def slots(self) -> int:
        return self.ring_dim // 2

    @property
    def scale(self) -> float:
        return float(2 ** self.log_scale)

    def log_modulus(self, level: int) -> int:
        return self.log_q0 + level * self.log_scale

    @property
    def log_special(self) -> int:
        return self.log_modulus(self.max_level)


def centered(x: np.ndarray, bits: int) -> np.ndarray:
    """Reduce integers into [-2^(bits-1), 2^(bits-1))."""
    half = 1 << (bits - 1)
    return ((x + half) & ((1 << bits) - 1)) - half


def shift_round(x: np.ndarray, bits: int) -> np.ndarray:
    """round(x / 2^bits) for an object array of integers."""
    return (x + (1 << (bits - 1))) >> bits


class Encoder:
    """Canonical-embedding encoder: slot j is the value at zeta^(5^j)."""

    def __init__(self, n: int):
        self.n = n
        self.slots = n // 2
        five = np.array([pow(5, j, 2 * n) for j in range(self.slots)])
        self.idx = (five - 1) // 2
        self.conj_idx = (2 * n - five - 1) // 2
        zeta = np.exp(1j * np.pi * np.arange(n) / n)
        self.twist = zeta
        self.untwist = np.conj(zeta)

    def embed(self, z: np.ndarray) -> np.ndarray:
        """Real coefficients of the polynomial whose slots are ``z``."""
        v = np.zeros(self.n, dtype=np.complex128)
        v[self.idx] = z
        v[self.conj_idx] = np.conj(z)
        return (np.fft.fft(v) / self.n * self.untwist).real

    def encode(self, z, scale: float, bits: int) -> np.ndarray:
        z = np.asarray(z, dtype=np.complex128)
        if z.size > self.slots:
            raise EncodingError(f"{z.size} values exceed {self.slots} slots")
        z = np.resize(z, self.slots) if self.slots % max(z.size, 1) == 0 else _pad(z, self.slots)
        coeffs = np.rint(self.embed(z) * scale)
        limit = min(2.0 ** 62, 2.0 ** (bits - 1))
        if not np.all(np.abs(coeffs) < limit):
            raise EncodingError("encoded coefficients overflow the modulus")
        return coeffs.astype(np.int64).astype(object)

    def decode(self, poly: np.ndarray, scale: float) -> np.ndarray:
        m = poly.astype(np.float64) / scale
        v = np.fft.ifft(m * self.twist) * self.n
        return v[self.idx]


def _pad(z: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n, dtype=np.complex128)
    out[: z.size] = z
    return out


@lru_cache(maxsize=None)
def _automorphism(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Target indices and signs of X^i -> X^(i k) in Z[X]/(X^n + 1)."""
    j = (np.arange(n) * k) % (2 * n)
    sign = np.where(j < n, 1, -1)
    return j % n, sign


def apply_automorphism(poly: np.ndarray, k: int) -> np.ndarray:
    target, sign = _automorphism(poly.size, k)
    out = np.empty(poly.size, dtype=object)
    out[target] = poly * sign
    return out


class _Sampler:
    def __init__(self, n: int, seed):
        self.n = n
        self.rng = np.random.default_rng(seed)

    def ternary(self) -> np.ndarray:
        return self.rng.integers(-1, 2, self.n).astype(object)

    def gaussian(self, sigma: float) -> np.ndarray:
        return np.rint(self.rng.normal(0.0, sigma, self.n)).astype(np.int64).astype(object)

    def uniform(self, bits: int) -> np.ndarray:
        limbs = -(-bits // 32)
        words = self.rng.integers(0, 2 ** 32, size=(limbs, self.n), dtype=np.uint64)
        x = np.zeros(self.n, dtype=object)
        for i in range(limbs):
            x = x + (words[i].astype(object) << (32 * i))
        return centered(x, bits)


@dataclass(frozen=True)
class SwitchKey:
    b: np.ndarray
    a: np.ndarray
    _ntt: dict = field(default_factory=dict, compare=False, repr=False)

    def transformed(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """NTT images of (b, a) under the first ``k`` primes."""
        have = max(self._ntt, default=0)
        if have < k:
            ctx = ntt.context(self.b.size, k)
            self._ntt.clear()
            self._ntt[k] = (ctx.forward(ctx.residues(self.b)), ctx.forward(ctx.residues(self.a)))
            have = k
        b, a = self._ntt[have]
        return b[:k], a[:k]


@dataclass(frozen=True)
class CkksKeySet:
    params: CkksParams
    slot_count: int
    seed: int
    key_id: str
    secret_key: np.ndarray = field(repr=False)
    public_key: SwitchKey = field(repr=False)
    relinearization_key: SwitchKey = field(repr=False)
    rotation_keys: dict = field(repr=False)

    def has_rotation(self, r: int) -> bool:
        r %= self.slot_count
        return r == 0 or r in self.rotation_keys

    @classmethod
    def generate(cls, params: CkksParams, slot_count: int,
                 rotations: Iterable[int] | str = "pow2", seed: int = 0) -> "CkksKeySet":
        if not is_power_of_two(slot_count) or slot_count < 2 or slot_count > params.slots:
            raise PackingError(f"slot count must be 2^n <= {params.slots}, got {slot_count}")
        if rotations == "all":
            amounts = set(range(1, slot_count))
        elif rotations == "pow2":
            amounts = {1 << i for i in range(slot_count.bit_length() - 1)}
        else:
            amounts = {int(r) % slot_count for r in rotations} - {0}
        n = params.ring_dim
        sampler = _Sampler(n, [seed, 0])
        s = sampler.ternary()
        log_q = params.log_modulus(params.max_level)
        log_pq = log_q + params.log_special

        a = sampler.uniform(log_q)
        e = sampler.gaussian(params.sigma)
        pk = SwitchKey(centered(-ntt.negacyclic_mul(a, s, log_q, 1) + e, log_q), a)

        def switch_key(target: np.ndarray) -> SwitchKey:
            a = sampler.uniform(log_pq)
            e = sampler.gaussian(params.sigma)
            b = -ntt.negacyclic_mul(a, s, log_pq, 1) + e + (target << params.log_special)
            return SwitchKey(centered(b, log_pq), a)

        relin = switch_key(ntt.negacyclic_mul(s, s, 1, 1))
        rot = {r: switch_key(apply_automorphism(s, pow(5, r, 2 * n))) for r in sorted(amounts)}
        digest = hashlib.sha256(f"{params}:{slot_count}:{seed}".encode()).hexdigest()[:16]
        return cls(params, slot_count, seed, digest, s, pk, relin, rot)


class CkksBackend(Evaluator):
    """Same operations as :class:`fhenav.engine.SimulatorBackend`, on RLWE ciphertexts."""

    name = "ckks"

    def __init__(self, keys: CkksKeySet, meter: CostMeter | None = None, seed: int = 0):
        self.keys = keys
        self.params = keys.params
        self.slot_count = keys.slot_count
        self.max_level = keys.params.max_level
        self.scale = keys.params.scale
        self.meter = meter or CostMeter()
        self.encoder = Encoder(self.params.ring_dim)
        self._sampler = _Sampler(self.params.ring_dim, [keys.seed, 1, seed])

    @classmethod
    def create(cls, slot_count: int, rotations: Iterable[int] | str = "pow2", seed: int = 0,
               params: CkksParams | None = None, **kwargs) -> "CkksBackend":
        keys = CkksKeySet.generate(params or CkksParams(), slot_count, rotations, seed)
        return cls(keys, seed=seed, **kwargs)

    # -- internals ---------------------------------------------------------

    def _parts(self, c: Ciphertext) -> tuple[np.ndarray, np.ndarray]:
        if c._key_id != self.keys.key_id:
            raise KeyMismatchError("ciphertext was encrypted under different keys")
        return c._payload

    def _wrap(self, c0, c1, level: int) -> Ciphertext:
        return Ciphertext((c0, c1), self.keys.key_id, self.slot_count, level, self.scale)

    def _bits(self, level: int) -> int:
        return self.params.log_modulus(level)

    def _encode(self, values, level: int) -> np.ndarray:
        vec = as_slotvec(values, self.slot_count) if not np.isscalar(values) else \
            np.full(self.slot_count, values, dtype=np.complex128)
        if vec.size != self.slot_count:
            raise ShapeError(f"plaintext has {vec.size} slots, expected {self.slot_count}")
        return self.encoder.encode(vec, self.scale, self._bits(level))

    def _at_level(self, c: Ciphertext, level: int):
        c0, c1 = self._parts(c)
        if c.level == level:
            return c0, c1
        bits = self._bits(level)
        return centered(c0, bits), centered(c1, bits)

    def _key_switch(self, d: np.ndarray, key: SwitchKey, level: int):
        """(d * key) / P, approximately encrypting d * (key target) under s."""
        bits = self._bits(level)
        log_pq = self.params.log_modulus(self.max_level) + self.params.log_special
        k = ntt.primes_needed(self.params.ring_dim, bits, log_pq)
        ctx = ntt.context(self.params.ring_dim, k)
        fd = ctx.forward(ctx.residues(d))
        kb, ka = key.transformed(k)
        out = []
        for part in (kb, ka):
            prod = ctx.lift(ctx.inverse(fd * part % ctx.p))
            out.append(centered(shift_round(prod, self.params.log_special), bits))
        return out

    def _rescale(self, c0, c1, level: int) -> Ciphertext:
        if level < 1:
            raise DepthExhausted("multiplication needs a level but none remain")
        ls = self.params.log_scale
        bits = self._bits(level - 1)
        self.meter.count("rescale")
        self.meter.note_level(self.max_level, level - 1)
        return self._wrap(centered(shift_round(c0, ls), bits), centered(shift_round(c1, ls), bits),
                          level - 1)

    def _check_pair(self, a: Ciphertext, b: Ciphertext) -> None:
        if a.slot_count != b.slot_count:
            raise ShapeError(f"slot counts differ: {a.slot_count} vs {b.slot_count}")
        if a.scale != b.scale:
            raise ScaleError(f"scales differ: {a.scale} vs {b.scale}")

    # -- public operations -------------------------------------------------

    def encrypt(self, m) -> Ciphertext:
        vec = as_slotvec(m)
        if vec.size != self.slot_count:
            raise PackingError(f"expected {self.slot_count} slots, got {vec.size}")
        self.meter.count("encrypt")
        level = self.max_level
        bits = self._bits(level)
        pt = self.encoder.encode(vec, self.scale, bits)
        v = self._sampler.ternary()
        e0 = self._sampler.gaussian(self.params.sigma)
        e1 = self._sampler.gaussian(self.params.sigma)
        pk = self.keys.public_key
        c0 = ntt.negacyclic_mul(v, pk.b, 1, bits) + e0 + pt
        c1 = ntt.negacyclic_mul(v, pk.a, 1, bits) + e1
        return self._wrap(centered(c0, bits), centered(c1, bits), level)

    def decrypt(self, c: Ciphertext, keys: CkksKeySet | None = None):
        if keys is not None and keys.key_id != c._key_id:
            raise KeyMismatchError("ciphertext was encrypted under different keys")
        c0, c1 = self._parts(c)
        self.meter.count("decrypt")
        bits = self._bits(c.level)
        m = centered(c0 + ntt.negacyclic_mul(c1, self.keys.secret_key, bits, 1), bits)
        return self.encoder.decode(m, c.scale)[: self.slot_count].copy()

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        level = min(a.level, b.level)
        a0, a1 = self._at_level(a, level)
        b0, b1 = self._at_level(b, level)
        self.meter.count("add")
        bits = self._bits(level)
        return self._wrap(centered(a0 + b0, bits), centered(a1 + b1, bits), level)

    def sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        level = min(a.level, b.level)
        a0, a1 = self._at_level(a, level)
        b0, b1 = self._at_level(b, level)
        self.meter.count("add")
        bits = self._bits(level)
        return self._wrap(centered(a0 - b0, bits), centered(a1 - b1, bits), level)

    def add_plain(self, a: Ciphertext, p) -> Ciphertext:
        c0, c1 = self._parts(a)
        bits = self._bits(a.level)
        self.meter.count("add")
        return self._wrap(centered(c0 + self._encode(p, a.level), bits), c1, a.level)

    def mult_ct(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        level = min(a.level, b.level)
        if level < 1:
            raise DepthExhausted("multiplication needs a level but none remain")
        a0, a1 = self._at_level(a, level)
        b0, b1 = self._at_level(b, level)
        bits = self._bits(level)
        ctx = ntt.context(self.params.ring_dim, ntt.primes_needed(self.params.ring_dim, bits, bits))
        fa0, fa1, fb0, fb1 = (ctx.forward(ctx.residues(x)) for x in (a0, a1, b0, b1))
        p = ctx.p
        d0 = ctx.lift(ctx.inverse(fa0 * fb0 % p))
        d1 = ctx.lift(ctx.inverse((fa0 * fb1 % p + fa1 * fb0 % p) % p))
        d2 = centered(ctx.lift(ctx.inverse(fa1 * fb1 % p)), bits)
        k0, k1 = self._key_switch(d2, self.keys.relinearization_key, level)
        self.meter.count("mult_ct")
        return self._rescale(centered(d0 + k0, bits), centered(d1 + k1, bits), level)

    def mult_pt(self, a: Ciphertext, p) -> Ciphertext:
        if a.level < 1:
            raise DepthExhausted("multiplication needs a level but none remain")
        c0, c1 = self._parts(a)
        bits = self._bits(a.level)
        self.meter.count("mult_pt")
        if np.isscalar(p) and np.isreal(p):
            k = int(round(float(np.real(p)) * self.scale))
            return self._rescale(centered(c0 * k, bits), centered(c1 * k, bits), a.level)
        pt = self._encode(p, a.level)
        pbits = ntt.bit_bound(pt)
        out = [centered(ntt.negacyclic_mul(c, pt, bits, pbits), bits) for c in (c0, c1)]
        return self._rescale(out[0], out[1], a.level)

    def rotate_left(self, c: Ciphertext, r: int) -> Ciphertext:
        r = int(r) % c.slot_count
        c0, c1 = self._parts(c)
        if r == 0:
            return c
        if not self.keys.has_rotation(r):
            raise MissingKeyError(f"no rotation key for amount {r}")
        self.meter.count("rotate")
        g = pow(5, r, 2 * self.params.ring_dim)
        bits = self._bits(c.level)
        k0, k1 = self._key_switch(apply_automorphism(c1, g), self.keys.rotation_keys[r], c.level)
        return self._wrap(centered(apply_automorphism(c0, g) + k0, bits), k1, c.level)
