"""Exact negacyclic products of big-integer polynomials.

Coefficients are Python integers held in object arrays.  A product is
computed modulo several 30-bit NTT primes (int64 kernels compiled with
numba) and lifted back to the exact integer result with Garner's CRT,
so one code path serves every ciphertext modulus in the chain.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numba import njit
from sympy import isprime
from sympy.ntheory import primitive_root

PRIME_BITS = 30


@lru_cache(maxsize=None)
def ntt_primes(n: int, count: int, bits: int = PRIME_BITS) -> tuple[int, ...]:
    """The ``count`` largest primes below 2^bits congruent to 1 mod 2n."""
    step = 2 * n
    p = ((1 << bits) - 1) // step * step + 1
    out = []
    while len(out) < count:
        if p < step:
            raise ValueError(f"not enough {bits}-bit NTT primes for n = {n}")
        if isprime(p):
            out.append(p)
        p -= step
    return tuple(out)


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@njit(cache=True)
def _butterflies(a, tw, p):
    """In-place cyclic NTT of every row of ``a`` (input in bit-reversed order).

    ``tw[i, h + j]`` holds w_{2h}^j modulo ``p[i]``.
    """
    k, n = a.shape
    for i in range(k):
        q = p[i]
        h = 1
        while h < n:
            for start in range(0, n, 2 * h):
                for j in range(h):
                    u = a[i, start + j]
                    v = a[i, start + j + h] * tw[i, h + j] % q
                    s = u + v
                    a[i, start + j] = s - q if s >= q else s
                    d = u - v
                    a[i, start + j + h] = d + q if d < 0 else d
            h *= 2


@njit(cache=True)
def _mixed_radix(digits, primes, n_limbs):
    """sum_i digits[i] * prod_{j<i} primes[j] as little-endian 32-bit limbs."""
    k, n = digits.shape
    out = np.zeros((n, n_limbs), dtype=np.uint32)
    acc = np.zeros(n_limbs, dtype=np.uint64)
    for c in range(n):
        acc[:] = 0
        acc[0] = digits[k - 1, c]
        for i in range(k - 2, -1, -1):
            carry = np.uint64(digits[i, c])
            q = np.uint64(primes[i])
            for t in range(n_limbs):
                v = acc[t] * q + carry
                acc[t] = v & np.uint64(0xFFFFFFFF)
                carry = v >> np.uint64(32)
        for t in range(n_limbs):
            out[c, t] = acc[t]
    return out


@njit(cache=True)
def _garner(residues, primes, inv):
    """Mixed-radix digits of the CRT solution; inv[i, j] = p_j^-1 mod p_i."""
    k, n = residues.shape
    digits = np.empty_like(residues)
    for c in range(n):
        for i in range(k):
            q = primes[i]
            t = residues[i, c]
            for j in range(i):
                t = (t - digits[j, c]) % q * inv[i, j] % q
            digits[i, c] = t
    return digits


@njit(cache=True)
def _reduce_limbs(limbs, primes):
    """Residues of little-endian 32-bit limb rows modulo every prime."""
    n, n_limbs = limbs.shape
    k = primes.size
    out = np.empty((k, n), dtype=np.int64)
    for i in range(k):
        q = primes[i]
        base = (1 << 32) % q
        for c in range(n):
            r = 0
            for t in range(n_limbs - 1, -1, -1):
                r = (r * base + limbs[c, t]) % q
            out[i, c] = r
    return out


def to_limbs(poly: np.ndarray, n_limbs: int) -> np.ndarray:
    """Nonnegative integers as an (n, n_limbs) array of 32-bit limbs."""
    width = 4 * n_limbs
    raw = b"".join(int(v).to_bytes(width, "little") for v in poly)
    return np.frombuffer(raw, dtype="<u4").reshape(poly.size, n_limbs)


def from_limbs(limbs: np.ndarray) -> np.ndarray:
    raw = np.ascontiguousarray(limbs, dtype="<u4").tobytes()
    width = 4 * limbs.shape[1]
    out = np.empty(limbs.shape[0], dtype=object)
    out[:] = [int.from_bytes(raw[i:i + width], "little") for i in range(0, len(raw), width)]
    return out


class NttContext:
    """Twiddle tables for negacyclic NTTs of length n over a list of primes."""

    def __init__(self, n: int, primes: tuple[int, ...]):
        self.n = n
        self.primes = primes
        self.k = len(primes)
        self.p_flat = np.array(primes, dtype=np.int64)
        self.p = self.p_flat[:, None]
        self.rev = _bit_reverse(n)
        psi, psi_inv, n_inv = [], [], []
        for q in primes:
            g = primitive_root(q)
            r = pow(g, (q - 1) // (2 * n), q)
            psi.append(r)
            psi_inv.append(pow(r, q - 2, q))
            n_inv.append(pow(n, q - 2, q))
        self.psi_pows = self._powers(psi, n)
        self.psi_inv_pows = self._powers(psi_inv, n)
        self.n_inv = np.array(n_inv, dtype=np.int64)[:, None]
        # stage twiddles w_{2h}^j = psi^(n/h * j), packed at column h + j
        self.tw = np.zeros((self.k, n), dtype=np.int64)
        self.tw_inv = np.zeros((self.k, n), dtype=np.int64)
        h = 1
        while h < n:
            self.tw[:, h:2 * h] = self.psi_pows[:, ::n // h][:, :h]
            self.tw_inv[:, h:2 * h] = self.psi_inv_pows[:, ::n // h][:, :h]
            h *= 2
        # Garner constants: inv(p_j) mod p_i for j < i
        self.garner = np.zeros((self.k, self.k), dtype=np.int64)
        for i in range(self.k):
            for j in range(i):
                self.garner[i, j] = pow(primes[j], primes[i] - 2, primes[i])
        self.modulus = 1
        for q in primes:
            self.modulus *= q
        self.n_limbs = self.modulus.bit_length() // 32 + 1

    def _powers(self, roots: list[int], n: int) -> np.ndarray:
        out = np.empty((len(roots), n), dtype=np.int64)
        for i, (r, q) in enumerate(zip(roots, self.primes)):
            v = 1
            for j in range(n):
                out[i, j] = v
                v = v * r % q
        return out

    def forward(self, residues: np.ndarray) -> np.ndarray:
        a = np.ascontiguousarray((residues * self.psi_pows % self.p)[:, self.rev])
        _butterflies(a, self.tw, self.p_flat)
        return a

    def inverse(self, values: np.ndarray) -> np.ndarray:
        a = np.ascontiguousarray(values[:, self.rev])
        _butterflies(a, self.tw_inv, self.p_flat)
        return a * self.n_inv % self.p * self.psi_inv_pows % self.p

    def residues(self, poly: np.ndarray) -> np.ndarray:
        """(k, n) int64 residues of an object array of integers."""
        bits = max(bit_bound(poly), 1) + 1
        n_limbs = bits // 32 + 1
        offset = 1 << (32 * n_limbs - 1)
        r = _reduce_limbs(to_limbs(poly + offset, n_limbs).astype(np.int64), self.p_flat)
        off = np.array([offset % q for q in self.primes], dtype=np.int64)[:, None]
        return (r - off) % self.p

    def lift(self, residues: np.ndarray) -> np.ndarray:
        """Centered integers in (-M/2, M/2] from their residues (Garner)."""
        digits = _garner(np.ascontiguousarray(residues), self.p_flat, self.garner)
        x = from_limbs(_mixed_radix(digits, self.p_flat, self.n_limbs))
        half = self.modulus // 2
        return np.where(x > half, x - self.modulus, x)


@lru_cache(maxsize=None)
def context(n: int, count: int) -> NttContext:
    return NttContext(n, ntt_primes(n, count))


def primes_needed(n: int, bits_a: int, bits_b: int) -> int:
    """Primes whose product exceeds twice the largest possible product coefficient."""
    need = bits_a + bits_b + n.bit_length() + 2
    return -(-need // (PRIME_BITS - 1))


def bit_bound(poly: np.ndarray) -> int:
    return max(int(abs(int(v))).bit_length() for v in (poly.max(), poly.min()))


def negacyclic_mul(a: np.ndarray, b: np.ndarray, bits_a: int | None = None,
                   bits_b: int | None = None) -> np.ndarray:
    """Exact product of two integer polynomials modulo X^n + 1."""
    n = a.size
    bits_a = bit_bound(a) if bits_a is None else bits_a
    bits_b = bit_bound(b) if bits_b is None else bits_b
    ctx = context(n, primes_needed(n, bits_a, bits_b))
    fa = ctx.forward(ctx.residues(a))
    fb = ctx.forward(ctx.residues(b))
    return ctx.lift(ctx.inverse(fa * fb % ctx.p))


def schoolbook_mul(a, b) -> np.ndarray:
    """O(n^2) negacyclic product; the oracle for :func:`negacyclic_mul`."""
    a = [int(v) for v in a]
    b = [int(v) for v in b]
    n = len(a)
    out = [0] * n
    for i, x in enumerate(a):
        if x == 0:
            continue
        for j, y in enumerate(b):
            k = i + j
            if k < n:
                out[k] += x * y
            else:
                out[k - n] -= x * y
    return np.array(out, dtype=object)
