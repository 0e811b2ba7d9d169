"""Slot-level FHE computational model.

Every circuit in this package is written against the small interface
implemented here: ciphertexts hold a vector of 2^n complex slots and can only
be added, multiplied (by ciphertexts or plaintext vectors) and rotated.
:class:`SimulatorBackend` evaluates that interface exactly in floating point,
with level bookkeeping, an optional Gaussian noise model and an operation
meter.  The CKKS backend in :mod:`fhenav.ckks` exposes the same methods.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DepthExhausted,
    KeyMismatchError,
    MissingKeyError,
    PackingError,
    ScaleError,
    ShapeError,
)

# A SlotVec is a 1-D complex128 array whose length is a power of two.
SlotVec = np.ndarray

OP_KINDS = ("add", "mult_ct", "mult_pt", "rotate", "rescale", "encrypt", "decrypt")

DEFAULT_LEVELS = 40
DEFAULT_LOG_SCALE = 40


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def as_slotvec(values, length: int | None = None) -> SlotVec:
    """Validate ``values`` as a slot vector, zero-padding up to ``length``."""
    vec = np.asarray(values, dtype=np.complex128)
    if vec.ndim != 1:
        raise PackingError(f"slot vectors are 1-D, got shape {vec.shape}")
    if length is not None:
        if vec.size > length:
            raise PackingError(f"{vec.size} values do not fit in {length} slots")
        vec = np.concatenate([vec, np.zeros(length - vec.size, dtype=np.complex128)])
    if vec.size < 2 or not is_power_of_two(vec.size):
        raise PackingError(f"slot count must be 2^n with n >= 1, got {vec.size}")
    if not np.all(np.isfinite(vec)):
        raise PackingError("slot vectors must be finite")
    return vec


@dataclass(frozen=True)
class NoiseModel:
    """Per-slot Gaussian perturbation injected after selected operations."""

    enabled: bool = False
    sigma_mult: float = 0.0
    sigma_rot: float = 0.0
    sigma_rescale: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("sigma_mult", "sigma_rot", "sigma_rescale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def preset(cls, name: str, rng_seed: int = 0) -> "NoiseModel":
        if name == "off":
            return cls(rng_seed=rng_seed)
        if name == "ckks":
            return cls(True, sigma_mult=1e-4, sigma_rot=1e-5, rng_seed=rng_seed)
        raise ValueError(f"unknown noise preset {name!r}")


class CostMeter:
    """Thread-safe operation counters for one circuit evaluation."""

    def __init__(self):
        self._lock = threading.Lock()
        self.counters = {kind: 0 for kind in OP_KINDS}
        self.depth_used = 0

    def count(self, kind: str, n: int = 1) -> None:
        with self._lock:
            self.counters[kind] += n

    def note_level(self, max_level: int, level: int) -> None:
        with self._lock:
            self.depth_used = max(self.depth_used, max_level - level)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self.counters)

    def since(self, before: Mapping[str, int]) -> dict[str, int]:
        now = self.snapshot()
        return {k: now[k] - before.get(k, 0) for k in OP_KINDS}

    def reset(self) -> None:
        with self._lock:
            self.counters = {kind: 0 for kind in OP_KINDS}
            self.depth_used = 0


def _token(seed: int, label: str) -> str:
    return hashlib.sha256(f"{seed}:{label}".encode()).hexdigest()[:16]


@dataclass(frozen=True)
class KeySet:
    """Key material for the simulator.

    The simulator needs no lattice keys; the tokens exist so that key
    provenance and rotation-key coverage are enforced exactly as they would
    be with real key material.
    """

    slot_count: int
    seed: int
    public_key: str
    secret_key: str
    relinearization_key: str
    rotation_keys: Mapping[int, str] = field(repr=False)

    @classmethod
    def generate(cls, slot_count: int, rotations: Iterable[int] | str = "pow2",
                 seed: int = 0) -> "KeySet":
        """Generate keys covering ``rotations`` (left-rotation amounts).

        ``"pow2"`` covers every power of two below the slot count and
        ``"all"`` covers every amount.
        """
        if not is_power_of_two(slot_count) or slot_count < 2:
            raise PackingError(f"slot count must be 2^n, got {slot_count}")
        if rotations == "all":
            amounts = set(range(1, slot_count))
        elif rotations == "pow2":
            amounts = {1 << i for i in range(slot_count.bit_length() - 1)}
        else:
            amounts = {int(r) % slot_count for r in rotations} - {0}
        return cls(
            slot_count=slot_count,
            seed=seed,
            public_key=_token(seed, "pk"),
            secret_key=_token(seed, "sk"),
            relinearization_key=_token(seed, "rlk"),
            rotation_keys={r: _token(seed, f"rot{r}") for r in sorted(amounts)},
        )

    @property
    def key_id(self) -> str:
        return self.public_key

    def has_rotation(self, r: int) -> bool:
        r %= self.slot_count
        return r == 0 or r in self.rotation_keys


class Ciphertext:
    """An encrypted slot vector.

    Only metadata is public.  The payload is opaque to callers and no method
    returns an individual slot; values leave a ciphertext only through a
    backend's ``decrypt``.
    """

    __slots__ = ("_payload", "_key_id", "_slot_count", "_level", "_scale")

    def __init__(self, payload, key_id: str, slot_count: int, level: int, scale: float):
        self._payload = payload
        self._key_id = key_id
        self._slot_count = slot_count
        self._level = level
        self._scale = scale

    @property
    def slot_count(self) -> int:
        return self._slot_count

    @property
    def level(self) -> int:
        return self._level

    @property
    def scale(self) -> float:
        return self._scale

    def __repr__(self) -> str:
        return (f"Ciphertext(slots={self._slot_count}, level={self._level}, "
                f"scale=2^{np.log2(self._scale):.0f})")


class Evaluator:
    """Circuit helpers built only from the primitive backend operations."""

    meter: CostMeter

    def rotate_sum(self, c: Ciphertext, n_terms: int, mode: str = "tree") -> Ciphertext:
        """Leave the sum of the first ``n_terms`` slots of ``c`` in slot 0.

        ``naive`` rotates by one ``n_terms - 1`` times; ``tree`` doubles the
        rotation amount and needs ``log2(n_terms)`` rotations.
        """
        if n_terms < 1 or n_terms > c.slot_count:
            raise ShapeError(f"cannot sum {n_terms} terms of a {c.slot_count}-slot ciphertext")
        if mode == "naive":
            acc = shifted = c
            for _ in range(n_terms - 1):
                shifted = self.rotate_left(shifted, 1)
                acc = self.add(acc, shifted)
            return acc
        if mode == "tree":
            if not is_power_of_two(n_terms):
                raise ShapeError(f"tree mode needs a power-of-two term count, got {n_terms}")
            acc, step = c, 1
            while step < n_terms:
                acc = self.add(acc, self.rotate_left(acc, step))
                step *= 2
            return acc
        raise ValueError(f"unknown rotate_sum mode {mode!r}")

    def add_many(self, cts: Sequence[Ciphertext]) -> Ciphertext:
        if not cts:
            raise ShapeError("cannot sum an empty list of ciphertexts")
        acc = cts[0]
        for ct in cts[1:]:
            acc = self.add(acc, ct)
        return acc


class SimulatorBackend(Evaluator):
    """Exact slot-level evaluation of the FHE programming model."""

    name = "simulator"

    def __init__(self, keys: KeySet, max_level: int = DEFAULT_LEVELS,
                 noise: NoiseModel | None = None, meter: CostMeter | None = None,
                 log_scale: int = DEFAULT_LOG_SCALE):
        if max_level < 0:
            raise ValueError("max_level must be nonnegative")
        self.keys = keys
        self.slot_count = keys.slot_count
        self.max_level = max_level
        self.noise = noise or NoiseModel()
        self.meter = meter or CostMeter()
        self.scale = float(2 ** log_scale)
        self._rng = np.random.default_rng(self.noise.rng_seed)
        self._rng_lock = threading.Lock()
        self.rotations_used: set[int] = set()

    @classmethod
    def create(cls, slot_count: int, rotations: Iterable[int] | str = "all",
               seed: int = 0, **kwargs) -> "SimulatorBackend":
        return cls(KeySet.generate(slot_count, rotations, seed), **kwargs)

    # -- internals ---------------------------------------------------------

    def _slots(self, c: Ciphertext) -> np.ndarray:
        if c._key_id != self.keys.key_id:
            raise KeyMismatchError("ciphertext was encrypted under different keys")
        return c._payload

    def _wrap(self, slots: np.ndarray, level: int) -> Ciphertext:
        return Ciphertext(slots, self.keys.key_id, self.slot_count, level, self.scale)

    def _perturb(self, slots: np.ndarray, sigma: float) -> np.ndarray:
        if not self.noise.enabled or sigma == 0.0:
            return slots
        with self._rng_lock:
            re = self._rng.normal(0.0, sigma, slots.size)
            im = self._rng.normal(0.0, sigma, slots.size)
        return slots + (re + 1j * im)

    def _plain(self, p) -> np.ndarray:
        if np.isscalar(p):
            return np.full(self.slot_count, p, dtype=np.complex128)
        vec = np.asarray(p, dtype=np.complex128)
        if vec.shape != (self.slot_count,):
            raise ShapeError(f"plaintext has shape {vec.shape}, expected ({self.slot_count},)")
        return vec

    def _check_pair(self, a: Ciphertext, b: Ciphertext) -> None:
        if a.slot_count != b.slot_count:
            raise ShapeError(f"slot counts differ: {a.slot_count} vs {b.slot_count}")
        if a.scale != b.scale:
            raise ScaleError(f"scales differ: {a.scale} vs {b.scale}")

    def _consume_level(self, level: int) -> int:
        if level < 1:
            raise DepthExhausted("multiplication needs a level but none remain")
        self.meter.count("rescale")
        self.meter.note_level(self.max_level, level - 1)
        return level - 1

    # -- public operations -------------------------------------------------

    def encrypt(self, m) -> Ciphertext:
        vec = as_slotvec(m)
        if vec.size != self.slot_count:
            raise PackingError(f"expected {self.slot_count} slots, got {vec.size}")
        self.meter.count("encrypt")
        return self._wrap(vec.copy(), self.max_level)

    def decrypt(self, c: Ciphertext, keys: KeySet | None = None) -> SlotVec:
        if keys is not None and keys.key_id != c._key_id:
            raise KeyMismatchError("ciphertext was encrypted under different keys")
        self.meter.count("decrypt")
        return self._slots(c).copy()

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        self.meter.count("add")
        return self._wrap(self._slots(a) + self._slots(b), min(a.level, b.level))

    def sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        self.meter.count("add")
        return self._wrap(self._slots(a) - self._slots(b), min(a.level, b.level))

    def add_plain(self, a: Ciphertext, p) -> Ciphertext:
        self.meter.count("add")
        return self._wrap(self._slots(a) + self._plain(p), a.level)

    def mult_ct(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        level = self._consume_level(min(a.level, b.level))
        self.meter.count("mult_ct")
        out = self._slots(a) * self._slots(b)
        out = self._perturb(out, self.noise.sigma_mult)
        out = self._perturb(out, self.noise.sigma_rescale)
        return self._wrap(out, level)

    def mult_pt(self, a: Ciphertext, p) -> Ciphertext:
        level = self._consume_level(a.level)
        self.meter.count("mult_pt")
        out = self._slots(a) * self._plain(p)
        out = self._perturb(out, self.noise.sigma_mult)
        out = self._perturb(out, self.noise.sigma_rescale)
        return self._wrap(out, level)

    def rotate_left(self, c: Ciphertext, r: int) -> Ciphertext:
        r = int(r) % c.slot_count
        slots = self._slots(c)
        if r == 0:
            return c
        if not self.keys.has_rotation(r):
            raise MissingKeyError(f"no rotation key for amount {r}")
        self.meter.count("rotate")
        self.rotations_used.add(r)
        out = self._perturb(np.roll(slots, -r), self.noise.sigma_rot)
        return self._wrap(out, c.level)
