"""Homomorphic Fourier transform over row-packed ciphertexts.

A size-n DFT is factored radix-2 into log2(n) butterfly stages.  Each stage is
a sparse matrix with a handful of nonzero generalized diagonals, so applying
it to a ciphertext costs one rotation and one plaintext multiply per diagonal
and exactly one level.

Two orderings are supported.  ``natural`` plans compute the DFT in natural
order on both sides; the bit-reversal permutation is folded into the first
stage, which therefore has O(n) diagonals.  ``bitrev`` plans skip the
permutation: the forward plan emits its spectrum in bit-reversed order and
the inverse plan consumes a bit-reversed spectrum, so every stage keeps at
most three diagonals.  Frequency-domain convolution only needs the pointwise
product of two spectra, so it can use the cheaper ordering throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .engine import Ciphertext, is_power_of_two
from .errors import PlanError, ShapeError

FORWARD = "forward"
INVERSE = "inverse"


def bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def dft_matrix(n: int, direction: str = FORWARD) -> np.ndarray:
    """Unitary DFT matrix built entry by entry."""
    sign = -1.0 if direction == FORWARD else 1.0
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def _butterfly_stage(n: int, half: int, sign: float, dif: bool) -> np.ndarray:
    """Dense matrix of one unitary radix-2 butterfly stage of span ``half``."""
    a = np.zeros((n, n), dtype=np.complex128)
    w = np.exp(sign * 2j * np.pi * np.arange(half) / (2 * half))
    r = 1.0 / np.sqrt(2.0)
    for start in range(0, n, 2 * half):
        for k in range(half):
            top, bot = start + k, start + k + half
            if dif:
                # (x_top + x_bot, (x_top - x_bot) * w^k)
                a[top, top] = a[top, bot] = r
                a[bot, top] = r * w[k]
                a[bot, bot] = -r * w[k]
            else:
                # (x_top + w^k x_bot, x_top - w^k x_bot)
                a[top, top] = a[bot, top] = r
                a[top, bot] = r * w[k]
                a[bot, bot] = -r * w[k]
    return a


def _signed_diagonals(a: np.ndarray) -> dict[int, np.ndarray]:
    """Split a square matrix into diagonals: y[i] = sum_d D_d[i] * x[i + d]."""
    n = a.shape[0]
    rows, cols = np.nonzero(np.abs(a) > 1e-15)
    diags: dict[int, np.ndarray] = {}
    for i, j in zip(rows, cols):
        d = int(j - i)
        diags.setdefault(d, np.zeros(n, dtype=np.complex128))[i] = a[i, j]
    return dict(sorted(diags.items()))


def _from_signed_diagonals(n: int, diags: dict[int, np.ndarray]) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.complex128)
    for d, vec in diags.items():
        for i in range(n):
            if 0 <= i + d < n and vec[i] != 0:
                a[i, i + d] = vec[i]
    return a


@dataclass(frozen=True)
class DftPlan:
    """A DFT factored into sparse-diagonal stages, applied first to last."""

    size: int
    direction: str
    order: str
    stages: tuple[dict[int, np.ndarray], ...] = field(repr=False)
    _embedded: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def depth(self) -> int:
        return len(self.stages)

    def stage_matrix(self, k: int) -> np.ndarray:
        return _from_signed_diagonals(self.size, self.stages[k])

    def dense(self) -> np.ndarray:
        out = np.eye(self.size, dtype=np.complex128)
        for k in range(self.depth):
            out = self.stage_matrix(k) @ out
        return out

    def diagonal_count(self, k: int, slot_count: int | None = None) -> int:
        return len(self.diagonals(k, slot_count or self.size))

    def diagonals(self, k: int, slot_count: int) -> dict[int, np.ndarray]:
        """Cyclic diagonals of stage ``k`` embedded in the leading slots.

        Returned as {left-rotation amount: plaintext mask of length
        ``slot_count``}; slots past ``size`` map to zero.
        """
        if slot_count < self.size:
            raise ShapeError(f"plan of size {self.size} does not fit {slot_count} slots")
        key = (k, slot_count)
        if key not in self._embedded:
            out: dict[int, np.ndarray] = {}
            for d, vec in self.stages[k].items():
                acc = out.setdefault(d % slot_count, np.zeros(slot_count, dtype=np.complex128))
                acc[: self.size] += vec
            self._embedded[key] = {r: v for r, v in sorted(out.items()) if np.any(v != 0)}
        return self._embedded[key]

    def apply_plain(self, x: np.ndarray) -> np.ndarray:
        """Stage-by-stage application on a cleartext vector (for debugging)."""
        for k in range(self.depth):
            x = self.stage_matrix(k) @ x
        return x


_PLANS: dict[tuple, DftPlan] = {}


def build_plan(n: int, direction: str = FORWARD, order: str = "natural",
               levels: int | None = None) -> DftPlan:
    """Factor the unitary size-``n`` DFT (or its inverse) into stages.

    ``levels`` merges consecutive radix-2 stages so the plan consumes that
    many levels instead of log2(n); merged stages have more diagonals.
    """
    if not is_power_of_two(n) or n < 2:
        raise PlanError(f"DFT size must be a power of two >= 2, got {n}")
    if direction not in (FORWARD, INVERSE):
        raise PlanError(f"unknown direction {direction!r}")
    if order not in ("natural", "bitrev"):
        raise PlanError(f"unknown ordering {order!r}")
    log_n = n.bit_length() - 1
    if levels is None:
        levels = log_n
    if not 1 <= levels <= log_n:
        raise PlanError(f"levels must lie in [1, {log_n}], got {levels}")
    key = (n, direction, order, levels)
    if key in _PLANS:
        return _PLANS[key]

    sign = -1.0 if direction == FORWARD else 1.0
    perm = np.eye(n)[bit_reverse_indices(n)]
    use_dif = direction == FORWARD and order == "bitrev"
    if use_dif:
        # natural input -> bit-reversed output
        mats = [_butterfly_stage(n, n >> (s + 1), sign, dif=True) for s in range(log_n)]
    else:
        # bit-reversed input -> natural output; natural plans permute first
        mats = [_butterfly_stage(n, 1 << s, sign, dif=False) for s in range(log_n)]
        if order == "natural":
            mats[0] = mats[0] @ perm

    groups = np.array_split(np.arange(log_n), levels)
    stages = []
    for group in groups:
        m = np.eye(n, dtype=np.complex128)
        for s in group:
            m = mats[s] @ m
        stages.append(_signed_diagonals(m))
    plan = DftPlan(n, direction, order, tuple(stages))
    _PLANS[key] = plan
    return plan


def diag_matvec(backend, c: Ciphertext, diags: dict[int, np.ndarray],
                bsgs: bool = False) -> Ciphertext:
    """Multiply ``c`` by the matrix whose cyclic diagonals are ``diags``.

    Costs one level.  With ``bsgs`` the rotations are grouped baby-step /
    giant-step style: about 2*sqrt(#diagonals) rotations instead of one per
    diagonal.
    """
    if not diags:
        raise ShapeError("matrix has no nonzero diagonals")
    if not bsgs or len(diags) < 4:
        terms = [backend.mult_pt(backend.rotate_left(c, r), vec) for r, vec in diags.items()]
        return backend.add_many(terms)

    n = c.slot_count
    baby = 1 << int(np.ceil(np.log2(np.sqrt(max(diags) + 1))))
    baby_cts: dict[int, Ciphertext] = {}
    giants: dict[int, list[Ciphertext]] = {}
    for r, vec in diags.items():
        g, b = divmod(r, baby)
        if b not in baby_cts:
            baby_cts[b] = backend.rotate_left(c, b)
        shifted = np.roll(vec, g * baby)  # rot_{-g*baby}(vec)
        giants.setdefault(g, []).append(backend.mult_pt(baby_cts[b], shifted))
    outs = [backend.rotate_left(backend.add_many(parts), g * baby % n)
            for g, parts in sorted(giants.items())]
    return backend.add_many(outs)


def apply_hft(backend, c: Ciphertext, plan: DftPlan, bsgs: bool = False) -> Ciphertext:
    """Apply ``plan`` to the leading ``plan.size`` slots of ``c``.

    Consumes exactly ``plan.depth`` levels.  Slots at or beyond
    ``plan.size`` come out zero.
    """
    if c.slot_count < plan.size:
        raise ShapeError(f"a {c.slot_count}-slot ciphertext cannot hold a size-{plan.size} DFT")
    for k in range(plan.depth):
        c = diag_matvec(backend, c, plan.diagonals(k, c.slot_count), bsgs=bsgs)
    return c


@dataclass
class CipherGrid:
    """A 2-D array encrypted one row per ciphertext.

    ``row_len`` counts the meaningful leading slots of each row.
    """

    rows: list[Ciphertext]
    row_len: int

    def __post_init__(self):
        if not self.rows:
            raise ShapeError("a grid needs at least one row")
        slots = {ct.slot_count for ct in self.rows}
        if len(slots) != 1:
            raise ShapeError(f"rows disagree on slot count: {sorted(slots)}")
        if self.row_len > self.slot_count:
            raise ShapeError(f"row_len {self.row_len} exceeds {self.slot_count} slots")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def slot_count(self) -> int:
        return self.rows[0].slot_count

    @property
    def level(self) -> int:
        return min(ct.level for ct in self.rows)

    def decrypt(self, backend) -> np.ndarray:
        """Decrypt the meaningful region as an (n_rows, row_len) array."""
        return np.stack([backend.decrypt(ct)[: self.row_len] for ct in self.rows])


@lru_cache(maxsize=None)
def unit_vector(n: int, j: int) -> np.ndarray:
    e = np.zeros(n)
    e[j] = 1.0
    e.setflags(write=False)
    return e


def transpose_cost(n_rows: int, n_cols: int) -> dict[str, int]:
    """Operation counts of :func:`transpose_grid` on an n_rows x n_cols region."""
    diagonal = min(n_rows, n_cols)
    return {
        "mult_pt": n_rows * n_cols,
        "rotate": n_rows * n_cols - diagonal,
        "add": (n_rows - 1) * n_cols,
    }


def transpose_grid(backend, g: CipherGrid, n_cols: int | None = None) -> CipherGrid:
    """Transpose a row-packed grid by mask, rotate and accumulate.

    Output ciphertext j holds column j of the input: its slot i receives
    slot j of input row i.  Only the first ``n_cols`` columns are produced
    (default: all ``row_len`` meaningful columns).  Consumes one level.
    """
    n_cols = g.row_len if n_cols is None else n_cols
    if n_cols > g.row_len:
        raise ShapeError(f"grid has {g.row_len} meaningful columns, {n_cols} requested")
    if g.n_rows > g.slot_count:
        raise ShapeError(f"{g.n_rows} rows do not fit in {g.slot_count} slots")
    n = g.slot_count
    out = []
    for j in range(n_cols):
        mask = unit_vector(n, j)
        terms = [backend.rotate_left(backend.mult_pt(row, mask), j - i)
                 for i, row in enumerate(g.rows)]
        out.append(backend.add_many(terms))
    return CipherGrid(out, g.n_rows)
