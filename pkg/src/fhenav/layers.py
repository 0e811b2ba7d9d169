"""Encrypted network blocks.

All functions take a backend (simulator or CKKS) as their first argument and
touch ciphertexts only through its add / multiply / rotate interface.

Layout conventions
------------------
* An image channel is a :class:`~fhenav.hft.CipherGrid`: one ciphertext per
  row, meaningful values in the leading ``row_len`` slots, zeros after them.
* A vector (dense-layer activations) is one ciphertext with its meaningful
  values in the leading slots and zeros elsewhere.
* Convolution weights are cross-correlation kernels, as in common deep
  learning frameworks: ``out[i, j] = sum_ab w[a, b] * x[i + a, j + b]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import approx
from .engine import Ciphertext, as_slotvec
from .errors import ShapeError
from .hft import (
    FORWARD,
    INVERSE,
    CipherGrid,
    apply_hft,
    bit_reverse_indices,
    build_plan,
    transpose_grid,
    unit_vector,
)

RELU = "relu_compg"
TANH = "tanh_poly8"
IDENTITY = "identity"
ACTIVATION_KINDS = (RELU, TANH, IDENTITY)


def next_pow2(n: int) -> int:
    return max(2, 1 << (int(n) - 1).bit_length())


@dataclass(frozen=True)
class ActivationSpec:
    kind: str = IDENTITY
    scale_factor: float = 1.0
    compg_depth: int = approx.DEFAULT_COMPG_DEPTH
    tanh_coeffs: tuple[float, ...] = field(default_factory=approx.fit_tanh)

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if not self.scale_factor > 0:
            raise ValueError("scale_factor must be positive")
        if len(self.tanh_coeffs) != approx.TANH_DEGREE + 1:
            raise ValueError(f"tanh needs {approx.TANH_DEGREE + 1} coefficients")

    @property
    def depth(self) -> int:
        if self.kind == RELU:
            return approx.compg_depth_levels(self.compg_depth) + 2
        if self.kind == TANH:
            return approx.poly_depth(self.tanh_coeffs) + (self.scale_factor != 1.0)
        return 0

    def plain(self, x) -> np.ndarray:
        """Cleartext evaluation of the same approximation."""
        if self.kind == RELU:
            return approx.relu_poly_plain(x, self.scale_factor, self.compg_depth)
        if self.kind == TANH:
            return approx.tanh_poly_plain(x, self.tanh_coeffs, self.scale_factor)
        return np.asarray(x, dtype=float)

    def exact(self, x) -> np.ndarray:
        """The activation being approximated."""
        if self.kind == RELU:
            return np.maximum(np.asarray(x, dtype=float), 0.0)
        if self.kind == TANH:
            return approx.tanh_exact(x, self.scale_factor)
        return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class ConvSpec:
    """Multi-channel strided convolution.

    ``filters`` has shape (out_channels, in_channels, k_h, k_w).
    """

    filters: np.ndarray
    bias: np.ndarray
    stride: int = 1
    order: str = "bitrev"

    def __post_init__(self):
        f = np.asarray(self.filters, dtype=float)
        if f.ndim != 4:
            raise ShapeError(f"filters must be 4-D (out, in, kh, kw), got {f.shape}")
        b = np.asarray(self.bias, dtype=float).reshape(-1)
        if b.size != f.shape[0]:
            raise ShapeError(f"{b.size} biases for {f.shape[0]} output channels")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        object.__setattr__(self, "filters", f)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.filters.shape[0]

    @property
    def in_channels(self) -> int:
        return self.filters.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.filters.shape[2], self.filters.shape[3]

    @property
    def offset(self) -> tuple[int, int]:
        """Position of the first valid output in the full convolution."""
        return self.kernel[0] - 1, self.kernel[1] - 1

    def output_shape(self, height: int, width: int) -> tuple[int, int]:
        kh, kw = self.kernel
        return (height - kh) // self.stride + 1, (width - kw) // self.stride + 1

    def dft_sizes(self, height: int, width: int) -> tuple[int, int]:
        """(column DFT size, row DFT size); both cover the unpadded image.

        Circular convolution of length n >= width only wraps into the first
        k - 1 outputs, which are outside the valid region.
        """
        return next_pow2(height), next_pow2(width)

    def spectrum(self, height: int, width: int) -> np.ndarray:
        """DFT of every flipped kernel, laid out to match the encrypted spectrum.

        Returns shape (out, in, n_row, m_col): ``[o, i, v, u]`` multiplies
        slot ``u`` of column ciphertext ``v``.
        """
        m, n = self.dft_sizes(height, width)
        kh, kw = self.kernel
        padded = np.zeros(self.filters.shape[:2] + (m, n))
        padded[:, :, :kh, :kw] = self.filters[:, :, ::-1, ::-1]
        spec = np.fft.fft2(padded)
        if self.order == "bitrev":
            spec = spec[:, :, bit_reverse_indices(m)][:, :, :, bit_reverse_indices(n)]
        return np.swapaxes(spec, 2, 3)


def pack_input(backend, frames, frame_shape: tuple[int, int] | None = (50, 50),
               n_frames: int = 3) -> CipherGrid:
    """Concatenate frames side by side and encrypt one image row per ciphertext."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3 or frames.shape[0] != n_frames:
        raise ShapeError(f"expected {n_frames} frames, got array of shape {frames.shape}")
    if frame_shape is not None and frames.shape[1:] != tuple(frame_shape):
        raise ShapeError(f"frames must be {frame_shape}, got {frames.shape[1:]}")
    if not np.all(np.isfinite(frames)):
        raise ShapeError("frames contain non-finite values")
    image = np.concatenate(list(frames), axis=1)
    if image.shape[1] > backend.slot_count:
        raise ShapeError(f"row of {image.shape[1]} pixels exceeds {backend.slot_count} slots")
    rows = [backend.encrypt(as_slotvec(row, backend.slot_count)) for row in image]
    return CipherGrid(rows, image.shape[1])


def unpack_input(image: np.ndarray, n_frames: int = 3) -> np.ndarray:
    """Inverse of the packing layout on a decrypted (rows, row_len) array."""
    image = np.real(np.asarray(image))
    return np.stack(np.split(image, n_frames, axis=1))


def forward_spectrum(backend, grid: CipherGrid, m: int, n: int, order: str = "bitrev"):
    """Rows DFT, transpose, columns DFT: returns n column ciphertexts."""
    row_plan = build_plan(n, FORWARD, order)
    col_plan = build_plan(m, FORWARD, order)
    rows = [apply_hft(backend, ct, row_plan) for ct in grid.rows]
    cols = transpose_grid(backend, CipherGrid(rows, n))
    return [apply_hft(backend, ct, col_plan) for ct in cols.rows]


def inverse_spectrum(backend, cols: Sequence[Ciphertext], m: int, n: int,
                     n_rows: int, order: str = "bitrev") -> list[Ciphertext]:
    """Columns inverse DFT, transpose back, rows inverse DFT."""
    row_plan = build_plan(n, INVERSE, order)
    col_plan = build_plan(m, INVERSE, order)
    cols = [apply_hft(backend, ct, col_plan) for ct in cols]
    rows = transpose_grid(backend, CipherGrid(cols, m), n_cols=n_rows)
    return [apply_hft(backend, ct, row_plan) for ct in rows.rows]


def conv2d_freq(backend, grids: Sequence[CipherGrid], spec: ConvSpec) -> list[CipherGrid]:
    """Full 2-D convolution of every output channel, computed spectrally.

    Returns one grid per output channel in full-convolution coordinates: the
    valid cross-correlation output (i, j) sits at row i + k_h - 1, slot
    j + k_w - 1.  :func:`apply_stride` realigns and subsamples it.
    """
    if len(grids) != spec.in_channels:
        raise ShapeError(f"{len(grids)} input channels, filters expect {spec.in_channels}")
    height, width = grids[0].n_rows, grids[0].row_len
    if any(g.n_rows != height or g.row_len != width for g in grids):
        raise ShapeError("input channels disagree on shape")
    kh, kw = spec.kernel
    if kh > height or kw > width:
        raise ShapeError(f"{kh}x{kw} filter larger than {height}x{width} input")
    m, n = spec.dft_sizes(height, width)
    if max(m, n) > grids[0].slot_count:
        raise ShapeError(f"DFT sizes {m}x{n} exceed {grids[0].slot_count} slots")

    s = grids[0].slot_count
    filt = spec.spectrum(height, width)
    spectra = [forward_spectrum(backend, g, m, n, spec.order) for g in grids]
    out = []
    for o in range(spec.out_channels):
        acc = []
        for v in range(n):
            terms = [backend.mult_pt(spectra[i][v], as_slotvec(filt[o, i, v], s))
                     for i in range(spec.in_channels)]
            acc.append(backend.add_many(terms))
        rows = inverse_spectrum(backend, acc, m, n, height, spec.order)
        bias = np.zeros(s)
        bias[:width] = spec.bias[o]
        rows = [backend.add_plain(ct, bias) for ct in rows]
        out.append(CipherGrid(rows, width))
    return out


def stride_masks(slot_count: int, valid_width: int, stride: int) -> list[tuple[np.ndarray, int]]:
    """(0/1 mask, left rotation) pairs that compact every ``stride``-th slot.

    Applied to a realigned row, the sum over pairs of
    ``rotate_left(row * mask, r)`` leaves valid output ``stride * j`` in slot
    ``j``.  With stride 1 a single mask keeps the valid slots.
    """
    if stride == 1:
        mask = np.zeros(slot_count)
        mask[:valid_width] = 1.0
        return [(mask, 0)]
    n_out = (valid_width - 1) // stride + 1
    return [(unit_vector(slot_count, stride * j), (stride - 1) * j) for j in range(n_out)]


def apply_stride(backend, grid: CipherGrid, stride: int, offset: tuple[int, int],
                 valid: tuple[int, int]) -> CipherGrid:
    """Realign the valid convolution region to (0, 0) and keep every stride-th output.

    ``offset`` is the (row, slot) position of the first valid output and
    ``valid`` the (rows, columns) extent of the valid region.  Rows are
    separate ciphertexts, so the vertical shift and row subsampling are list
    reindexing; columns are realigned by a left rotation of ``offset[1]``
    and compacted with 0/1 masks.  Consumes one level.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    dr, dc = offset
    h_valid, w_valid = valid
    if dr + h_valid > grid.n_rows or dc + w_valid > grid.row_len:
        raise ShapeError("valid region exceeds the grid")
    rows = grid.rows[dr:] + grid.rows[:dr]
    rows = rows[0:h_valid:stride]
    masks = stride_masks(grid.slot_count, w_valid, stride)
    out = []
    for ct in rows:
        ct = backend.rotate_left(ct, dc)
        parts = [backend.rotate_left(backend.mult_pt(ct, mask), r) for mask, r in masks]
        out.append(backend.add_many(parts))
    return CipherGrid(out, (w_valid - 1) // stride + 1)


def conv_block(backend, grids: Sequence[CipherGrid], spec: ConvSpec) -> list[CipherGrid]:
    """conv2d_freq followed by apply_stride for every output channel."""
    height, width = grids[0].n_rows, grids[0].row_len
    kh, kw = spec.kernel
    valid = (height - kh + 1, width - kw + 1)
    full = conv2d_freq(backend, grids, spec)
    return [apply_stride(backend, g, spec.stride, spec.offset, valid) for g in full]


def _padded(vec, slot_count: int) -> np.ndarray:
    out = np.zeros(slot_count)
    vec = np.asarray(vec, dtype=float).reshape(-1)
    out[: vec.size] = vec
    return out


def _isolate(backend, total: Ciphertext, j: int) -> Ciphertext:
    """Keep slot 0 of ``total`` and move it to slot ``j``."""
    kept = backend.mult_pt(total, unit_vector(total.slot_count, 0))
    return backend.rotate_left(kept, -j)


def flatten_dense(backend, grids: Sequence[CipherGrid], w, b, mode: str = "tree") -> Ciphertext:
    """Flatten (channel, row, column) features and apply a dense layer.

    Each output neuron multiplies every row ciphertext by its slice of the
    weight row, accumulates, rotate-sums the slots and isolates the total
    into slot j.  Consumes two levels.
    """
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    n_rows, row_len = grids[0].n_rows, grids[0].row_len
    n_features = len(grids) * n_rows * row_len
    if w.ndim != 2 or w.shape[1] != n_features:
        raise ShapeError(f"weights {w.shape} do not match {n_features} flattened features")
    s = grids[0].slot_count
    if w.shape[0] > s or b.size != w.shape[0]:
        raise ShapeError(f"{w.shape[0]} outputs with {b.size} biases in {s} slots")
    w = w.reshape(w.shape[0], len(grids), n_rows, row_len)
    n_terms = next_pow2(row_len)
    outs = []
    for j in range(w.shape[0]):
        terms = [backend.mult_pt(ct, _padded(w[j, c, r], s))
                 for c, g in enumerate(grids) for r, ct in enumerate(g.rows)
                 if np.any(w[j, c, r])]
        if not terms:
            continue
        total = backend.rotate_sum(backend.add_many(terms), n_terms, mode)
        outs.append(_isolate(backend, total, j))
    return _finish_dense(backend, outs, b, grids[0].rows[0], s)


def _finish_dense(backend, outs, b, template: Ciphertext, s: int) -> Ciphertext:
    if not outs:
        # all weights zero: the result is the bias alone
        zero = backend.mult_pt(backend.mult_pt(template, 0.0), 0.0)
        return backend.add_plain(zero, _padded(b, s))
    return backend.add_plain(backend.add_many(outs), _padded(b, s))


def dense(backend, c: Ciphertext, w, b, mode: str = "tree") -> Ciphertext:
    """Matrix-vector product with plaintext weights.  Consumes two levels."""
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if w.ndim != 2:
        raise ShapeError(f"weight matrix must be 2-D, got {w.shape}")
    s = c.slot_count
    n_out, n_in = w.shape
    if n_in > s or n_out > s or b.size != n_out:
        raise ShapeError(f"layer {w.shape} with {b.size} biases does not fit {s} slots")
    n_terms = next_pow2(n_in)
    outs = []
    for j in range(n_out):
        if not np.any(w[j]):
            continue
        prod = backend.mult_pt(c, _padded(w[j], s))
        outs.append(_isolate(backend, backend.rotate_sum(prod, n_terms, mode), j))
    return _finish_dense(backend, outs, b, c, s)


def eval_poly(backend, c: Ciphertext, coeffs) -> Ciphertext:
    """Evaluate a cleartext polynomial on a ciphertext in depth ceil(log2(deg + 1)).

    Each monomial c_k x^k is split as (c_k x^r) * x^(2^j) with k = 2^j + r,
    folding the scalar into the shallower factor; powers x^(2^j) come from
    repeated squaring and are shared between terms.
    """
    coeffs = [float(v) for v in coeffs]
    while coeffs and coeffs[-1] == 0.0:
        coeffs.pop()
    if not coeffs:
        return backend.mult_pt(c, 0.0)
    pow2 = {1: c}

    def power_of_two(p: int) -> Ciphertext:
        if p not in pow2:
            half = power_of_two(p // 2)
            pow2[p] = backend.mult_ct(half, half)
        return pow2[p]

    def scaled(k: int, a: float) -> Ciphertext:
        if k == 1:
            return backend.mult_pt(c, a)
        top = 1 << (k.bit_length() - 1)
        rest = k - top
        if rest == 0:
            return backend.mult_ct(scaled(top // 2, a), power_of_two(top // 2))
        return backend.mult_ct(scaled(rest, a), power_of_two(top))

    terms = [scaled(k, a) for k, a in enumerate(coeffs) if k >= 1 and a != 0.0]
    if not terms:
        return backend.add_plain(backend.mult_pt(c, 0.0), coeffs[0])
    out = backend.add_many(terms)
    if coeffs[0] != 0.0:
        out = backend.add_plain(out, coeffs[0])
    return out


def compg_sign(backend, c: Ciphertext, depth: int = approx.DEFAULT_COMPG_DEPTH) -> Ciphertext:
    """Composite polynomial approximation of sign on [-1, 1]."""
    for p in approx.compg_schedule(depth):
        c = eval_poly(backend, c, p)
    return c


def relu_approx(backend, c: Ciphertext, spec: ActivationSpec) -> Ciphertext:
    """ReLU(x) ~= x * (CompG(x / scale) + 1) / 2.

    The input is scaled into [-1, 1] for the comparison only; multiplying the
    step by the unscaled input restores the original range directly.
    """
    scaled = backend.mult_pt(c, 1.0 / spec.scale_factor)
    half = backend.mult_pt(c, 0.5)
    sign = compg_sign(backend, scaled, spec.compg_depth)
    return backend.add(backend.mult_ct(half, sign), half)


def tanh_poly(backend, c: Ciphertext, spec: ActivationSpec) -> Ciphertext:
    """Degree-8 polynomial tanh on inputs normalized by ``spec.scale_factor``."""
    if spec.scale_factor != 1.0:
        c = backend.mult_pt(c, 1.0 / spec.scale_factor)
    return eval_poly(backend, c, spec.tanh_coeffs)


def activate(backend, c: Ciphertext, spec: ActivationSpec | None) -> Ciphertext:
    if spec is None or spec.kind == IDENTITY:
        return c
    if spec.kind == RELU:
        return relu_approx(backend, c, spec)
    return tanh_poly(backend, c, spec)


def activate_grids(backend, grids: Sequence[CipherGrid], spec: ActivationSpec | None):
    return [CipherGrid([activate(backend, ct, spec) for ct in g.rows], g.row_len)
            for g in grids]


@dataclass(frozen=True)
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: ActivationSpec | None = None


def action_head(backend, latent: Ciphertext, layers: Sequence[DenseLayer],
                mode: str = "tree") -> Ciphertext:
    """The MLP that stands in for the action sampler: dense layers with activations."""
    c = latent
    for layer in layers:
        c = dense(backend, c, layer.weight, layer.bias, mode)
        c = activate(backend, c, layer.activation)
    return c


def conv_depth(height: int, width: int) -> int:
    """Levels consumed by :func:`conv_block` (activation excluded).

    Two DFT passes each way, two transposes, the spectral product and the
    stride mask.
    """
    log_m = next_pow2(height).bit_length() - 1
    log_n = next_pow2(width).bit_length() - 1
    return 2 * log_n + 2 * log_m + 4


DENSE_DEPTH = 2


def conv_row(backend, c: Ciphertext, taps, width: int, n: int | None = None,
             levels: int = 1) -> Ciphertext:
    """Valid 1-D cross-correlation of one encrypted row, computed spectrally.

    The row occupies the leading ``width`` slots (zeros after).  Each DFT is
    built with ``levels`` merged stages, so the circuit costs
    2 * levels + 2 levels in total; ``levels=1`` gives a depth-4 circuit
    shallow enough for a short CKKS modulus chain.
    """
    taps = np.asarray(taps, dtype=float).reshape(-1)
    k = taps.size
    n = next_pow2(width) if n is None else n
    if k > width or n < width or n > c.slot_count:
        raise ShapeError(f"cannot correlate width {width} with {k} taps in size {n}")
    kernel = np.zeros(n)
    kernel[:k] = taps[::-1]
    spectrum = np.fft.fft(kernel)[bit_reverse_indices(n)]
    c = apply_hft(backend, c, build_plan(n, FORWARD, "bitrev", levels))
    c = backend.mult_pt(c, as_slotvec(spectrum, c.slot_count))
    c = apply_hft(backend, c, build_plan(n, INVERSE, "bitrev", levels))
    (mask, _), = stride_masks(c.slot_count, width - k + 1, 1)
    return backend.mult_pt(backend.rotate_left(c, k - 1), mask)
