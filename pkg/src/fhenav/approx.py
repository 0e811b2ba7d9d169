"""Polynomial stand-ins for the non-polynomial activations.

Everything here is cleartext: coefficient construction plus NumPy evaluators.
The encrypted evaluators in :mod:`fhenav.layers` consume the same
coefficients, and the reference model uses the NumPy evaluators below, so the
two routes share coefficients but not evaluation code.

Coefficient arrays are monomial, lowest degree first.
"""

from __future__ import annotations

from functools import lru_cache
from math import comb

import numpy as np
from numpy.polynomial import chebyshev as cheb
from numpy.polynomial import polynomial as poly

# Odd polynomials g_n from the composite comparison method: they push inputs
# away from zero faster than f_n but do not converge to 1 on their own.
G_POLYS = {
    1: np.array([0, 2126, 0, -1359]) / 2**10,
    2: np.array([0, 3334, 0, -6108, 0, 3796]) / 2**10,
    3: np.array([0, 4589, 0, -16577, 0, 25614, 0, -12860]) / 2**10,
    4: np.array([0, 5850, 0, -34974, 0, 97015, 0, -113492, 0, 46623]) / 2**10,
}

COMPG_DEGREE = 3          # use f_3 and g_3 (degree 7, depth 3)
DEFAULT_COMPG_DEPTH = 5   # g_3^3 then f_3^2: |err| <= 2^-7 on 0.01 <= |x| <= 1
RELU_DEAD_BAND = 0.01     # fraction of the scale excluded from the ReLU bound
TANH_DEGREE = 8
TANH_INTERVAL = 2.0


@lru_cache(maxsize=None)
def f_poly(n: int) -> np.ndarray:
    """f_n(x) = sum_{i<=n} C(2i, i) / 4^i * x * (1 - x^2)^i."""
    out = np.zeros(2 * n + 2)
    for i in range(n + 1):
        term = poly.polymul([0.0, 1.0], poly.polypow([1.0, 0.0, -1.0], i))
        out[: term.size] += term * comb(2 * i, i) / 4**i
    out.setflags(write=False)
    return out


def compg_schedule(depth: int = DEFAULT_COMPG_DEPTH, n: int = COMPG_DEGREE) -> list[np.ndarray]:
    """Polynomials to compose, first applied first.

    ``depth`` compositions are split into ``depth - depth // 2`` copies of
    g_n followed by ``max(1, depth // 2)`` copies of f_n.
    """
    if depth < 1:
        raise ValueError("CompG needs at least one composition")
    n_f = max(1, depth // 2)
    n_g = depth - n_f
    return [G_POLYS[n]] * n_g + [f_poly(n)] * n_f


def poly_depth(coeffs) -> int:
    """Multiplicative depth of evaluating a polynomial with folded scalars."""
    degree = len(np.trim_zeros(np.asarray(coeffs, dtype=float), "b")) - 1
    return 0 if degree <= 0 else int(np.ceil(np.log2(degree + 1)))


def compg_depth_levels(depth: int = DEFAULT_COMPG_DEPTH) -> int:
    return sum(poly_depth(p) for p in compg_schedule(depth))


def compg_plain(x, depth: int = DEFAULT_COMPG_DEPTH) -> np.ndarray:
    """Approximate sign(x) on [-1, 1]."""
    y = np.asarray(x, dtype=float)
    for p in compg_schedule(depth):
        y = poly.polyval(y, p)
    return y


def relu_poly_plain(x, scale_factor: float, depth: int = DEFAULT_COMPG_DEPTH) -> np.ndarray:
    """x * step(x) with step = (CompG(x / scale) + 1) / 2."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x * (compg_plain(x / scale_factor, depth) + 1.0)


@lru_cache(maxsize=None)
def fit_tanh(degree: int = TANH_DEGREE, interval: float = TANH_INTERVAL,
             iterations: int = 200) -> tuple[float, ...]:
    """Near-minimax odd fit of tanh on [-interval, interval].

    Chebyshev-basis least squares, reweighted by the residual (Lawson's
    algorithm) so the error equioscillates.  Even coefficients are zeroed.
    """
    u = np.cos(np.linspace(0.0, np.pi, 4001))
    target = np.tanh(interval * u)
    weights = np.ones_like(u)
    for _ in range(iterations):
        c = cheb.chebfit(u, target, degree, w=np.sqrt(weights))
        resid = np.abs(cheb.chebval(u, c) - target)
        weights = weights * resid
        weights /= weights.sum()
    mono = cheb.cheb2poly(c) / interval ** np.arange(degree + 1)
    mono[0::2] = 0.0
    return tuple(float(v) for v in mono)


def tanh_poly_plain(x, coeffs=None, scale_factor: float = 1.0) -> np.ndarray:
    coeffs = fit_tanh() if coeffs is None else coeffs
    x = np.asarray(x, dtype=float)
    if scale_factor != 1.0:
        x = x / scale_factor
    return poly.polyval(x, np.asarray(coeffs, dtype=float))


def tanh_exact(x, scale_factor: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.tanh(x / scale_factor if scale_factor != 1.0 else x)
