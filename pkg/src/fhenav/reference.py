"""Cleartext forward passes used as parity oracles.

Convolutions are direct sliding-window sums, deliberately independent of the
spectral code in :mod:`fhenav.hft` and :mod:`fhenav.layers`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .model import BLOCKS, CONV_LAYERS, HEAD_LAYERS, ModelWeights


def spatial_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation of (C, H, W) features with (O, C, k, k) kernels."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"input {x.shape} does not match kernels {w.shape}")
    windows = sliding_window_view(x, w.shape[2:], axis=(1, 2))
    out = np.einsum("chwab,ocab->ohw", windows, w) + b[:, None, None]
    return out[:, ::stride, ::stride]


def _layers(frames, weights: ModelWeights, exact: bool) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
    """Yield (layer, pre-activation, post-activation) in evaluation order."""
    cfg = weights.config
    frames = np.asarray(frames, dtype=float)
    if frames.shape != (cfg.n_frames, *cfg.frame_shape):
        raise ShapeError(f"frames have shape {frames.shape}, expected "
                         f"{(cfg.n_frames, *cfg.frame_shape)}")
    t = weights.tensors
    x = np.concatenate(list(frames), axis=1)[None]
    for i, layer in enumerate(CONV_LAYERS):
        pre = spatial_conv(x, t[f"{layer}.weight"], t[f"{layer}.bias"], cfg.strides[i])
        x = _activate(pre, weights, layer, exact)
        yield layer, pre, x
    x = x.reshape(-1)
    for layer in ("linear1", "linear2", "linear3") + HEAD_LAYERS:
        pre = t[f"{layer}.weight"] @ x + t[f"{layer}.bias"]
        x = _activate(pre, weights, layer, exact)
        yield layer, pre, x


def _activate(x, weights: ModelWeights, layer: str, exact: bool) -> np.ndarray:
    spec = weights.config.activation(layer)
    return spec.exact(x) if exact else spec.plain(x)


def pre_activations(frames, weights: ModelWeights, upto: str, exact: bool = True) -> np.ndarray:
    for layer, pre, _ in _layers(frames, weights, exact):
        if layer == upto:
            return pre
    raise KeyError(upto)


@dataclass
class BlockTrace:
    """Per-block outputs in pipeline order."""

    blocks: list[tuple[str, np.ndarray]]

    def __post_init__(self):
        for name, value in self.blocks:
            if not np.all(np.isfinite(value)):
                raise ShapeError(f"block {name} has non-finite values")

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.blocks]

    def __getitem__(self, name: str) -> np.ndarray:
        for block, value in self.blocks:
            if block == name:
                return value
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"blocks": [{"name": n, "shape": list(v.shape), "values": v.reshape(-1).tolist()}
                           for n, v in self.blocks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "BlockTrace":
        return cls([(b["name"], np.array(b["values"], dtype=float).reshape(b["shape"]))
                    for b in d["blocks"]])


def _forward(frames, weights: ModelWeights, exact: bool) -> BlockTrace:
    outs = {}
    for layer, _, post in _layers(frames, weights, exact):
        outs[layer] = post
    blocks = [(name, outs[name]) for name in BLOCKS[:-1]]
    blocks.append(("head", outs[HEAD_LAYERS[-1]]))
    return BlockTrace(blocks)


def forward_exact(frames, weights: ModelWeights) -> BlockTrace:
    """Direct convolution, true ReLU and tanh."""
    return _forward(frames, weights, exact=True)


def forward_poly(frames, weights: ModelWeights) -> BlockTrace:
    """Same pipeline with the polynomial ReLU and tanh used under encryption."""
    return _forward(frames, weights, exact=False)


def mae(a: BlockTrace, b: BlockTrace) -> dict[str, float]:
    """Mean absolute error per block over the blocks ``a`` and ``b`` share."""
    names = [n for n in a.names if n in b.names]
    out = {}
    for name in names:
        x, y = np.asarray(a[name]), np.asarray(b[name])
        if x.shape != y.shape:
            raise ShapeError(f"block {name}: shapes {x.shape} and {y.shape} differ")
        out[name] = float(np.mean(np.abs(x - y)))
    return out


def r_squared(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"{pred.size} predictions for {truth.size} targets")
    ss_res = float(np.sum((truth - pred) ** 2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else float("-inf")
    return 1.0 - ss_res / ss_tot
