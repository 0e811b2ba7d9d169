"""Model weights, architecture config, fixtures and the input file format.

Weights file: one JSON document ``{"config": {...}, "tensors": {...}}``.
Tensors are nested row-major lists keyed by ``<layer>.weight`` /
``<layer>.bias``.  Convolution weights are (out, in, k, k) cross-correlation
kernels; dense weights are (out, in) and act on the channel-major flattening
of the last feature map.

Input file: plain text, one image row per line with whitespace-separated
numbers; the frames are stacked vertically (3 x 50 lines of 50 values for the
default config).  Lines starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import approx
from .errors import ShapeError
from .layers import IDENTITY, RELU, TANH, ActivationSpec, ConvSpec, DenseLayer

BLOCKS = ("conv1", "conv2", "conv3", "linear1", "linear2", "linear3", "head")
CONV_LAYERS = ("conv1", "conv2", "conv3")
HEAD_LAYERS = ("head.0", "head.1", "head.2")
LAYERS = CONV_LAYERS + ("linear1", "linear2", "linear3") + HEAD_LAYERS

DEFAULT_ACTIVATIONS = {
    "conv1": RELU, "conv2": RELU, "conv3": RELU,
    "linear1": RELU, "linear2": TANH, "linear3": TANH,
    "head.0": TANH, "head.1": TANH, "head.2": IDENTITY,
}

CALIBRATION_MARGIN = 1.25
TANH_TARGET = 1.5          # calibrated max |pre-activation| of tanh layers
CALIBRATION_INPUTS = 16


@dataclass
class ModelConfig:
    frame_shape: tuple[int, int] = (50, 50)
    n_frames: int = 3
    slot_count: int = 256
    kernel_size: int = 3
    conv_channels: tuple[int, ...] = (1, 4, 32, 128)
    strides: tuple[int, ...] = (2, 2, 2)
    latent_dim: int = 64
    shared_dims: tuple[int, int] = (64, 64)
    head_dims: tuple[int, ...] = (64, 64, 1)
    compg_depth: int = approx.DEFAULT_COMPG_DEPTH
    activations: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_ACTIVATIONS))
    scale_factors: dict[str, float] = field(default_factory=dict)
    tanh_coeffs: tuple[float, ...] = field(default_factory=approx.fit_tanh)

    def __post_init__(self):
        self.frame_shape = tuple(int(v) for v in self.frame_shape)
        self.conv_channels = tuple(int(v) for v in self.conv_channels)
        self.strides = tuple(int(v) for v in self.strides)
        self.shared_dims = tuple(int(v) for v in self.shared_dims)
        self.head_dims = tuple(int(v) for v in self.head_dims)
        self.tanh_coeffs = tuple(float(v) for v in self.tanh_coeffs)
        if len(self.conv_channels) != 4 or len(self.strides) != 3:
            raise ShapeError("three convolution blocks need 4 channel counts and 3 strides")
        if self.conv_channels[0] != 1:
            raise ShapeError("the packed input image has a single channel")
        if len(self.shared_dims) != 2 or len(self.head_dims) != 3:
            raise ShapeError("expected 2 shared linear layers and a 3-layer head")
        for name, kind in self.activations.items():
            if name not in LAYERS:
                raise ShapeError(f"activation for unknown layer {name!r}")
            ActivationSpec(kind)  # validates the kind

    @property
    def image_shape(self) -> tuple[int, int]:
        h, w = self.frame_shape
        return h, w * self.n_frames

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """(channels, rows, cols) after every convolution block, input first."""
        h, w = self.image_shape
        shapes = [(1, h, w)]
        k = self.kernel_size
        for c_out, s in zip(self.conv_channels[1:], self.strides):
            if k > h or k > w:
                raise ShapeError(f"{k}x{k} filter does not fit a {h}x{w} feature map")
            h, w = (h - k) // s + 1, (w - k) // s + 1
            shapes.append((c_out, h, w))
        return shapes

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel_size
        ch = self.conv_channels
        shapes: dict[str, tuple[int, ...]] = {}
        for i, name in enumerate(CONV_LAYERS):
            shapes[f"{name}.weight"] = (ch[i + 1], ch[i], k, k)
            shapes[f"{name}.bias"] = (ch[i + 1],)
        c, h, w = self.feature_shapes()[-1]
        dims = [c * h * w, self.latent_dim, *self.shared_dims, *self.head_dims]
        for i, name in enumerate(("linear1", "linear2", "linear3") + HEAD_LAYERS):
            shapes[f"{name}.weight"] = (dims[i + 1], dims[i])
            shapes[f"{name}.bias"] = (dims[i + 1],)
        return shapes

    def activation(self, layer: str) -> ActivationSpec:
        return ActivationSpec(
            kind=self.activations.get(layer, DEFAULT_ACTIVATIONS[layer]),
            scale_factor=float(self.scale_factors.get(layer, 1.0)),
            compg_depth=self.compg_depth,
            tanh_coeffs=self.tanh_coeffs,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ShapeError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


DESK_CONFIG = dict(frame_shape=(16, 16), slot_count=64, conv_channels=(1, 2, 8, 16),
                   strides=(1, 2, 1), latent_dim=16, shared_dims=(16, 16), head_dims=(16, 16, 1))


@dataclass
class ModelWeights:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        self.tensors = {k: np.asarray(v, dtype=float) for k, v in self.tensors.items()}
        self.validate()

    def validate(self) -> None:
        expected = self.config.tensor_shapes()
        missing = set(expected) - set(self.tensors)
        extra = set(self.tensors) - set(expected)
        if missing or extra:
            raise ShapeError(f"tensor names differ: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in expected.items():
            got = self.tensors[name].shape
            if got != shape:
                raise ShapeError(f"{name} has shape {got}, config implies {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ShapeError(f"{name} contains non-finite values")
        c = self.config
        if c.slot_count < max(c.image_shape[1], c.latent_dim, *c.shared_dims, *c.head_dims):
            raise ShapeError(f"{c.slot_count} slots cannot hold the widest layer")

    def conv_spec(self, layer: str) -> ConvSpec:
        i = CONV_LAYERS.index(layer)
        return ConvSpec(self.tensors[f"{layer}.weight"], self.tensors[f"{layer}.bias"],
                        self.config.strides[i])

    def dense_layer(self, layer: str, activation: bool = True) -> DenseLayer:
        act = self.config.activation(layer) if activation else None
        return DenseLayer(self.tensors[f"{layer}.weight"], self.tensors[f"{layer}.bias"], act)

    def without_activations(self) -> "ModelWeights":
        cfg = replace(self.config, activations={name: IDENTITY for name in LAYERS})
        return ModelWeights(cfg, dict(self.tensors))

    def to_json(self) -> str:
        doc = {"config": self.config.to_dict(),
               "tensors": {k: self.tensors[k].tolist() for k in sorted(self.tensors)}}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelWeights":
        doc = json.loads(text)
        if set(doc) != {"config", "tensors"}:
            raise ShapeError("weights document needs exactly 'config' and 'tensors'")
        return cls(ModelConfig.from_dict(doc["config"]), doc["tensors"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "ModelWeights":
        return cls.from_json(Path(path).read_text())


# -- fixtures ---------------------------------------------------------------


def random_frames(rng: np.random.Generator, config: ModelConfig) -> np.ndarray:
    """Three grayscale frames of a few drifting Gaussian blobs, values in [0, 1]."""
    h, w = config.frame_shape
    yy, xx = np.mgrid[0:h, 0:w]
    n_blobs = int(rng.integers(2, 5))
    centers = rng.uniform([0, 0], [h, w], size=(n_blobs, 2))
    velocity = rng.normal(0.0, 1.5, size=(n_blobs, 2))
    widths = rng.uniform(0.08, 0.25, n_blobs) * min(h, w)
    heights = rng.uniform(0.3, 1.0, n_blobs)
    frames = []
    for t in range(config.n_frames):
        img = np.zeros((h, w))
        for (cy, cx), (vy, vx), s, a in zip(centers, velocity, widths, heights):
            img += a * np.exp(-((yy - cy - t * vy) ** 2 + (xx - cx - t * vx) ** 2) / (2 * s * s))
        img += rng.normal(0.0, 0.02, (h, w))
        frames.append(np.clip(img, 0.0, 1.0))
    return np.stack(frames)


def random_inputs(seed: int, config: ModelConfig, count: int) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, 1])
    return [random_frames(rng, config) for _ in range(count)]


def _init_tensors(rng: np.random.Generator, config: ModelConfig) -> dict[str, np.ndarray]:
    tensors = {}
    for name, shape in config.tensor_shapes().items():
        if name.endswith(".bias"):
            tensors[name] = rng.normal(0.0, 0.1, shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
    return tensors


def generate_weights(seed: int, config: ModelConfig | None = None) -> ModelWeights:
    """Seeded random weights, calibrated on held-out random inputs.

    Layers are calibrated in order: ReLU layers get a scale factor of
    ``CALIBRATION_MARGIN`` times the largest observed pre-activation
    magnitude; tanh layers are rescaled so their largest observed
    pre-activation is ``TANH_TARGET``, inside the polynomial's [-2, 2] range.
    """
    from .reference import pre_activations  # circular at import time

    config = ModelConfig(**{**asdict(config or ModelConfig()), "scale_factors": {}})
    rng = np.random.default_rng([seed, 0])
    tensors = _init_tensors(rng, config)
    calib = [random_frames(np.random.default_rng([seed, 2, i]), config)
             for i in range(CALIBRATION_INPUTS)]
    scales: dict[str, float] = {}
    for layer in LAYERS:
        weights = ModelWeights(replace(config, scale_factors=dict(scales)), tensors)
        peak = max(float(np.max(np.abs(pre_activations(x, weights, upto=layer)))) for x in calib)
        peak = max(peak, 1e-12)
        kind = config.activations.get(layer, DEFAULT_ACTIVATIONS[layer])
        if kind == RELU:
            scales[layer] = CALIBRATION_MARGIN * peak
        elif kind == TANH:
            factor = TANH_TARGET / peak
            tensors[f"{layer}.weight"] = tensors[f"{layer}.weight"] * factor
            tensors[f"{layer}.bias"] = tensors[f"{layer}.bias"] * factor
    return ModelWeights(replace(config, scale_factors=scales), tensors)


# -- input files --------------------------------------------------------------


def format_frames(frames: np.ndarray) -> str:
    frames = np.asarray(frames, dtype=float)
    n, h, w = frames.shape
    lines = [f"# {n} frames of {h}x{w}, stacked vertically"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in frames.reshape(n * h, w)]
    return "\n".join(lines) + "\n"


def parse_frames(text: str, n_frames: int = 3) -> np.ndarray:
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append([float(v) for v in line.split()])
    if not rows:
        raise ShapeError("input file holds no rows")
    if len({len(r) for r in rows}) != 1:
        raise ShapeError("input rows have different lengths")
    data = np.array(rows)
    if data.shape[0] % n_frames:
        raise ShapeError(f"{data.shape[0]} rows do not split into {n_frames} frames")
    return data.reshape(n_frames, data.shape[0] // n_frames, data.shape[1])


def save_inputs(directory, inputs) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frames in enumerate(inputs):
        path = directory / f"input_{i:03d}.txt"
        path.write_text(format_frames(frames))
        paths.append(path)
    return paths


def load_inputs(directory, config: ModelConfig) -> list[np.ndarray]:
    paths = sorted(Path(directory).glob("*.txt"))
    if not paths:
        raise ShapeError(f"no input files in {directory}")
    out = []
    for path in paths:
        frames = parse_frames(path.read_text(), config.n_frames)
        if frames.shape[1:] != config.frame_shape:
            raise ShapeError(f"{path.name}: frames are {frames.shape[1:]}, expected {config.frame_shape}")
        out.append(frames)
    return out
