"""Encrypted inference of a convolutional actor network under the FHE slot model."""

from .engine import Ciphertext, CostMeter, KeySet, NoiseModel, SimulatorBackend
from .errors import (
    DepthExhausted,
    EncodingError,
    FheError,
    KeyMismatchError,
    MissingKeyError,
    PackingError,
    ParameterError,
    PlanError,
    ScaleError,
    ShapeError,
)
from .hft import CipherGrid, DftPlan, apply_hft, build_plan, transpose_grid
from .layers import (
    ActivationSpec,
    ConvSpec,
    action_head,
    apply_stride,
    conv2d_freq,
    dense,
    flatten_dense,
    pack_input,
    relu_approx,
    tanh_poly,
)
from .model import ModelConfig, ModelWeights
from .pipeline import ParityReport, encrypted_forward, run_bench, run_parity
from .reference import BlockTrace, forward_exact, forward_poly, mae, r_squared

__version__ = "0.1.0"
