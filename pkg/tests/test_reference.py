import json

import numpy as np
import pytest

from conftest import correlate2d_oracle
from fhenav.errors import ShapeError
from fhenav.model import BLOCKS, DESK_CONFIG, ModelConfig, ModelWeights, generate_weights
from fhenav.reference import BlockTrace, forward_exact, forward_poly, mae, r_squared, spatial_conv

IDENTITY_ALL = {name: "identity" for name in
                ("conv1", "conv2", "conv3", "linear1", "linear2", "linear3",
                 "head.0", "head.1", "head.2")}


def zero_weights(cfg):
    return ModelWeights(cfg, {k: np.zeros(s) for k, s in cfg.tensor_shapes().items()})


def test_mae_example():
    a = BlockTrace([("x", np.array([1.0, 2.0]))])
    b = BlockTrace([("x", np.array([2.0, 4.0]))])
    assert mae(a, b) == {"x": 1.5}
    with pytest.raises(ShapeError):
        mae(a, BlockTrace([("x", np.zeros(3))]))


def test_r_squared():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(np.full(4, y.mean()), y) == 0.0
    assert r_squared([1, 2, 3, 5], y) == pytest.approx(1 - 1 / 5)
    with pytest.raises(ShapeError):
        r_squared([1, 2], y)


def test_spatial_conv_matches_loop(rng):
    x = rng.normal(size=(2, 9, 11))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    for stride in (1, 2):
        got = spatial_conv(x, w, b, stride)
        for o in range(3):
            want = sum(correlate2d_oracle(x[i], w[o, i], stride) for i in range(2)) + b[o]
            assert np.allclose(got[o], want)


def test_hand_computed_4x4():
    x = np.arange(16.0).reshape(1, 4, 4)
    w = np.ones((1, 1, 3, 3))
    # windows at (0,0),(0,1),(1,0),(1,1): sums of 3x3 blocks
    assert np.array_equal(spatial_conv(x, w, np.zeros(1))[0], [[45, 54], [81, 90]])
    assert np.array_equal(spatial_conv(x, w, np.ones(1), 2)[0], [[46]])


def test_zero_weights_give_bias_trace():
    cfg = ModelConfig(**DESK_CONFIG)
    w = zero_weights(cfg)
    w.tensors["head.2.bias"] = np.array([0.25])
    trace = forward_exact(np.ones((3, 16, 16)), w)
    assert trace.names == list(BLOCKS)
    assert np.all(trace["conv1"] == 0)
    assert trace["head"].tolist() == [0.25]


def test_delta_filter_passes_input():
    cfg = ModelConfig(**DESK_CONFIG, activations=IDENTITY_ALL)
    w = zero_weights(cfg)
    w.tensors["conv1.weight"][0, 0, 0, 0] = 1.0
    frames = np.random.default_rng(0).normal(size=(3, 16, 16))
    image = np.concatenate(list(frames), axis=1)
    assert np.array_equal(forward_exact(frames, w)["conv1"][0], image[:14, :46])


def test_identity_activations_poly_equals_exact(desk_weights, desk_inputs):
    w = desk_weights.without_activations()
    a, b = forward_exact(desk_inputs[0], w), forward_poly(desk_inputs[0], w)
    assert all(v == 0.0 for v in mae(a, b).values())


def test_poly_trace_close_to_exact(desk_weights, desk_inputs):
    errs = mae(forward_exact(desk_inputs[0], desk_weights), forward_poly(desk_inputs[0], desk_weights))
    assert max(errs.values()) < 0.15


def test_block_trace_json_roundtrip(desk_weights, desk_inputs):
    trace = forward_exact(desk_inputs[1], desk_weights)
    back = BlockTrace.from_dict(json.loads(trace.to_json()))
    assert back.names == trace.names
    assert all(np.array_equal(back[n], trace[n]) for n in trace.names)
    with pytest.raises(KeyError):
        trace["conv9"]
    with pytest.raises(ShapeError):
        BlockTrace([("x", np.array([np.nan]))])


def test_wrong_frame_shape(desk_weights):
    with pytest.raises(ShapeError):
        forward_exact(np.zeros((3, 8, 8)), desk_weights)


@pytest.mark.parametrize("layer,block", [("conv2", "conv2"), ("linear1", "linear1"),
                                         ("linear3", "linear3"), ("head.1", "head")])
def test_error_comes_only_from_the_approximated_activation(desk_weights, desk_inputs, layer, block):
    # weights calibrated for a network where only ``layer`` is nonlinear
    acts = dict(IDENTITY_ALL, **{layer: desk_weights.config.activation(layer).kind})
    solo = generate_weights(0, ModelConfig(**DESK_CONFIG, activations=acts))
    errs = mae(forward_exact(desk_inputs[3], solo), forward_poly(desk_inputs[3], solo))
    cut = BLOCKS.index(block)
    assert all(errs[b] == 0.0 for b in BLOCKS[:cut])
    assert errs[block] > 0.0
