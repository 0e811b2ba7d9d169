import numpy as np
import pytest

from conftest import correlate2d_oracle
from fhenav.engine import SimulatorBackend
from fhenav.errors import ShapeError
from fhenav.hft import CipherGrid
from fhenav.layers import (
    DENSE_DEPTH,
    RELU,
    TANH,
    ActivationSpec,
    ConvSpec,
    DenseLayer,
    action_head,
    activate,
    apply_stride,
    conv2d_freq,
    conv_block,
    conv_depth,
    conv_row,
    dense,
    eval_poly,
    flatten_dense,
    pack_input,
    stride_masks,
    unpack_input,
)


def encrypt_grid(be, a):
    rows = []
    for r in a:
        v = np.zeros(be.slot_count)
        v[: len(r)] = r
        rows.append(be.encrypt(v))
    return CipherGrid(rows, a.shape[1])


def conv_oracle(x, filters, bias, stride):
    out = []
    for o in range(filters.shape[0]):
        acc = sum(correlate2d_oracle(x[i], filters[o, i], stride) for i in range(x.shape[0]))
        out.append(acc + bias[o])
    return np.array(out)


def run_conv(x, filters, bias, stride, slots=16):
    be = SimulatorBackend.create(slots, max_level=60)
    spec = ConvSpec(filters, bias, stride)
    out = conv_block(be, [encrypt_grid(be, c) for c in x], spec)
    return be, np.array([g.decrypt(be).real for g in out])


def test_pack_input_layout():
    be = SimulatorBackend.create(8)
    frames = np.arange(12.0).reshape(3, 2, 2)
    g = pack_input(be, frames, (2, 2))
    assert (g.n_rows, g.row_len) == (2, 6)
    assert np.allclose(g.decrypt(be), [[0, 1, 4, 5, 8, 9], [2, 3, 6, 7, 10, 11]])
    assert np.allclose(unpack_input(g.decrypt(be)), frames)


def test_pack_input_errors():
    be = SimulatorBackend.create(8)
    with pytest.raises(ShapeError):
        pack_input(be, np.zeros((2, 2, 2)), (2, 2))
    with pytest.raises(ShapeError):
        pack_input(be, np.zeros((3, 2, 2)), (3, 3))
    with pytest.raises(ShapeError):
        pack_input(be, np.zeros((3, 2, 4)), None)
    with pytest.raises(ShapeError):
        pack_input(be, np.full((3, 2, 2), np.inf), (2, 2))


def test_delta_filter_is_identity_on_valid_region(rng):
    x = rng.normal(size=(1, 8, 8))
    f = np.zeros((1, 1, 3, 3))
    f[0, 0, 0, 0] = 1.0
    _, out = run_conv(x, f, np.zeros(1), 1)
    assert np.allclose(out[0], x[0, :6, :6], atol=1e-9)


def test_box_filter_on_ones():
    _, out = run_conv(np.ones((1, 8, 8)), np.ones((1, 1, 3, 3)), np.zeros(1), 1)
    assert np.allclose(out, 9.0)


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("shape", [(8, 8), (9, 13), (16, 16)])
def test_random_multichannel_conv(stride, shape, rng):
    x = rng.normal(size=(2, *shape))
    f = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    _, out = run_conv(x, f, b, stride)
    assert np.max(np.abs(out - conv_oracle(x, f, b, stride))) <= 1e-9


def test_stride_two_layout():
    # 4x4 input, 3x3 ones: the valid region is 2x2, stride 2 keeps (0, 0)
    x = np.arange(16.0).reshape(1, 4, 4)
    _, out = run_conv(x, np.ones((1, 1, 3, 3)), np.zeros(1), 2)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == pytest.approx(x[0, :3, :3].sum())


def test_stride_masks():
    (mask, r), = stride_masks(8, 5, 1)
    assert r == 0 and np.array_equal(mask, [1, 1, 1, 1, 1, 0, 0, 0])
    pairs = stride_masks(8, 5, 2)
    assert [r for _, r in pairs] == [0, 1, 2]
    for mask, _ in pairs:
        assert np.array_equal(mask * mask, mask)


def test_conv_is_linear(rng):
    f = rng.normal(size=(1, 1, 3, 3))
    x, y = rng.normal(size=(2, 1, 8, 8))
    zero = np.zeros(1)
    _, cx = run_conv(x, f, zero, 1)
    _, cy = run_conv(y, f, zero, 1)
    _, cxy = run_conv(2.0 * x - y, f, zero, 1)
    assert np.allclose(cxy, 2.0 * cx - cy, atol=1e-9)


@pytest.mark.parametrize("shape", [(8, 8), (10, 12)])
def test_conv_depth_matches_levels_used(shape, rng):
    be, _ = run_conv(rng.normal(size=(1, *shape)), rng.normal(size=(1, 1, 3, 3)), np.zeros(1), 2)
    assert be.meter.depth_used == conv_depth(*shape)


def test_filter_larger_than_image():
    be = SimulatorBackend.create(8)
    g = encrypt_grid(be, np.ones((2, 2)))
    with pytest.raises(ShapeError):
        conv2d_freq(be, [g], ConvSpec(np.ones((1, 1, 3, 3)), np.zeros(1)))
    with pytest.raises(ShapeError):
        conv2d_freq(be, [g, g], ConvSpec(np.ones((1, 1, 1, 1)), np.zeros(1)))


def test_apply_stride_rejects_oversized_region():
    be = SimulatorBackend.create(8)
    g = encrypt_grid(be, np.ones((4, 4)))
    with pytest.raises(ShapeError):
        apply_stride(be, g, 1, (2, 2), (3, 3))


def test_conv_spec_validation():
    with pytest.raises(ShapeError):
        ConvSpec(np.ones((3, 3)), np.zeros(1))
    with pytest.raises(ShapeError):
        ConvSpec(np.ones((2, 1, 3, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        ConvSpec(np.ones((1, 1, 3, 3)), np.zeros(1), stride=0)


def test_flatten_dense(rng):
    be = SimulatorBackend.create(16, max_level=10)
    feats = rng.normal(size=(2, 3, 5))
    grids = [encrypt_grid(be, f) for f in feats]

    out = flatten_dense(be, grids, np.zeros((4, 30)), np.arange(4.0))
    assert np.allclose(be.decrypt(out)[:4], np.arange(4.0))

    w = np.zeros((1, 30))
    w[0, 17] = 1.0
    out = flatten_dense(be, grids, w, np.zeros(1))
    assert be.decrypt(out)[0] == pytest.approx(feats.reshape(-1)[17])

    w, b = rng.normal(size=(6, 30)), rng.normal(size=6)
    out = flatten_dense(be, grids, w, b)
    assert out.level == 10 - DENSE_DEPTH
    assert np.allclose(be.decrypt(out)[:6], w @ feats.reshape(-1) + b, atol=1e-9)
    assert np.allclose(be.decrypt(out)[6:], 0, atol=1e-12)
    with pytest.raises(ShapeError):
        flatten_dense(be, grids, np.zeros((2, 29)), np.zeros(2))


def test_flatten_dense_64_outputs(rng):
    be = SimulatorBackend.create(64, max_level=4)
    feats = rng.normal(size=(3, 5, 7))
    w, b = rng.normal(size=(64, feats.size)), rng.normal(size=64)
    out = flatten_dense(be, [encrypt_grid(be, f) for f in feats], w, b)
    assert np.max(np.abs(be.decrypt(out) - (w @ feats.reshape(-1) + b))) <= 1e-5


@pytest.mark.parametrize("mode", ["tree", "naive"])
def test_dense(mode, rng):
    be = SimulatorBackend.create(64, max_level=10)
    x = rng.normal(size=64)
    c = be.encrypt(x)
    assert np.allclose(be.decrypt(dense(be, c, np.eye(64), np.zeros(64), mode)), x, atol=1e-9)
    ones = be.decrypt(dense(be, c, np.ones((1, 64)), np.zeros(1), mode))
    assert ones[0] == pytest.approx(x.sum())
    w, b = rng.normal(size=(64, 64)), rng.normal(size=64)
    out = dense(be, c, w, b, mode)
    assert out.level == 10 - DENSE_DEPTH
    assert np.allclose(be.decrypt(out), w @ x + b, atol=1e-9)


def test_dense_shape_errors():
    be = SimulatorBackend.create(8)
    c = be.encrypt(np.ones(8))
    with pytest.raises(ShapeError):
        dense(be, c, np.ones((2, 16)), np.zeros(2))
    with pytest.raises(ShapeError):
        dense(be, c, np.ones((2, 8)), np.zeros(3))


def test_eval_poly_depth_and_values(rng):
    be = SimulatorBackend.create(16, max_level=10)
    x = rng.uniform(-1, 1, 16)
    coeffs = rng.normal(size=8)
    out = eval_poly(be, be.encrypt(x), coeffs)
    assert out.level == 10 - 3
    assert np.allclose(be.decrypt(out), np.polynomial.polynomial.polyval(x, coeffs), atol=1e-9)
    const = eval_poly(be, be.encrypt(x), [2.5])
    assert np.allclose(be.decrypt(const), 2.5)


def test_relu_and_tanh_activations():
    be = SimulatorBackend.create(8, max_level=40)
    x = np.array([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0])
    relu = ActivationSpec(RELU, scale_factor=4.0)
    out = activate(be, be.encrypt(x), relu)
    assert np.allclose(be.decrypt(out), relu.plain(x), atol=1e-9)
    assert np.max(np.abs(be.decrypt(out) - np.maximum(x, 0))) <= 0.04
    assert be.meter.depth_used == relu.depth == 17

    tanh = ActivationSpec(TANH, scale_factor=2.0)
    out = activate(be, be.encrypt(x / 2), tanh)
    assert np.allclose(be.decrypt(out), np.tanh(x / 4), atol=5e-3)
    assert activate(be, be.encrypt(x), None) is not None


def test_activation_spec_validation():
    with pytest.raises(ValueError):
        ActivationSpec("swish")
    with pytest.raises(ValueError):
        ActivationSpec(RELU, scale_factor=0.0)


def test_action_head(rng):
    be = SimulatorBackend.create(16, max_level=30)
    x = rng.uniform(-1, 1, 16)
    layers = [DenseLayer(rng.normal(size=(16, 16)) * 0.2, rng.normal(size=16) * 0.1,
                         ActivationSpec(TANH)),
              DenseLayer(rng.normal(size=(1, 16)), np.zeros(1))]
    out = be.decrypt(action_head(be, be.encrypt(x), layers))[0].real
    h = np.polynomial.polynomial.polyval(layers[0].weight @ x + layers[0].bias,
                                         layers[0].activation.tanh_coeffs)
    assert out == pytest.approx(float((layers[1].weight @ h)[0]), abs=1e-9)


def test_conv_row(rng):
    be = SimulatorBackend.create(16)
    x = rng.normal(size=12)
    taps = rng.normal(size=3)
    v = np.zeros(16)
    v[:12] = x
    out = conv_row(be, be.encrypt(v), taps, 12)
    assert be.meter.depth_used == 4
    expected = np.correlate(x, taps, "valid")
    assert np.allclose(be.decrypt(out)[:10], expected, atol=1e-9)
    assert np.allclose(be.decrypt(out)[10:], 0, atol=1e-9)
