import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fhenav.engine import Ciphertext, CostMeter, KeySet, NoiseModel, SimulatorBackend, as_slotvec
from fhenav.errors import (
    DepthExhausted,
    KeyMismatchError,
    MissingKeyError,
    PackingError,
    ScaleError,
    ShapeError,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_roundtrip_small():
    be = SimulatorBackend.create(4)
    assert np.allclose(be.decrypt(be.encrypt([1, 2, 3, 4])), [1, 2, 3, 4])


def test_non_power_of_two_rejected():
    be = SimulatorBackend.create(64)
    with pytest.raises(PackingError):
        be.encrypt(np.ones(50))
    with pytest.raises(PackingError):
        as_slotvec([1.0])
    with pytest.raises(PackingError):
        as_slotvec([1.0, np.nan])


def test_zero_vector():
    be = SimulatorBackend.create(256)
    assert np.all(be.decrypt(be.encrypt(np.zeros(256))) == 0)


def test_fresh_ciphertext_metadata():
    be = SimulatorBackend.create(8, max_level=7)
    c = be.encrypt(np.arange(8.0))
    assert (c.slot_count, c.level, c.scale) == (8, 7, 2.0 ** 40)


def test_add_and_mult_examples():
    be = SimulatorBackend.create(2)
    assert np.allclose(be.decrypt(be.add(be.encrypt([1, 1]), be.encrypt([2, 3]))), [3, 4])
    assert np.allclose(be.decrypt(be.mult_ct(be.encrypt([2, 3]), be.encrypt([4, 5]))), [8, 15])
    c = be.encrypt([7, -1])
    assert np.allclose(be.decrypt(be.add(c, be.encrypt([0, 0]))), [7, -1])


def test_mult_pt_identity_costs_a_level():
    be = SimulatorBackend.create(8, max_level=3)
    c = be.encrypt(np.arange(8.0))
    d = be.mult_pt(c, np.ones(8))
    assert d.level == 2
    assert np.array_equal(be.decrypt(d), np.arange(8.0))


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=16, max_size=16), st.lists(finite, min_size=16, max_size=16))
def test_homomorphism(a, b):
    be = SimulatorBackend.create(16)
    ca, cb = be.encrypt(a), be.encrypt(b)
    a, b = np.array(a), np.array(b)
    assert np.max(np.abs(be.decrypt(be.add(ca, cb)) - (a + b))) <= 1e-9
    assert np.max(np.abs(be.decrypt(be.mult_ct(ca, cb)) - a * b)) <= 1e-9


def test_depth_exhausted_after_budget():
    be = SimulatorBackend.create(4, max_level=3)
    c = be.encrypt([1, 1, 1, 1])
    for _ in range(3):
        c = be.mult_ct(c, c)
    assert c.level == 0
    with pytest.raises(DepthExhausted):
        be.mult_ct(c, c)
    with pytest.raises(DepthExhausted):
        be.mult_pt(c, 2.0)


def test_level_is_min_after_add():
    be = SimulatorBackend.create(4, max_level=5)
    a = be.encrypt(np.ones(4))
    b = be.mult_pt(a, 1.0)
    assert be.add(a, b).level == 4


def test_shape_and_scale_errors():
    be4 = SimulatorBackend.create(4)
    be8 = SimulatorBackend.create(8, log_scale=40)
    with pytest.raises(ShapeError):
        wide = Ciphertext(np.ones(8, complex), be4.keys.key_id, 8, 1, be4.scale)
        be4.add(be4.encrypt(np.ones(4)), wide)
    other = SimulatorBackend(be8.keys, log_scale=30)
    with pytest.raises(ScaleError):
        be8.add(be8.encrypt(np.ones(8)), other.encrypt(np.ones(8)))


def test_rotate_examples():
    be = SimulatorBackend.create(4)
    c = be.encrypt([1, 2, 3, 4])
    assert np.allclose(be.decrypt(be.rotate_left(c, 1)), [2, 3, 4, 1])
    assert np.allclose(be.decrypt(be.rotate_left(c, 0)), [1, 2, 3, 4])
    assert np.allclose(be.decrypt(be.rotate_left(c, -1)), [4, 1, 2, 3])


@settings(max_examples=30, deadline=None)
@given(st.integers(-40, 40), st.integers(-40, 40))
def test_rotation_group_law(a, b):
    be = SimulatorBackend.create(16)
    m = np.random.default_rng(abs(a * 41 + b)).normal(size=16)
    c = be.encrypt(m)
    two = be.decrypt(be.rotate_left(be.rotate_left(c, a), b))
    assert np.array_equal(two, be.decrypt(be.rotate_left(c, a + b)))
    assert np.array_equal(two, np.roll(m, -(a + b)))


def test_missing_rotation_key():
    be = SimulatorBackend.create(16, rotations="pow2")
    c = be.encrypt(np.ones(16))
    be.rotate_left(c, 4)
    with pytest.raises(MissingKeyError):
        be.rotate_left(c, 3)
    with pytest.raises(KeyError):
        be.rotate_left(c, 5)


def test_keygen_deterministic_and_key_mismatch():
    assert KeySet.generate(8, seed=5) == KeySet.generate(8, seed=5)
    assert KeySet.generate(8, seed=5).key_id != KeySet.generate(8, seed=6).key_id
    a = SimulatorBackend.create(8, seed=1)
    b = SimulatorBackend.create(8, seed=2)
    c = a.encrypt(np.ones(8))
    with pytest.raises(KeyMismatchError):
        b.decrypt(c)
    with pytest.raises(KeyError):
        a.decrypt(c, keys=b.keys)
    with pytest.raises(KeyMismatchError):
        b.add(c, c)


def test_rotate_sum_examples(rng):
    be = SimulatorBackend.create(4)
    assert be.decrypt(be.rotate_sum(be.encrypt([1, 2, 3, 4]), 4))[0] == pytest.approx(10)
    big = SimulatorBackend.create(256)
    m = rng.normal(size=256)
    c = big.encrypt(m)
    tree = big.decrypt(big.rotate_sum(c, 256, "tree"))[0]
    naive = big.decrypt(big.rotate_sum(c, 256, "naive"))[0]
    assert tree.real == pytest.approx(m.sum(), abs=1e-9)
    assert naive.real == pytest.approx(tree.real, abs=1e-9)
    part = big.decrypt(big.rotate_sum(c, 16, "tree"))[0]
    assert part.real == pytest.approx(m[:16].sum(), abs=1e-9)


@pytest.mark.parametrize("n", [2, 8, 64, 256])
def test_rotate_sum_rotation_counts(n):
    be = SimulatorBackend.create(256)
    c = be.encrypt(np.ones(256))
    for mode, expected in (("naive", n - 1), ("tree", int(np.log2(n)))):
        before = be.meter.snapshot()
        be.rotate_sum(c, n, mode)
        assert be.meter.since(before)["rotate"] == expected


def test_rotate_sum_errors():
    be = SimulatorBackend.create(8)
    c = be.encrypt(np.ones(8))
    with pytest.raises(ShapeError):
        be.rotate_sum(c, 16)
    with pytest.raises(ShapeError):
        be.rotate_sum(c, 6, "tree")
    with pytest.raises(ValueError):
        be.rotate_sum(c, 4, "spiral")


def test_meter_counts_and_depth():
    be = SimulatorBackend.create(8, max_level=10)
    c = be.encrypt(np.ones(8))
    d = be.mult_ct(be.mult_pt(c, 2.0), c)
    be.add(be.rotate_left(d, 1), c)
    be.decrypt(d)
    snap = be.meter.snapshot()
    assert snap == {"add": 1, "mult_ct": 1, "mult_pt": 1, "rotate": 1, "rescale": 2,
                    "encrypt": 1, "decrypt": 1}
    assert be.meter.depth_used == 2
    be.meter.reset()
    assert sum(be.meter.snapshot().values()) == 0


def test_cost_determinism():
    def circuit():
        be = SimulatorBackend.create(32, max_level=10)
        c = be.encrypt(np.arange(32.0))
        for r in (1, 2, 5):
            c = be.add(c, be.mult_pt(be.rotate_left(c, r), 0.5))
        be.rotate_sum(c, 32, "naive")
        return be.meter.snapshot()

    assert circuit() == circuit()


def test_meter_thread_safety():
    from concurrent.futures import ThreadPoolExecutor

    meter = CostMeter()
    with ThreadPoolExecutor(4) as pool:
        list(pool.map(lambda _: [meter.count("add") for _ in range(1000)], range(8)))
    assert meter.snapshot()["add"] == 8000


def test_noise_model():
    assert NoiseModel.preset("off").enabled is False
    ckks = NoiseModel.preset("ckks", rng_seed=3)
    assert (ckks.sigma_mult, ckks.sigma_rot) == (1e-4, 1e-5)
    with pytest.raises(ValueError):
        NoiseModel(sigma_mult=-1.0)
    with pytest.raises(ValueError):
        NoiseModel.preset("loud")

    def run(seed):
        be = SimulatorBackend.create(64, noise=NoiseModel.preset("ckks", rng_seed=seed))
        c = be.encrypt(np.ones(64))
        return be.decrypt(be.rotate_left(be.mult_pt(c, 1.0), 3))

    a, b = run(7), run(7)
    assert np.array_equal(a, b)
    err = np.abs(a - 1.0)
    assert 0 < err.max() < 1e-3


def test_no_slot_access_on_public_surface():
    public = {name for name in dir(Ciphertext) if not name.startswith("_")}
    assert public == {"slot_count", "level", "scale"}
    for name in ("slot_count", "level", "scale"):
        assert isinstance(inspect.getattr_static(Ciphertext, name), property)
    c = SimulatorBackend.create(4).encrypt([1, 2, 3, 4])
    with pytest.raises(TypeError):
        c[0]
    with pytest.raises(AttributeError):
        c.level = 3
    backend_public = {n for n in dir(SimulatorBackend) if not n.startswith("_")}
    assert not {"slot", "get_slot", "peek", "__getitem__"} & backend_public
