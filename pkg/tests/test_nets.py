import numpy as np
import pytest

from fediod.core import Adam, Tensor, backward, reduce, softmax_tau
from fediod.errors import ShapeError
from fediod.nets import (
    NoiseSpec,
    build,
    discriminator_scalar,
    forward,
    load_checkpoint,
    sample_noise,
    save_checkpoint,
)


def test_build_shapes():
    net = build("teacher", [2, 8, 4], seed=0)
    assert net.arch == [2, 8, 4]
    assert net.input_dim == 2 and net.output_dim == 4
    assert net.param_count() == 2 * 8 + 8 + 8 * 4 + 4
    out = net(Tensor(np.zeros((5, 2))))
    assert out.shape == (5, 4)


def test_build_is_seeded():
    a = build("student", [3, 5, 2], seed=7)
    b = build("student", [3, 5, 2], seed=7)
    c = build("student", [3, 5, 2], seed=8)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()


def test_he_init_scale():
    net = build("teacher", [400, 300, 2], seed=1)
    w = net.layers[0].weight.values
    assert w.std() == pytest.approx(np.sqrt(2.0 / 400), rel=0.05)
    np.testing.assert_array_equal(net.layers[0].bias.values, 0.0)


@pytest.mark.parametrize("arch", [[3], [3, 0, 2]])
def test_build_bad_arch(arch):
    with pytest.raises(ShapeError):
        build("teacher", arch)


def test_build_unknown_role():
    with pytest.raises(ValueError):
        build("critic", [2, 2])


def test_generator_output_bounded(rng):
    g = build("generator", [4, 16, 6], seed=0)
    x = g(sample_noise(NoiseSpec(4), 32, rng))
    assert x.shape == (32, 6)
    assert np.all(np.abs(x.values) <= 1.0)


def test_discriminator_scalar_in_unit_interval(rng):
    d = build("discriminator", [6, 8, 4], seed=0)
    s = discriminator_scalar(d(Tensor(rng.normal(size=(10, 6)))))
    assert s.shape == (10, 1)
    assert np.all((s.values > 0) & (s.values < 1))


def test_forward_dim_mismatch():
    net = build("teacher", [2, 3])
    with pytest.raises(ShapeError):
        forward(net, Tensor(np.zeros((4, 3))))


def test_frozen_network_is_never_stepped(rng):
    net = build("teacher", [2, 4, 2], seed=0)
    before = net.checksum()
    net.freeze()
    opt = Adam(net.parameters(), lr=0.1)
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    backward(reduce("sum", net(x)))
    opt.step()
    assert net.frozen
    assert net.checksum() == before
    assert all(p.grad is None for p in net.parameters())
    assert x.grad is not None


def test_copy_from_requires_same_arch():
    a = build("teacher", [2, 3, 2], seed=0)
    b = build("teacher", [2, 3, 2], seed=1)
    b.copy_from(a)
    assert a.checksum() == b.checksum()
    with pytest.raises(ShapeError):
        build("teacher", [2, 4, 2]).copy_from(a)


def test_checkpoint_round_trip(tmp_path, rng):
    net = build("student", [3, 5, 2], activation="tanh", seed=3)
    path = tmp_path / "student.json"
    save_checkpoint(net, str(path))
    loaded = load_checkpoint(str(path))
    assert loaded.role == "student"
    assert loaded.arch == net.arch
    assert loaded.checksum() == net.checksum()
    x = Tensor(rng.normal(size=(4, 3)))
    np.testing.assert_array_equal(loaded(x).values, net(x).values)


def test_sample_noise_shape(rng):
    z = sample_noise(NoiseSpec(5), 7, rng)
    assert z.shape == (7, 5)
    with pytest.raises(ValueError):
        sample_noise(NoiseSpec(5), 0, rng)


def test_sample_noise_is_seeded():
    a = sample_noise(NoiseSpec(6), 5, np.random.default_rng(42))
    b = sample_noise(NoiseSpec(6), 5, np.random.default_rng(42))
    np.testing.assert_array_equal(a.values, b.values)


def test_sample_noise_moments():
    z = sample_noise(NoiseSpec(4), 10_000, np.random.default_rng(3)).values
    assert np.all(np.abs(z.mean(axis=0)) <= 0.05)
    assert np.all((z.std(axis=0) >= 0.95) & (z.std(axis=0) <= 1.05))


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_zero_teacher_predicts_uniform(rng, activation):
    net = build("teacher", [3, 6, 5], activation=activation, seed=0)
    for layer in net.layers:
        layer.weight = Tensor(np.zeros(layer.weight.shape))
        layer.bias = Tensor(np.zeros(layer.bias.shape))
    probs = softmax_tau(net(Tensor(rng.normal(size=(4, 3)))), 1.0)
    np.testing.assert_allclose(probs.values, 0.2, atol=1e-12)
