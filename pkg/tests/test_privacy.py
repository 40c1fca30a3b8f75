import numpy as np
import pytest

from fediod.errors import NumericalError
from fediod.privacy import (
    DpConfig,
    clip_factor,
    clipped_norm_bound,
    sanitize,
    sanitize_rows,
)


def test_disabled_is_identity(rng):
    v = rng.normal(size=5) * 10
    np.testing.assert_array_equal(sanitize(v, DpConfig(noise_multiplier=3.0)), v)


def test_no_noise_inside_bound():
    v = np.array([0.3, 0.4])
    cfg = DpConfig(clip_norm=1.0, enabled=True)
    np.testing.assert_array_equal(sanitize(v, cfg), v)


def test_no_noise_clips_to_bound():
    v = np.array([1.2, 1.6])  # norm 2
    out = sanitize(v, DpConfig(clip_norm=1.0, enabled=True))
    np.testing.assert_allclose(out, v / 2, atol=1e-15)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


def test_noise_std():
    cfg = DpConfig(clip_norm=1.0, noise_multiplier=1.0, enabled=True, seed=7)
    draws = np.stack([sanitize(np.zeros(3), cfg) for _ in range(10_000)])
    std = draws.std(axis=0)
    assert np.all((std >= 0.97) & (std <= 1.03))


def test_non_finite_rejected():
    cfg = DpConfig(enabled=True)
    with pytest.raises(NumericalError):
        sanitize(np.array([1.0, np.nan]), cfg)
    with pytest.raises(NumericalError):
        sanitize_rows(np.array([[np.inf]]), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        DpConfig(clip_norm=0.0, enabled=True)
    with pytest.raises(ValueError):
        DpConfig(noise_multiplier=-0.1)
    DpConfig(clip_norm=0.0)


def test_clipped_norm_bound_examples(rng):
    assert clipped_norm_bound(np.zeros(4), 1.0) == 0.0
    assert clipped_norm_bound(np.array([0.5, 0.0]), 1.0) == pytest.approx(0.5)
    for _ in range(1000):
        c = rng.uniform(0.1, 5.0)
        v = rng.normal(size=rng.integers(1, 10)) * rng.uniform(0.01, 100)
        bound = clipped_norm_bound(v, c)
        assert bound <= c + 1e-12
        if np.linalg.norm(v) >= c:
            assert bound == pytest.approx(c, abs=1e-12)


def test_clip_idempotent(rng):
    cfg = DpConfig(clip_norm=0.5, enabled=True)
    v = rng.normal(size=6)
    once = sanitize(v, cfg)
    np.testing.assert_allclose(sanitize(once, cfg), once, atol=1e-15)
    assert clip_factor(once, 0.5) == pytest.approx(1.0)


def test_rows_sanitized_independently():
    rows = np.array([[3.0, 4.0], [0.3, 0.4]])
    release = sanitize_rows(rows, DpConfig(clip_norm=1.0, enabled=True))
    assert release.sanitized
    np.testing.assert_allclose(release.values, [[0.6, 0.8], [0.3, 0.4]])
    np.testing.assert_allclose(release.scale[:, 0], [0.2, 1.0])
    np.testing.assert_array_equal(release.noise, 0.0)
    np.testing.assert_allclose(rows * release.scale + release.noise,
                               release.values)


def test_rows_disabled_not_flagged():
    release = sanitize_rows(np.ones((2, 3)), DpConfig())
    assert not release.sanitized
    np.testing.assert_array_equal(release.values, 1.0)


def test_spawned_streams_differ():
    cfg = DpConfig(clip_norm=1.0, noise_multiplier=1.0, enabled=True, seed=3)
    a = sanitize(np.zeros(4), cfg.spawn(0))
    b = sanitize(np.zeros(4), cfg.spawn(1))
    again = sanitize(np.zeros(4), cfg.spawn(0))
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, again)
