"""Tests for the keyed random streams and the elementary samplers."""

import math

import numpy as np
import pytest

from src.randkit import (
    RngState,
    map_streams,
    sample_exponential,
    sample_gamma,
    sample_positive_stable,
    sample_uniform,
    sample_uniform_sphere,
)


def test_same_key_gives_identical_draws():
    first = RngState(7, 3).generator.standard_normal(16)
    second = RngState(7, 3).generator.standard_normal(16)
    assert np.array_equal(first, second)


def test_distinct_streams_differ():
    first = RngState(7, 0).generator.standard_normal(16)
    second = RngState(7, 1).generator.standard_normal(16)
    assert not np.array_equal(first, second)


def test_spawn_keeps_seed():
    child = RngState(11, 0).spawn(5)
    assert (child.seed, child.stream_id) == (11, 5)


def test_substream_is_reproducible_and_independent_of_main_stream():
    state = RngState(42)
    before = state.substream(1, 9).standard_normal(8)
    state.generator.standard_normal(1000)
    after = state.substream(1, 9).standard_normal(8)
    assert np.array_equal(before, after)
    assert not np.array_equal(before, state.substream(1, 10).standard_normal(8))


def test_substream_rejects_main_block():
    with pytest.raises(ValueError):
        RngState(1).substream(0, 0)


@pytest.mark.parametrize("seed", [-1, 2**64, 1.5, True])
def test_invalid_seed_rejected(seed):
    with pytest.raises(ValueError):
        RngState(seed)


def test_derive_seed_is_deterministic():
    assert RngState(3).derive_seed() == RngState(3).derive_seed()


def test_map_streams_is_thread_count_independent():
    """Results come back in stream order regardless of the worker count."""

    def draw(state):
        return float(state.generator.standard_normal())

    serial = map_streams(draw, 99, 20, threads=1)
    parallel = map_streams(draw, 99, 20, threads=4)
    assert serial == parallel
    assert serial[3] == float(RngState(99, 3).generator.standard_normal())


def test_map_streams_validates_arguments():
    with pytest.raises(ValueError):
        map_streams(lambda s: 0, 1, -1)
    with pytest.raises(ValueError):
        map_streams(lambda s: 0, 1, 3, threads=0)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_sphere_points_have_unit_norm(n):
    points = sample_uniform_sphere(RngState(5), n, 1000)
    assert points.shape == (1000, n)
    assert np.allclose(np.linalg.norm(points, axis=1), 1.0)


def test_sphere_of_dimension_one_is_two_points():
    points = sample_uniform_sphere(RngState(5), 1, 500)
    assert set(np.unique(points)) <= {-1.0, 1.0}
    assert sample_uniform_sphere(RngState(5), 1).shape == (1,)


def test_sphere_mean_vanishes():
    n = 40_000
    points = sample_uniform_sphere(RngState(8), 3, n)
    # Each coordinate has variance 1/3.
    assert np.all(np.abs(points.mean(axis=0)) < 4 * math.sqrt(1 / 3 / n))


def test_positive_stable_laplace_transform():
    """E exp(-S) = exp(-1) for the unit clock."""
    n = 100_000
    s = sample_positive_stable(RngState(21), 0.5, 1.0, size=n)
    values = np.exp(-s)
    se = values.std(ddof=1) / math.sqrt(n)
    assert abs(values.mean() - math.exp(-1.0)) < 4 * se


def test_positive_stable_scaling_in_time():
    n = 100_000
    s = sample_positive_stable(RngState(22), 0.6, 2.0, size=n)
    values = np.exp(-s)
    se = values.std(ddof=1) / math.sqrt(n)
    assert abs(values.mean() - math.exp(-2.0)) < 4 * se


def test_positive_stable_zero_clock_and_bad_index():
    assert sample_positive_stable(RngState(1), 0.5, 0.0) == 0.0
    assert np.all(sample_positive_stable(RngState(1), 0.5, 0.0, size=4) == 0.0)
    with pytest.raises(ValueError):
        sample_positive_stable(RngState(1), 1.0, 1.0)


def test_gamma_and_exponential_means():
    n = 50_000
    gam = sample_gamma(RngState(4), 2.0, 4.0, size=n)
    expo = sample_exponential(RngState(4, 1), 2.0, size=n)
    assert abs(gam.mean() - 0.5) < 4 * gam.std(ddof=1) / math.sqrt(n)
    assert abs(expo.mean() - 0.5) < 4 * expo.std(ddof=1) / math.sqrt(n)


def test_sampler_preconditions():
    rng = RngState(0)
    with pytest.raises(ValueError):
        sample_uniform(rng, 1.0, 1.0)
    with pytest.raises(ValueError):
        sample_exponential(rng, 0.0)
    with pytest.raises(ValueError):
        sample_gamma(rng, -1.0, 1.0)


def test_positive_stable_redraws_a_zero_angle(mocker):
    rng = RngState(5)
    rng.generator = mocker.Mock(wraps=rng.generator)
    uniform = rng.generator.uniform
    uniform.side_effect = [np.array([0.0, 1.0]), np.array([0.5])]
    draws = sample_positive_stable(rng, 0.5, 1.0, size=2)
    assert np.all(np.isfinite(draws)) and np.all(draws > 0)
    assert uniform.call_count == 2
