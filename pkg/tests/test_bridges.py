"""Tests for path grids, Brownian/Bessel bridges and duration laws."""

import math

import numpy as np
import pytest

from src.bridges import (
    ITO_R_MAX,
    ITO_R_MIN,
    HorizonError,
    PathGrid,
    conditional_midpoints,
    disintegration_closed_form,
    disintegration_integral,
    gamma_x_duration_cdf,
    gamma_x_duration_density,
    gamma_x_normalization,
    ito_duration_cdf,
    ito_duration_quantile,
    refine_bridge,
    sample_bessel3_bridge,
    sample_bessel3_components,
    sample_brownian_bridge,
    sample_brownian_motion,
    sample_gamma_x_duration,
    sample_ito_duration,
)
from src.randkit import RngState
from src.stats import ks_2sample, ks_test


def test_path_grid_validation():
    with pytest.raises(ValueError):
        PathGrid([0.5, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        PathGrid([0.0, 1.0, 1.0], [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        PathGrid([0.0, 1.0], [0.0, 1.0, 2.0])


def test_path_grid_is_read_only_and_interpolates():
    path = PathGrid([0.0, 1.0, 2.0], [[0.0], [2.0], [0.0]])
    with pytest.raises(ValueError):
        path.values[0, 0] = 1.0
    assert path.at(0.5)[0] == pytest.approx(1.0)
    assert path.until(1.5).end[0] == pytest.approx(1.0)
    assert path.reversed().values[0, 0] == 0.0
    assert path.duration == 2.0 and path.steps == 2 and path.dim == 1


def test_uniform_times_needs_two_steps():
    with pytest.raises(ValueError):
        PathGrid.uniform_times(1.0, 1)
    with pytest.raises(ValueError):
        PathGrid.uniform_times(0.0, 4)


def test_brownian_motion_starts_at_start():
    path = sample_brownian_motion(RngState(1), 2, 1.0, 8, start=[1.0, -1.0])
    assert np.array_equal(path.start, [1.0, -1.0])
    assert path.values.shape == (9, 2)


def test_bridge_pins_both_ends():
    path = sample_brownian_bridge(RngState(2), 2, [1.0, 2.0], 3.0, 16)
    assert np.array_equal(path.start, [0.0, 0.0])
    assert np.array_equal(path.end, [1.0, 2.0])


def test_bridge_midpoint_variance():
    """Var of a unit bridge at t = 1/2 is 1/4."""
    rng = RngState(3)
    n = 20_000
    mids = np.array([sample_brownian_bridge(rng, 1, 0.0, 1.0, 2).values[1, 0] for _ in range(n)])
    assert abs(mids.mean()) < 4 * math.sqrt(0.25 / n)
    assert abs(mids.var(ddof=1) - 0.25) < 4 * 0.25 * math.sqrt(2.0 / n)


def test_conditional_midpoints_shape_and_ends():
    fill = conditional_midpoints(np.random.default_rng(0), [0.0, 1.0], [2.0, 3.0], 0.5, 4)
    assert fill.shape == (17, 2)
    assert np.array_equal(fill[0], [0.0, 1.0])
    assert np.array_equal(fill[-1], [2.0, 3.0])
    with pytest.raises(ValueError):
        conditional_midpoints(np.random.default_rng(0), [0.0], [1.0], 1.0, -1)


def test_refine_bridge_keeps_existing_points():
    path = sample_brownian_bridge(RngState(4), 3, [1.0, 0.0, 0.0], 1.0, 8)
    fine = refine_bridge(RngState(5), path)
    assert fine.steps == 16
    assert np.array_equal(fine.values[0::2], path.values)
    assert np.array_equal(fine.times[0::2], path.times)


def test_refined_bridge_matches_a_finer_bridge_in_law():
    """A new midpoint of a refined 4-step bridge has the law of a direct 8-step bridge there."""
    def refined_value(rng):
        return refine_bridge(rng, sample_brownian_bridge(rng, 1, 0.0, 1.0, 4)).values[1, 0]

    refined = [refined_value(RngState(6, i)) for i in range(2000)]
    direct = [sample_brownian_bridge(RngState(7, i), 1, 0.0, 1.0, 8).values[1, 0] for i in range(2000)]
    assert ks_2sample(refined, direct).passed
    assert abs(np.var(refined) - 7.0 / 64.0) < 0.015


def test_bessel_bridge_is_non_negative_and_pinned():
    path = sample_bessel3_bridge(RngState(6), 2.0, 64)
    heights = path.values[:, 0]
    assert heights[0] == 0.0 and heights[-1] == 0.0
    assert np.all(heights >= 0.0)
    assert np.all(heights[1:-1] > 0.0)


def test_bessel_components_from_height():
    comps = sample_bessel3_components(RngState(7), 1.0, 8, start_height=2.0)
    assert np.array_equal(comps.start, [2.0, 0.0, 0.0])
    assert np.array_equal(comps.end, [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        sample_bessel3_components(RngState(7), 1.0, 8, start_height=-1.0)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_duration_density_integrates_to_one(d):
    total, _ = gamma_x_normalization(d)
    assert abs(total - 1.0) < 1e-10


def test_disintegration_constant_at_d3():
    value, _ = disintegration_integral(3)
    assert disintegration_closed_form(3) == pytest.approx(1.0 / (4.0 * math.pi), abs=1e-12)
    assert abs(value - 1.0 / (4.0 * math.pi)) < 1e-8


def test_duration_density_and_cdf_consistent():
    r = np.array([0.1, 0.5, 1.0, 3.0])
    h = 1e-6
    numeric = (gamma_x_duration_cdf(r + h, 3) - gamma_x_duration_cdf(r - h, 3)) / (2 * h)
    assert np.allclose(numeric, gamma_x_duration_density(r, 3), rtol=1e-5)
    assert gamma_x_duration_density(-1.0, 3) == 0.0


def test_duration_sampler_matches_cdf():
    samples = sample_gamma_x_duration(RngState(8), 3, size=20_000)
    assert ks_test(samples, lambda r: gamma_x_duration_cdf(r, 3)).passed


def test_duration_rejects_small_dimension():
    with pytest.raises(ValueError):
        sample_gamma_x_duration(RngState(8), 2)


def test_ito_quantile_inverts_cdf():
    u = np.array([0.0, 0.1, 0.5, 0.9, 1.0])
    assert np.allclose(ito_duration_cdf(ito_duration_quantile(u)), u)
    assert ito_duration_quantile(0.0) == pytest.approx(ITO_R_MIN)
    assert ito_duration_quantile(1.0) == pytest.approx(ITO_R_MAX)


def test_ito_sampler_matches_cdf_and_needs_window():
    samples = sample_ito_duration(RngState(9), 1e-2, 1e2, size=20_000)
    assert ks_test(samples, lambda r: ito_duration_cdf(r, 1e-2, 1e2)).passed
    with pytest.raises(ValueError):
        sample_ito_duration(RngState(9), 0.0, 1.0)
    with pytest.raises(ValueError):
        sample_ito_duration(RngState(9), 1.0, math.inf)


def test_horizon_error_is_runtime_error():
    assert issubclass(HorizonError, RuntimeError)
