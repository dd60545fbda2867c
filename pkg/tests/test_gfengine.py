"""Tests for cell systems, genealogical martingales, spines and the Lamperti clock."""

import json
import math

import numpy as np
import pytest

from src.bridges import PathGrid
from src.cumulant import spine_exponent
from src.gfengine import (
    InsufficientDepthError,
    NodeBudgetError,
    ToyDrivingSpec,
    build_cell_system,
    empirical_spine_exponent,
    export_tree_ndjson,
    first_generation_log_increment,
    genealogical_ensemble,
    genealogical_martingale,
    jump_power_sums,
    lamperti_clock,
    lamperti_path,
    sample_spine,
    select_spines,
    simulate_cell,
    snapshot,
    spine_by_selection,
    temporal_many_to_one,
)
from src.randkit import RngState
from src.stats import chi_square_poisson, ks_test


@pytest.fixture
def driver():
    """Toy driver with kappa(2) = 0."""
    return ToyDrivingSpec(n=2, lam=1.0, beta=0.5, drift=0.25)


def test_driver_validates_parameters():
    with pytest.raises(ValueError):
        ToyDrivingSpec(n=2, lam=1.0, beta=2.0, drift=0.1)


def test_flow_and_time_to_size(driver):
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    moved = driver.flow(x, np.array([4.0, 0.0]))
    assert np.allclose(moved[0], [math.exp(-1.0), 0.0])
    assert np.allclose(moved[1], [0.0, 2.0])
    assert driver.time_to_size(x[:1], math.exp(-1.0))[0] == pytest.approx(4.0)


def test_single_cell_jumps_scale_by_beta(driver):
    path, jumps = simulate_cell(RngState(1), driver, [1.0, 0.0], horizon=20.0)
    assert np.array_equal(path.position(0.0), [1.0, 0.0])
    assert len(jumps) == path.jump_times.size
    assert np.all(np.diff(path.jump_times) > 0)
    after = path.pre_jump + path.jumps
    assert np.allclose(
        np.linalg.norm(after, axis=1), 0.5 * np.linalg.norm(path.pre_jump, axis=1)
    )
    with pytest.raises(ValueError):
        path.position(path.end_time + 1.0)


def test_cell_jump_counts_are_poisson(driver):
    counts = [len(simulate_cell(RngState(60, i), driver, [1.0, 0.0], horizon=3.0)[1]) for i in range(3000)]
    assert chi_square_poisson(counts, driver.jump_rate * 3.0).passed
    assert not chi_square_poisson(counts, driver.jump_rate * 4.0).passed


def test_simulate_cell_preconditions(driver):
    with pytest.raises(ValueError):
        simulate_cell(RngState(1), driver, [0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        simulate_cell(RngState(1), driver, [1.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        simulate_cell(RngState(1), driver, [1.0, 0.0, 0.0], 1.0)


def test_cell_tree_labels_and_ranking(driver):
    tree = build_cell_system(RngState(2), driver, [1.0, 0.0], max_gen=2)
    root = tree.root
    assert root.label == () and root.generation == 0
    children = tree.children_of(())
    assert [c.label for c in children] == [(k,) for k in range(1, root.n_children + 1)]
    norms = [float(np.linalg.norm(c.initial_size)) for c in children]
    assert norms == sorted(norms, reverse=True)
    for k, child in enumerate(children, start=1):
        assert np.array_equal(child.initial_size, root.child_size(k))
        assert child.birth_time in set(root.jump_times.tolist())
    assert all(node.generation == 3 and node.truncated for node in tree.generation(3))


def test_child_sizes_match_jumps(driver):
    tree = build_cell_system(RngState(3), driver, [1.0, 0.0], max_gen=1)
    root = tree.root
    pre = root.post_jump - root.jumps
    relative = np.linalg.norm(root.jumps, axis=1) / np.linalg.norm(pre, axis=1)
    assert np.all((relative >= 0.5 - 1e-12) & (relative <= 1.5 + 1e-12))


def test_ancestry_walks_to_root(driver):
    tree = build_cell_system(RngState(4), driver, [1.0, 0.0], max_gen=2)
    leaf = tree.generation(2)[0]
    chain = tree.ancestry(leaf.label)
    assert [node.generation for node in chain] == [0, 1, 2]
    assert chain[0] is tree.root


def test_node_budget_is_enforced(driver):
    with pytest.raises(NodeBudgetError):
        build_cell_system(RngState(5), driver, [1.0, 0.0], max_gen=3, node_budget=1)


def test_build_preconditions(driver):
    with pytest.raises(ValueError):
        build_cell_system(RngState(5), driver, [1.0, 0.0], max_gen=-1)
    with pytest.raises(ValueError):
        build_cell_system(RngState(5), driver, [1.0, 0.0], max_gen=1, size_floor=0.0)


def test_martingale_needs_depth(driver):
    tree = build_cell_system(RngState(6), driver, [1.0, 0.0], max_gen=1)
    genealogical_martingale(tree, 1, 2.0)
    with pytest.raises(InsufficientDepthError):
        genealogical_martingale(tree, 2, 2.0)


def test_genealogical_martingale_has_unit_mean(driver):
    """At the root omega = 2 every generation has mean |x0|**2 = 1."""
    reports = genealogical_ensemble(7, driver, [1.0, 0.0], 2.0, 2000, max_gen=2)
    assert len(reports) == 3
    for report in reports:
        tolerance = 4 * report.std_error + report.diagnostics["truncated_mass"]
        assert abs(report.estimate - 1.0) < tolerance


def test_genealogical_ensemble_is_thread_independent(driver):
    serial = genealogical_ensemble(8, driver, [1.0, 0.0], 2.0, 20, max_gen=1)
    parallel = genealogical_ensemble(8, driver, [1.0, 0.0], 2.0, 20, max_gen=1, threads=3)
    assert [r.estimate for r in serial] == [r.estimate for r in parallel]


def test_jump_power_sums_stop_at_floor(driver):
    sums, ends = jump_power_sums(RngState(9), driver, 200, 2.0, 1e-3)
    assert sums.shape == (200,) and ends.shape == (200,)
    assert np.all(sums >= 0)
    assert np.all(ends <= 1e-3 * (1 + 1e-9))


def test_snapshot_ranks_and_checks_horizon(driver):
    tree = build_cell_system(RngState(10), driver, [1.0, 0.0], max_gen=8, horizon=1.0)
    snap = snapshot(tree, 1.0)
    norms = [float(np.linalg.norm(x)) for x, _ in snap.cells]
    assert norms == sorted(norms, reverse=True)
    assert np.allclose(snapshot(tree, 0.0).cells[0][0], [1.0, 0.0])
    with pytest.raises(ValueError):
        snapshot(tree, 2.0)


def test_temporal_identity_with_constant_functional(driver):
    lhs, rhs = temporal_many_to_one(11, driver, [1.0, 0.0], 2.0, 1.0, lambda x: 1.0, 1000)
    assert rhs.estimate == pytest.approx(1.0)
    tolerance = 4 * lhs.std_error + lhs.diagnostics["unresolved_mass"]
    assert abs(lhs.estimate - rhs.estimate) < tolerance


def test_spine_generation_changes_arrive_at_jump_integral_rate(driver):
    spine = sample_spine(RngState(12), driver, [1.0, 0.0], 2.0, 2000.0, track_direction=False)
    gaps = spine.inter_arrivals()
    assert ks_test(gaps, lambda s: 1.0 - np.exp(-1.25 * s)).passed


def test_spine_starts_at_x0_and_tracks_direction(driver):
    spine = sample_spine(RngState(13), driver, [0.0, 2.0], 2.0, 20.0)
    assert np.allclose(spine.size_at(0.0), [0.0, 2.0])
    assert np.allclose(np.linalg.norm(spine.directions, axis=1), 1.0)
    grid = spine.as_grid(16)
    assert grid.values[0, 0] == pytest.approx(math.log(2.0))
    increment = first_generation_log_increment(spine)
    assert increment < math.log(1.5)


def test_spine_rejects_non_root(driver):
    with pytest.raises(ValueError):
        sample_spine(RngState(14), driver, [1.0, 0.0], 1.0, 1.0)


def test_empirical_spine_exponent_matches_kappa(driver):
    spine = sample_spine(RngState(15), driver, [1.0, 0.0], 2.0, 100_000.0, track_direction=False)
    empirical = empirical_spine_exponent(spine, 1.0, 1.0)
    exact = spine_exponent(driver.levy_system(), None, 2.0, 1.0)
    assert abs(empirical - exact) < 0.01
    with pytest.raises(ValueError):
        empirical_spine_exponent(spine, 60_000.0, 1.0)


def test_selected_spines_follow_ancestry(driver):
    spines = select_spines(RngState(16), driver, [1.0, 0.0], 2.0, 1, samples=20, pool=32)
    assert len(spines) == 20
    for spine in spines:
        assert len(spine.label) == 2
        assert len(spine.sizes) == 3
        assert np.allclose(spine.sizes[0], [1.0, 0.0])
    single = spine_by_selection(RngState(17), driver, [1.0, 0.0], 2.0, 0, pool=16)
    assert single.log_sizes[0] == pytest.approx(0.0)


def test_selection_preconditions(driver):
    with pytest.raises(ValueError):
        select_spines(RngState(18), driver, [1.0, 0.0], 2.0, -1, samples=1)
    with pytest.raises(ValueError):
        select_spines(RngState(18), driver, [1.0, 0.0], 2.0, 1, samples=0)


def test_lamperti_clock_for_constant_log_size():
    times = PathGrid.uniform_times(4.0, 64)
    xi = PathGrid(times, np.full(times.size, math.log(2.0)))
    clock = lamperti_clock(xi, 1.0)
    assert clock.horizon == pytest.approx(8.0)
    assert clock(2.0) == pytest.approx(1.0)
    assert np.allclose(lamperti_path(xi, 1.0, np.array([0.0, 4.0])), 2.0)
    with pytest.raises(ValueError):
        clock(9.0)


def test_lamperti_clock_needs_scalar_path():
    times = PathGrid.uniform_times(1.0, 4)
    with pytest.raises(ValueError):
        lamperti_clock(PathGrid(times, np.zeros((5, 2))), 1.0)


def test_export_tree_ndjson(driver, tmp_path):
    tree = build_cell_system(RngState(19), driver, [1.0, 0.0], max_gen=1)
    path = tmp_path / "tree.ndjson"
    export_tree_ndjson(tree, path)
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert len(records) == len(tree)
    assert records[0]["label"] == [] and records[0]["generation"] == 0
