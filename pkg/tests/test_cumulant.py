"""Tests for the cumulant function, its roots and the jump integral."""

import math

import numpy as np
import pytest

from src.cumulant import (
    DivergenceError,
    IsotropicStable,
    NotARootError,
    ToyCP,
    check_root,
    divergence_region,
    export_kappa_csv,
    find_roots,
    jump_integral,
    jump_integral_mc_oracle,
    kappa,
    kappa_table,
    load_spec,
    psi_from_table,
    spine_exponent,
    sum_kappa_identity_check,
    sum_kappa_target,
    toy_closed_form_j2,
)
from src.randkit import RngState
from src.reports import read_csv


@pytest.fixture
def toy():
    return ToyCP(lam=1.0, beta=0.5, drift=0.25)


def test_toy_j2_matches_closed_form(toy):
    assert abs(jump_integral(toy, 2.0) - 1.25) < 1e-10
    assert toy_closed_form_j2(1.0, 0.5) == pytest.approx(1.25)


def test_kappa_at_zero_is_jump_rate(toy):
    assert abs(kappa(toy, None, 0.0) - 1.0) < 1e-10


def test_toy_root_at_two(toy):
    roots = find_roots(toy, None, (0.5, 10.0))
    assert any(abs(r - 2.0) <= 1e-9 for r in roots)
    assert len(roots) <= 2
    for r in roots:
        assert abs(kappa(toy, None, r)) <= 1e-9


def test_with_root_at_two_sets_drift():
    spec = ToyCP.with_root_at_two(2.0, 0.3)
    assert spec.drift == pytest.approx(2.0 * 0.09)
    check_root(spec, None, 2.0)


def test_check_root_rejects_non_root(toy):
    with pytest.raises(NotARootError):
        check_root(toy, None, 1.0)


def test_spine_exponent_is_shifted_kappa(toy):
    assert spine_exponent(toy, None, 2.0, 1.0) == pytest.approx(kappa(toy, None, 3.0))


def test_toy_rejects_invalid_parameters():
    with pytest.raises(ValueError):
        ToyCP(lam=1.0, beta=1.5, drift=0.0)
    with pytest.raises(ValueError):
        ToyCP(lam=-1.0, beta=0.5, drift=0.0)


def test_toy_jump_integral_against_oracle(toy):
    report = jump_integral_mc_oracle(RngState(10), toy, 3.0, None, 100_000)
    assert abs(report.estimate - jump_integral(toy, 3.0)) < 4 * report.std_error


def test_free_stable_system_always_diverges():
    spec = IsotropicStable(alpha=1.5, d=2)
    for q in (0.5, 1.5, 2.5):
        assert divergence_region(spec, q) is not None
        with pytest.raises(DivergenceError):
            jump_integral(spec, q)
    assert kappa(IsotropicStable(1.5, 2, psi_fn=lambda q: 0.0), None, 2.0) == math.inf


def test_stable_corner_needs_q_above_alpha():
    spec = IsotropicStable(alpha=1.5, d=2, window=(-1.0, 1.0))
    assert "corner" in divergence_region(spec, 1.0)
    assert divergence_region(spec, 2.0) is None


def test_stable_jump_integral_is_isotropic():
    spec = IsotropicStable(alpha=1.5, d=2, window=(-1.0, 1.0))
    along = jump_integral(spec, 2.0)
    tilted = jump_integral(spec, 2.0, theta=[math.cos(0.7), math.sin(0.7)])
    assert abs(tilted - along) / along < 1e-6


def test_stable_isotropy_in_three_dimensions():
    spec = IsotropicStable(alpha=1.2, d=3, window=(-0.5, 0.5))
    along = jump_integral(spec, 2.0)
    other = jump_integral(spec, 2.0, theta=np.array([0.0, 0.6, 0.8]))
    assert abs(other - along) / along < 1e-6


def test_stable_quadrature_against_oracle():
    spec = IsotropicStable(alpha=1.5, d=2, window=(-1.0, 1.0))
    report = jump_integral_mc_oracle(RngState(11), spec, 2.0, None, 200_000)
    assert abs(report.estimate - jump_integral(spec, 2.0)) < 4 * report.std_error


def test_stable_oracle_on_window_away_from_zero():
    spec = IsotropicStable(alpha=1.5, d=2, window=(0.5, 3.0))
    report = jump_integral_mc_oracle(RngState(12), spec, 0.0, None, 200_000)
    assert abs(report.estimate - jump_integral(spec, 0.0)) < 4 * report.std_error


def test_oracle_preconditions(toy):
    with pytest.raises(ValueError):
        jump_integral_mc_oracle(RngState(1), toy, 2.0, None, 10)
    with pytest.raises(ValueError):
        jump_integral_mc_oracle(RngState(1), IsotropicStable(1.5, 2), 2.0, None, 1000)


def test_stable_psi_must_be_supplied():
    with pytest.raises(ValueError):
        IsotropicStable(1.5, 2).psi(1.0)


def test_psi_from_table_interpolates_and_refuses_extrapolation():
    psi = psi_from_table([0.0, 1.0, 2.0], [0.0, -1.0, -4.0])
    assert psi(1.5) == pytest.approx(-2.5)
    with pytest.raises(ValueError):
        psi(3.0)
    with pytest.raises(ValueError):
        psi_from_table([0.0, 0.0], [1.0, 2.0])


def test_kappa_with_tabulated_psi(toy):
    qs = np.linspace(0.0, 4.0, 401)
    psi = psi_from_table(qs, [toy.psi(q) for q in qs])
    assert kappa(toy, psi, 2.0) == pytest.approx(kappa(toy, None, 2.0), abs=1e-9)


def test_load_spec_reads_flat_files(tmp_path):
    path = tmp_path / "toy.spec"
    path.write_text(
        "# toy driver\nvariant = toy\nlambda = 1\nbeta = 0.5  # radial factor\ndrift = 0.25\n",
        encoding="utf-8",
    )
    spec = load_spec(path)
    assert spec == ToyCP(lam=1.0, beta=0.5, drift=0.25)

    stable = tmp_path / "stable.spec"
    stable.write_text("variant = stable\nalpha = 1.5\nd = 2\nwindow = -1, 1\n", encoding="utf-8")
    assert load_spec(stable).window == (-1.0, 1.0)


@pytest.mark.parametrize(
    "text",
    [
        "variant = toy\nlambda = 1\nbeta = 0.5\n",
        "variant = toy\ncolour = red\n",
        "variant = cubic\n",
        "variant toy\n",
    ],
)
def test_load_spec_rejects_bad_files(tmp_path, text):
    path = tmp_path / "bad.spec"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ValueError):
        load_spec(path)


def test_kappa_table_is_convex_and_exports(toy, tmp_path):
    table = kappa_table(toy, None, np.linspace(0.5, 6.0, 23), bracket=(0.5, 10.0))
    assert table.convex
    assert any(abs(r - 2.0) <= 1e-9 for r in table.roots)
    path = export_kappa_csv(tmp_path / "kappa.csv", table)
    header, rows = read_csv(path)
    assert header == ["q", "kappa", "error"]
    assert len(rows) == 23


def test_kappa_table_marks_divergence():
    spec = IsotropicStable(1.5, 2, window=(-1.0, 1.0))
    table = kappa_table(spec, lambda q: 0.0, [1.0, 2.0, 3.0])
    assert table.values[0] == math.inf
    assert math.isfinite(table.values[1])


def test_sum_kappa_target_is_one_at_root(toy):
    assert sum_kappa_target(toy, None, 2.0) == pytest.approx(1.0)


def test_sum_kappa_identity_at_root_and_above(toy):
    for stream, q in enumerate((2.0, 3.0)):
        report = sum_kappa_identity_check(RngState(13, stream), toy, None, q, 5000)
        target = sum_kappa_target(toy, None, q)
        tolerance = 4 * report.std_error + report.diagnostics["tail_bound"]
        assert abs(report.estimate - target) < tolerance


def test_sum_kappa_identity_preconditions(toy):
    with pytest.raises(ValueError):
        sum_kappa_identity_check(RngState(1), toy, None, 2.0, 10)
    with pytest.raises(ValueError):
        sum_kappa_identity_check(RngState(1), IsotropicStable(1.5, 2), None, 2.0, 1000)
