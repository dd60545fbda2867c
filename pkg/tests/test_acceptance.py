"""Tests for the verification checks and the sub-command table."""

import pytest

from src import acceptance
from src.acceptance import (
    COMMANDS,
    DEFAULT_LEVELS,
    CheckOutcome,
    check_branching,
    check_cauchy_spine,
    check_cell_clock,
    check_duration_normalization,
    check_kappa,
    check_level_martingale,
    check_many_to_one,
    check_stable_bismut,
    check_stable_spine,
    check_sum_kappa,
    run_command,
    verdict,
)
from src.config import MIN_SAMPLES, ConfigError, RunConfig
from src.stats import StatTestResult, bound_check, fresh_seed


def _outcome(passed, superseded=False):
    result = bound_check("b", 0.0 if passed else 2.0, 1.0)
    return CheckOutcome("c", "anchor", 1, (result,), passed, superseded)


def test_verdict_ignores_superseded_attempts():
    assert verdict([_outcome(False, superseded=True), _outcome(True)])
    assert not verdict([_outcome(True), _outcome(False)])
    assert verdict([])


def test_outcome_serialises_results():
    payload = _outcome(True).to_dict()
    assert payload["passed"] is True
    assert payload["results"][0]["name"] == "b"
    assert payload["superseded"] is False


def test_retry_marks_failed_attempt_superseded():
    base = RunConfig("verify-spine", N=1000)
    seen = []

    def flaky(cfg):
        seen.append(cfg.seed)
        return _outcome(len(seen) > 1)

    outcomes = acceptance._retried(flaky, base)
    assert seen == [base.seed, fresh_seed(base.seed, 1)]
    assert [o.superseded for o in outcomes] == [True, False]
    assert verdict(outcomes)


def test_every_subcommand_has_a_command():
    assert set(COMMANDS) | {"verify-all"} == set(MIN_SAMPLES)
    assert set(DEFAULT_LEVELS) <= set(COMMANDS)


def test_duration_normalization_passes():
    outcome = check_duration_normalization(RunConfig("verify-martingale"))
    assert outcome.passed
    names = [r.name for r in outcome.results]
    assert names == [
        "duration_density_mass",
        "disintegration_constant",
        "ito_duration",
        "ito_horizontal_end",
    ]


def test_cauchy_spine_check_passes():
    outcome = check_cauchy_spine(RunConfig("verify-spine", N=5000, levels=(1.0,)))
    assert outcome.passed
    assert [r.name for r in outcome.results][-1] == "scaling"


def test_sum_kappa_check_passes():
    outcome = check_sum_kappa(RunConfig("verify-sum-kappa", N=5000))
    assert outcome.passed
    assert len(outcome.results) == 4


def test_run_command_validates_first():
    with pytest.raises(ConfigError):
        run_command(RunConfig("verify-spine", N=10))


def test_run_command_dispatches(mocker):
    fake = mocker.Mock(return_value=[_outcome(True)])
    mocker.patch.dict(COMMANDS, {"verify-spine": fake})
    outcomes = run_command(RunConfig("verify-spine", N=1000))
    assert verdict(outcomes)
    fake.assert_called_once()


def test_verify_all_runs_every_command_at_default_size(mocker):
    calls = []

    def record(cfg):
        calls.append((cfg.subcommand, cfg.samples, cfg.levels))
        return [_outcome(True)]

    mocker.patch.dict(COMMANDS, {name: record for name in COMMANDS})
    outcomes = run_command(RunConfig("verify-all"))
    assert len(outcomes) == len(COMMANDS)
    by_name = {name: (samples, levels) for name, samples, levels in calls}
    assert set(by_name) == set(COMMANDS)
    assert by_name["verify-spine"][1] == DEFAULT_LEVELS["verify-spine"]
    assert by_name["verify-martingale"][0] == 20_000


def test_level_martingale_inspects_an_ensemble():
    cfg = RunConfig("verify-martingale", N=200, steps=256, levels=(0.3, 0.6))
    outcome = check_level_martingale(cfg)
    by_name = {r.name: r for r in outcome.results if isinstance(r, StatTestResult)}
    assert by_name["no_bubble"].passed
    assert by_name["no_bubble"].n == 200
    assert by_name["grid_refinement"].passed
    slices = outcome.artifacts["slices"]
    assert len(slices) == 200
    assert {p.level for _, pieces in slices for p in pieces} <= {0.3, 0.6}
    assert "slices" not in outcome.to_dict()


def test_branching_check_passes_at_reduced_size():
    outcome = check_branching(RunConfig("verify-martingale", N=300, steps=512, levels=(0.3, 0.6)))
    assert outcome.passed
    assert outcome.results[0].name == "branching_consistency"
    assert outcome.details["levels"] == [0.3, 0.6]


def test_branching_check_doubles_a_single_level(mocker):
    resample = mocker.patch("src.excursion.branching_resample", return_value=bound_check("b", 0.0, 1.0))
    check_branching(RunConfig("verify-martingale", N=200, levels=(0.4,)))
    assert resample.call_args.args[3:5] == (0.4, 0.8)


def test_many_to_one_check_passes():
    outcome = check_many_to_one(RunConfig("verify-many-to-one", N=400, steps=256, levels=(0.3,)))
    assert outcome.passed
    assert [r.name for r in outcome.results if isinstance(r, StatTestResult)] == [
        "constant_sides_agree",
        "first_duration_decay_sides_agree",
        "decay_rhs_closed_form",
    ]


def test_kappa_check_locates_the_root_at_two():
    outcome = check_kappa(RunConfig("kappa"))
    by_name = {r.name: r for r in outcome.results if isinstance(r, StatTestResult)}
    assert outcome.passed
    assert by_name["root_at_two"].statistic <= 1e-9
    assert by_name["stable_isotropy"].n == acceptance.ISOTROPY_DIRECTIONS
    assert any(name.startswith("root_residual_") for name in by_name)


def test_kappa_check_flags_a_missing_root():
    # Drift pushed off lam * beta**2 moves the root away from two.
    outcome = check_kappa(RunConfig("kappa", drift=0.3))
    assert all(r.name != "root_at_two" for r in outcome.results)


def test_kappa_oracle_seed_is_derived(mocker):
    oracle = mocker.spy(acceptance.cumulant, "jump_integral_mc_oracle")
    check_kappa(RunConfig("kappa", seed=11))
    stream = oracle.call_args.args[0]
    assert stream.seed != 11


def test_cell_clock_check_passes():
    outcome = check_cell_clock(RunConfig("verify-gf", N=2000))
    assert outcome.passed
    assert outcome.results[0].name == "cell_jump_counts"


def test_stable_bismut_check_passes():
    outcome = check_stable_bismut(RunConfig("verify-bismut", N=1000, alpha=1.2))
    assert outcome.passed


def test_stable_spine_check_carries_samples():
    outcome = check_stable_spine(RunConfig("verify-spine-stable", N=10_000, levels=(1.0,)))
    assert outcome.passed
    level, samples = outcome.artifacts["spine"]
    assert level == 1.0 and samples.shape == (10_000, 2)
    assert outcome.results[-1].name == "stable_path_vs_marginal"
