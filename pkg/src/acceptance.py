"""Verification checks run by the command-line sub-commands.

Each check samples with the seed of its :class:`RunConfig`, compares the
estimates with their targets through :mod:`stats` and returns
:class:`CheckOutcome` records. Monte-Carlo checks are retried once with a
fresh seed; the failed attempt is kept in the report and marked superseded.
Bulk samples a check wants exported (slices, spine draws, a cell tree) ride
along in ``artifacts``, which stays out of the JSON report.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from . import bridges, cumulant, excursion, gfengine, halfspace
from .bridges import PathGrid
from .config import RunConfig
from .logger_config import log_structured
from .randkit import RngState, map_streams, sample_uniform_sphere
from .stats import (
    EstimateReport,
    StatTestResult,
    agreement,
    bound_check,
    cf_distance,
    chi_square_poisson,
    chi_square_uniform,
    closeness,
    ks_2sample,
    ks_test,
    mean_ci,
    relative_closeness,
    retry_with_fresh_seed,
)

logger = logging.getLogger(__name__)

ORACLE_SAMPLES = 200_000
SPINE_LAPLACE_HORIZON = 7.0e5
SELECTION_SAMPLES = 1000
SELECTION_POOL = 64
N_PLUS_SAMPLES = 2000
N_PLUS_STEPS = 64
INSPECTED_EXCURSIONS = 1000
NO_BUBBLE_MIN_DURATION = 1e-3
NO_BUBBLE_SIZE = 1e-9
BRANCHING_SAMPLES = 10_000
BRANCHING_STEPS = 2048
STABLE_LEG_SAMPLES = 10_000
STABLE_PATH_SAMPLES = 2000
CLOCK_SAMPLES = 10_000
CLOCK_HORIZON = 2.0
ISOTROPY_DIRECTIONS = 8
LAMPERTI_INDEX = 1.0
LAMPERTI_SCALE = 3.0


@dataclass(frozen=True)
class CheckOutcome:
    """One verified property: its estimates, test results and verdict."""

    name: str
    anchor: str
    seed: int
    results: tuple[EstimateReport | StatTestResult, ...]
    passed: bool
    superseded: bool = False
    details: Mapping[str, Any] = field(default_factory=dict)
    artifacts: Mapping[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "seed": self.seed,
            "passed": self.passed,
            "superseded": self.superseded,
            "results": [r.to_dict() for r in self.results],
            "details": dict(self.details),
        }


def _outcome(
    name: str,
    anchor: str,
    seed: int,
    results: Sequence[EstimateReport | StatTestResult],
    artifacts: Mapping[str, Any] | None = None,
    **details: Any,
) -> CheckOutcome:
    passed = all(r.passed for r in results if isinstance(r, StatTestResult))
    outcome = CheckOutcome(
        name, anchor, seed, tuple(results), passed, details=details, artifacts=dict(artifacts or {})
    )
    log_structured(
        logger,
        logging.INFO if passed else logging.WARNING,
        "Check finished",
        check=name,
        passed=passed,
        seed=seed,
    )
    return outcome


def _retried(check: Callable[[RunConfig], CheckOutcome], cfg: RunConfig) -> list[CheckOutcome]:
    attempts = retry_with_fresh_seed(lambda seed: check(cfg.with_overrides(seed=seed)), cfg.seed)
    return [replace(a, superseded=True) for a in attempts[:-1]] + [attempts[-1]]


def verdict(outcomes: Sequence[CheckOutcome]) -> bool:
    return all(o.passed for o in outcomes if not o.superseded)


def _toy(cfg: RunConfig) -> cumulant.ToyCP:
    return cumulant.ToyCP(lam=cfg.lam, beta=cfg.beta, drift=cfg.drift, n=cfg.d - 1)


def _toy_at_root_two(cfg: RunConfig) -> gfengine.ToyDrivingSpec:
    return gfengine.ToyDrivingSpec.from_levy_system(
        cumulant.ToyCP.with_root_at_two(cfg.lam, cfg.beta, n=cfg.d - 1)
    )


def _unit_start(cfg: RunConfig) -> np.ndarray:
    x0 = np.zeros(cfg.d - 1)
    x0[0] = 1.0
    return x0


# ----------------------------------------------------------------------
# Excursion side
# ----------------------------------------------------------------------
def check_duration_normalization(cfg: RunConfig) -> CheckOutcome:
    """Quadratures of the duration laws, and truncated Ito excursions against them."""
    total, _ = bridges.gamma_x_normalization(cfg.d)
    integral, _ = bridges.disintegration_integral(cfg.d)
    closed = bridges.disintegration_closed_form(cfg.d)
    results: list[EstimateReport | StatTestResult] = [
        bound_check("duration_density_mass", abs(total - 1.0), 1e-10, value=total),
        bound_check(
            "disintegration_constant", abs(integral - closed), 1e-8, value=integral, target=closed
        ),
    ]

    def one(stream: RngState) -> tuple[float, float]:
        e = excursion.sample_n_plus_truncated(stream, cfg.d, steps=N_PLUS_STEPS)
        return e.duration, float(e.endpoint_x[0]) / math.sqrt(e.duration)

    rows = np.array(map_streams(one, cfg.seed, N_PLUS_SAMPLES, cfg.threads))
    r_min, r_max = bridges.ITO_R_MIN, bridges.ITO_R_MAX
    results += [
        ks_test(rows[:, 0], lambda r: bridges.ito_duration_cdf(r, r_min, r_max), name="ito_duration"),
        ks_test(rows[:, 1], sps.norm.cdf, name="ito_horizontal_end"),
    ]
    return _outcome("duration_normalization", "conditioned excursions are probability laws", cfg.seed, results)


def check_level_martingale(cfg: RunConfig) -> CheckOutcome:
    """Martingale mean at each level, plus a pathwise inspection of an ensemble.

    The inspected excursions are sliced at every level (exported as
    ``slices``), searched for degenerate slices of positive duration and
    re-evaluated on a grid twice as fine.
    """
    rng = RngState(cfg.seed)
    target = float(np.linalg.norm(cfg.x)) ** cfg.d
    reports = excursion.estimate_martingale(
        rng,
        cfg.x,
        cfg.d,
        cfg.levels,
        cfg.weight_exponent,
        cfg.samples,
        steps=cfg.steps,
        eps_floor=cfg.eps_floor,
        threads=cfg.threads,
    )
    results: list[EstimateReport | StatTestResult] = []
    for a, report in reports.items():
        results.append(report)
        results.append(closeness(report, target, tolerance=0.05 * target, name=f"mean_at_{a:g}"))
    levels = list(reports)
    if len(levels) >= 2:
        results.append(agreement(reports[levels[0]], reports[levels[1]], name="levels_agree"))

    a0, omega = levels[0], cfg.weight_exponent
    inspected = min(cfg.samples, INSPECTED_EXCURSIONS)

    def inspect(stream: RngState):
        e = excursion.sample_gamma_x(stream, cfg.x, cfg.d, cfg.steps)
        pieces = [p for a in levels for p in excursion.slice(e, a)]
        smallest = excursion.no_bubble_check(e, levels, NO_BUBBLE_MIN_DURATION)
        coarse = excursion.martingale_value(e, a0, omega)[0]
        fine = excursion.martingale_value(e.refined(stream), a0, omega)[0]
        return pieces, smallest, fine - coarse

    rows = map_streams(inspect, rng.derive_seed(), inspected, cfg.threads)
    bubbles = sum(1 for _, smallest, _ in rows if smallest < NO_BUBBLE_SIZE)
    refinement = mean_ci([diff for _, _, diff in rows], diagnostics={"level": a0})
    results += [
        bound_check("no_bubble", bubbles, 1.0, inspected, min_duration=NO_BUBBLE_MIN_DURATION),
        refinement,
        closeness(refinement, 0.0, tolerance=0.02 * target, name="grid_refinement"),
    ]
    slices = [(i, pieces) for i, (pieces, _, _) in enumerate(rows)]
    return _outcome(
        "level_martingale",
        "sliced excursion mass is a martingale in the height",
        cfg.seed,
        results,
        artifacts={"slices": slices, "d": cfg.d},
        target=target,
    )


def check_branching(cfg: RunConfig) -> CheckOutcome:
    """Slicing at a higher level directly or through re-sampled slices agrees in law."""
    levels = sorted(cfg.levels)
    a, a_prime = levels[0], (levels[1] if len(levels) > 1 else 2.0 * levels[0])
    n = min(cfg.samples, BRANCHING_SAMPLES)
    result = excursion.branching_resample(
        RngState(cfg.seed, 2),
        cfg.x,
        cfg.d,
        a,
        a_prime,
        n,
        steps=min(cfg.steps, BRANCHING_STEPS),
        omega=cfg.weight_exponent,
        threads=cfg.threads,
    )
    return _outcome("branching", "branching property of the sliced excursions", cfg.seed, [result], levels=[a, a_prime])


def check_many_to_one(cfg: RunConfig) -> CheckOutcome:
    a = cfg.levels[0]
    rng = RngState(cfg.seed)
    scale = float(np.linalg.norm(cfg.x)) ** cfg.d

    def one(first, second) -> float:
        return 1.0

    def decay(first, second) -> float:
        return math.exp(-first.duration)

    results: list[EstimateReport | StatTestResult] = []
    for label, functional in (("constant", one), ("first_duration_decay", decay)):
        lhs = excursion.many_to_one_lhs(
            rng, cfg.x, cfg.d, a, functional, cfg.samples, cfg.steps, threads=cfg.threads
        )
        rhs = halfspace.many_to_one_rhs(
            rng, cfg.x, cfg.d, a, functional, cfg.samples, threads=cfg.threads
        )
        results += [lhs, rhs, agreement(lhs, rhs, name=f"{label}_sides_agree")]
    exact = scale * halfspace.last_passage_laplace(a, 1.0)
    results.append(closeness(results[-2], exact, name="decay_rhs_closed_form"))
    return _outcome("many_to_one", "many-to-one formula for sliced excursions", cfg.seed, results, level=a)


def check_hitting_moments(cfg: RunConfig) -> CheckOutcome:
    a = cfg.levels[0]
    rng = RngState(cfg.seed)
    moments = excursion.weighted_hitting_moments(
        rng, cfg.x, cfg.d, a, cfg.samples, cfg.steps, threads=cfg.threads
    )
    m1, m2 = halfspace.bessel3_hitting_moments(a)
    results = [
        moments.first,
        moments.second,
        closeness(moments.first, m1, name="first_moment"),
        closeness(moments.second, m2, name="second_moment"),
    ]
    return _outcome("weighted_hitting_moments", "hitting time under the martingale change of measure", cfg.seed, results, level=a)


def check_bismut(cfg: RunConfig) -> CheckOutcome:
    rng = RngState(cfg.seed)
    heights = np.empty(cfg.samples)
    kills = np.empty((cfg.samples, 2))
    worst_end = 0.0
    for i in range(cfg.samples):
        sample = excursion.bismut_sample(rng, cfg.d, cfg.a_max, steps=32)
        heights[i] = sample.height
        kills[i] = sample.kill_times
        for leg in (sample.left, sample.right):
            worst_end = max(worst_end, abs(leg.end[-1] + sample.height))
    logs = np.log(kills)
    corr = float(np.corrcoef(logs[:, 0], logs[:, 1])[0, 1])
    results = [
        chi_square_uniform(heights, bins=20, low=0.0, high=cfg.a_max, name="height_uniform"),
        bound_check("kill_time_correlation", abs(corr) * math.sqrt(cfg.samples), 3.0, cfg.samples, correlation=corr),
        bound_check("killed_at_minus_height", worst_end, 1e-9),
    ]
    return _outcome("bismut", "Bismut description of the excursion measure", cfg.seed, results)


def check_stable_bismut(cfg: RunConfig) -> CheckOutcome:
    """Bismut legs with an alpha-stable horizontal part: stable law at the kill time."""
    rng = RngState(cfg.seed, 1)
    n = STABLE_LEG_SAMPLES
    heights = np.empty(n)
    scaled = np.empty((n, cfg.d - 1))
    for i in range(n):
        sample = excursion.bismut_sample(rng, cfg.d, cfg.a_max, steps=16, alpha=cfg.alpha)
        heights[i] = sample.height
        scaled[i] = sample.left.end[:-1] / sample.kill_times[0] ** (1.0 / cfg.alpha)
    grid = np.zeros((3, cfg.d - 1))
    grid[:, 0] = (0.5, 1.0, 2.0)
    results = [
        chi_square_uniform(heights, bins=20, low=0.0, high=cfg.a_max, name="stable_height_uniform"),
        cf_distance(
            scaled,
            lambda u: math.exp(-float(np.linalg.norm(u)) ** cfg.alpha),
            grid,
            name="stable_leg_end",
        ),
    ]
    return _outcome("stable_bismut", "Bismut description with a stable horizontal part", cfg.seed, results, alpha=cfg.alpha)


# ----------------------------------------------------------------------
# Spine marginals
# ----------------------------------------------------------------------
def check_cauchy_spine(cfg: RunConfig) -> CheckOutcome:
    a = cfg.levels[0]
    rng = RngState(cfg.seed)
    near = halfspace.spine_size_brownian(rng, cfg.d, a, size=cfg.samples)
    far = halfspace.spine_size_brownian(rng, cfg.d, 2.0 * a, size=cfg.samples)
    cdf = sps.cauchy(scale=a).cdf
    results: list[EstimateReport | StatTestResult] = [
        ks_test(near[:, k], cdf, name=f"component_{k}_cauchy") for k in range(cfg.d - 1)
    ]
    results.append(
        ks_2sample(
            np.linalg.norm(near, axis=1) / a,
            np.linalg.norm(far, axis=1) / (2.0 * a),
            name="scaling",
        )
    )
    return _outcome(
        "cauchy_spine", "isotropic Cauchy spine marginal", cfg.seed, results,
        artifacts={"spine": (a, near)}, level=a,
    )


def check_stable_spine(cfg: RunConfig) -> CheckOutcome:
    a = cfg.levels[0]
    rng = RngState(cfg.seed)
    samples = halfspace.spine_size_stable(rng, cfg.d, cfg.alpha, a, size=cfg.samples)
    grid = np.zeros((3, cfg.d - 1))
    grid[:, 0] = (0.5, 1.0, 2.0)
    results = [
        cf_distance(
            samples,
            lambda u: halfspace.spine_stable_cf(float(np.linalg.norm(u)), cfg.alpha, a),
            grid,
            name="stable_spine_cf",
        )
    ]

    def path_end(stream: RngState) -> float:
        p = halfspace.sample_to_last_passage(stream, cfg.d, a, steps=16, alpha=cfg.alpha)
        return float(np.linalg.norm(p.horizontal.end))

    count = min(cfg.samples, STABLE_PATH_SAMPLES)
    ends = map_streams(path_end, rng.derive_seed(), count, cfg.threads)
    results.append(
        ks_2sample(ends, np.linalg.norm(samples[:count], axis=1), name="stable_path_vs_marginal")
    )
    return _outcome(
        "stable_spine", "half-stable spine marginal", cfg.seed, results,
        artifacts={"spine": (a, samples)}, level=a, alpha=cfg.alpha,
    )


# ----------------------------------------------------------------------
# Cumulant
# ----------------------------------------------------------------------
def check_kappa(cfg: RunConfig) -> CheckOutcome:
    if cfg.spec_file:
        spec = cumulant.load_spec(cfg.spec_file)
    elif cfg.variant == "stable":
        spec = cumulant.IsotropicStable(cfg.alpha, cfg.d, cfg.window)
    else:
        spec = _toy(cfg)
    qs = np.linspace(cfg.bracket[0], cfg.bracket[1], 41)
    results: list[EstimateReport | StatTestResult] = []
    if isinstance(spec, cumulant.ToyCP):
        table = cumulant.kappa_table(spec, None, qs, bracket=cfg.bracket)
        results.append(
            bound_check(
                "j2_closed_form",
                abs(cumulant.jump_integral(spec, 2.0) - cumulant.toy_closed_form_j2(spec.lam, spec.beta)),
                1e-10,
            )
        )
        results.append(bound_check("kappa_at_zero", abs(cumulant.kappa(spec, None, 0.0) - spec.lam), 1e-10))
        for root in table.roots:
            results.append(
                bound_check(
                    f"root_residual_{root:.6g}", abs(cumulant.kappa(spec, None, root)), cumulant.ROOT_TOLERANCE
                )
            )
        if math.isclose(spec.drift, spec.lam * spec.beta**2, rel_tol=1e-12):
            gap = min((abs(root - 2.0) for root in table.roots), default=math.inf)
            results.append(bound_check("root_at_two", gap, cumulant.ROOT_TOLERANCE, roots=list(table.roots)))
    else:
        # No radial exponent is known for the stable system: tabulate J alone.
        table = cumulant.kappa_table(spec, lambda q: 0.0, qs)
    results.append(bound_check("convexity", -table.min_second_difference, 1e-8))

    rng = RngState(cfg.seed)
    direction_seed, oracle_seed = rng.derive_seed(), rng.derive_seed()
    spatial = cumulant.IsotropicStable(1.2, 3, window=(-0.5, 0.5))
    reference = cumulant.jump_integral(spatial, 2.0)
    directions = sample_uniform_sphere(RngState(direction_seed), 3, ISOTROPY_DIRECTIONS)
    spread = max(abs(cumulant.jump_integral(spatial, 2.0, theta=t) - reference) for t in directions)
    results.append(
        bound_check("stable_isotropy", spread / abs(reference), 1e-6, ISOTROPY_DIRECTIONS)
    )

    stable = cumulant.IsotropicStable(1.5, 2, window=(-1.0, 1.0))
    along = cumulant.jump_integral(stable, 2.0)
    oracle = cumulant.jump_integral_mc_oracle(RngState(oracle_seed), stable, 2.0, None, ORACLE_SAMPLES)
    results += [oracle, closeness(oracle, along, name="stable_quadrature_vs_oracle")]
    return _outcome("kappa", "isotropic cumulant function and its roots", cfg.seed, results, table=table)


def check_sum_kappa(cfg: RunConfig) -> CheckOutcome:
    spec = cumulant.ToyCP.with_root_at_two(cfg.lam, cfg.beta, n=cfg.d - 1)
    results: list[EstimateReport | StatTestResult] = []
    for offset, q in enumerate((2.0, 3.0)):
        rng = RngState(cfg.seed, offset)
        report = cumulant.sum_kappa_identity_check(rng, spec, None, q, cfg.samples, cfg.size_floor)
        target = cumulant.sum_kappa_target(spec, None, q)
        tail = float(report.diagnostics["tail_bound"])
        results += [report, closeness(report, target, tolerance=tail, name=f"jump_powers_q{q:g}")]
    return _outcome("sum_kappa", "summed jump powers against 1 - kappa/psi", cfg.seed, results)


# ----------------------------------------------------------------------
# Growth-fragmentation
# ----------------------------------------------------------------------
def check_genealogical(cfg: RunConfig) -> CheckOutcome:
    driver = _toy_at_root_two(cfg)
    omega = 2.0
    reports = gfengine.genealogical_ensemble(
        cfg.seed, driver, _unit_start(cfg), omega, cfg.samples, cfg.max_gen, cfg.size_floor, cfg.threads
    )
    results: list[EstimateReport | StatTestResult] = []
    for n, report in enumerate(reports[: min(4, len(reports))]):
        results += [report, closeness(report, 1.0, name=f"generation_{n}")]
    worst = max(float(r.diagnostics["truncated_fraction"]) for r in reports)
    tree = gfengine.build_cell_system(
        RngState(cfg.seed, 1), driver, _unit_start(cfg), cfg.max_gen, cfg.size_floor
    )
    return _outcome(
        "genealogical_martingale", "intrinsic martingale over generations", cfg.seed, results,
        artifacts={"tree": tree}, truncated_fraction=worst,
    )


def check_temporal(cfg: RunConfig) -> CheckOutcome:
    driver = _toy_at_root_two(cfg)
    x0 = _unit_start(cfg)
    results: list[EstimateReport | StatTestResult] = []
    tests: tuple[tuple[str, Callable[[np.ndarray], float]], ...] = (
        ("constant", lambda x: 1.0),
        ("size", lambda x: float(np.linalg.norm(x))),
    )
    for label, f in tests:
        lhs, rhs = gfengine.temporal_many_to_one(
            cfg.seed, driver, x0, 2.0, 1.0, f, cfg.samples, cfg.size_floor, threads=cfg.threads
        )
        results += [lhs, rhs, agreement(lhs, rhs, name=f"temporal_{label}")]
    return _outcome("temporal_many_to_one", "many-to-one formula at a fixed time", cfg.seed, results)


def check_cell_clock(cfg: RunConfig) -> CheckOutcome:
    """Jump counts of a single cell over a fixed horizon are Poisson(lam T)."""
    driver = _toy_at_root_two(cfg)
    x0 = _unit_start(cfg)

    def count(stream: RngState) -> int:
        return len(gfengine.simulate_cell(stream, driver, x0, CLOCK_HORIZON)[1])

    counts = map_streams(count, RngState(cfg.seed, 3).derive_seed(), min(cfg.samples, CLOCK_SAMPLES), cfg.threads)
    result = chi_square_poisson(counts, driver.jump_rate * CLOCK_HORIZON, name="cell_jump_counts")
    return _outcome("cell_clock", "cell jumps arrive as a Poisson process", cfg.seed, [result], horizon=CLOCK_HORIZON)


def check_spine(cfg: RunConfig) -> CheckOutcome:
    driver = _toy_at_root_two(cfg)
    levy = driver.levy_system()
    omega = 2.0
    rate = cumulant.jump_integral(levy, omega)
    horizon = max(SPINE_LAPLACE_HORIZON, 1.2 * cfg.samples / rate)
    rng = RngState(cfg.seed)
    path = gfengine.sample_spine(rng, driver, _unit_start(cfg), omega, horizon, track_direction=False)
    gaps = path.inter_arrivals()[: cfg.samples]
    results: list[EstimateReport | StatTestResult] = [
        ks_test(gaps, sps.expon(scale=1.0 / rate).cdf, name="generation_inter_arrivals")
    ]
    for q in (0.5, 1.0):
        empirical = gfengine.empirical_spine_exponent(path, 1.0, q)
        target = cumulant.spine_exponent(levy, None, omega, q)
        results.append(relative_closeness(empirical, target, 0.02, name=f"laplace_exponent_q{q:g}"))

    # Shifting log-size by log c scales the self-similar path by c and time by c**index.
    times = PathGrid.uniform_times(min(path.horizon, 100.0), 2048)
    xi = PathGrid(times, path.log_radius_at(times))
    shifted = xi.shifted([math.log(LAMPERTI_SCALE)])
    clock_times = np.linspace(0.0, 0.5 * gfengine.lamperti_clock(xi, LAMPERTI_INDEX).horizon, 64)
    base = gfengine.lamperti_path(xi, LAMPERTI_INDEX, clock_times)
    scaled = gfengine.lamperti_path(shifted, LAMPERTI_INDEX, clock_times * LAMPERTI_SCALE**LAMPERTI_INDEX)
    gap = float(np.max(np.abs(scaled - LAMPERTI_SCALE * base) / (LAMPERTI_SCALE * base)))
    results.append(bound_check("lamperti_scaling", gap, 1e-9))

    x0 = _unit_start(cfg)

    def selected(stream: RngState) -> float:
        spine = gfengine.spine_by_selection(stream, driver, x0, omega, 0, pool=SELECTION_POOL)
        return float(spine.log_sizes[1] - spine.log_sizes[0])

    def direct(stream: RngState) -> float:
        spine = gfengine.sample_spine(stream, driver, x0, omega, 50.0, track_direction=False)
        return gfengine.first_generation_log_increment(spine)

    by_selection = map_streams(selected, RngState(cfg.seed, 1).derive_seed(), SELECTION_SAMPLES, cfg.threads)
    by_direct = map_streams(direct, RngState(cfg.seed, 2).derive_seed(), SELECTION_SAMPLES, cfg.threads)
    results.append(ks_2sample(by_selection, by_direct, name="selection_vs_direct_spine"))
    return _outcome("spine", "spine log-size is a Levy process with exponent kappa(omega + q)", cfg.seed, results, rate=rate)


# ----------------------------------------------------------------------
# Sub-command table
# ----------------------------------------------------------------------
def _martingale_command(cfg: RunConfig) -> list[CheckOutcome]:
    return (
        _retried(check_duration_normalization, cfg)
        + _retried(check_level_martingale, cfg)
        + _retried(check_branching, cfg)
    )


def _bismut_command(cfg: RunConfig) -> list[CheckOutcome]:
    return _retried(check_bismut, cfg) + _retried(check_stable_bismut, cfg)


def _gf_command(cfg: RunConfig) -> list[CheckOutcome]:
    return _retried(check_genealogical, cfg) + _retried(check_temporal, cfg) + _retried(check_cell_clock, cfg)


COMMANDS: dict[str, Callable[[RunConfig], list[CheckOutcome]]] = {
    "verify-martingale": _martingale_command,
    "verify-spine": lambda cfg: _retried(check_cauchy_spine, cfg),
    "verify-spine-stable": lambda cfg: _retried(check_stable_spine, cfg),
    "verify-bismut": _bismut_command,
    "verify-many-to-one": lambda cfg: _retried(check_many_to_one, cfg),
    "verify-hitting": lambda cfg: _retried(check_hitting_moments, cfg),
    "verify-gf": _gf_command,
    "verify-spine-gf": lambda cfg: _retried(check_spine, cfg),
    "verify-sum-kappa": lambda cfg: _retried(check_sum_kappa, cfg),
    "kappa": lambda cfg: [check_kappa(cfg)],
}

# Level (or levels) each sub-command uses when none is given.
DEFAULT_LEVELS: dict[str, tuple[float, ...]] = {
    "verify-martingale": (0.3, 0.6),
    "verify-spine": (1.0,),
    "verify-spine-stable": (1.0,),
    "verify-many-to-one": (0.3,),
    "verify-hitting": (0.3,),
}


def run_command(cfg: RunConfig) -> list[CheckOutcome]:
    """Validates ``cfg`` and runs the checks of its sub-command (or all of them)."""
    cfg.validate()
    if cfg.subcommand != "verify-all":
        return COMMANDS[cfg.subcommand](cfg)
    outcomes: list[CheckOutcome] = []
    for name, command in COMMANDS.items():
        sub = cfg.with_overrides(
            subcommand=name, levels=DEFAULT_LEVELS.get(name, cfg.levels), N=None
        ).validate()
        outcomes.extend(command(sub))
    return outcomes
