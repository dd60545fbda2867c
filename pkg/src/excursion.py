"""Half-space excursions conditioned on their endpoint, and their slices.

An excursion is stored as a horizontal path in R^(d-1) and a non-negative
vertical path on a shared grid. Samples drawn here also keep the Brownian
components behind both parts (the vertical part is the norm of a
3-dimensional bridge) together with a refinement seed, so that level
crossings can be located on a finer grid later. The noise used to refine
grid interval ``i`` comes from a counter substream keyed on that seed and
``i``; every call that refines the same interval sees the same fine path.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .bridges import (
    ITO_R_MAX,
    ITO_R_MIN,
    PathGrid,
    conditional_midpoints,
    refine_bridge,
    sample_bessel3_components,
    sample_brownian_bridge,
    sample_brownian_motion,
    sample_gamma_x_duration,
    sample_ito_duration,
)
from .halfspace import stable_horizontal
from .randkit import RngState, map_streams, sample_uniform
from .reports import write_csv
from .stats import EstimateReport, ks_2sample, mean_ci, weighted_mean_ci

logger = logging.getLogger(__name__)

REFINE_DEPTH = 8
DEFAULT_STEPS = 16_384
MIN_ENSEMBLE = 100


def _check_dimension(d: int) -> int:
    if not isinstance(d, (int, np.integer)) or d < 3:
        raise ValueError(f"Half-space dimension d must be an integer >= 3, got {d!r}.")
    return int(d)


def _check_endpoint(x: Sequence[float] | np.ndarray, d: int) -> np.ndarray:
    vec = np.atleast_1d(np.asarray(x, dtype=float))
    if vec.shape != (d - 1,):
        raise ValueError(f"x must be a point of R^{d - 1}, got shape {vec.shape}.")
    if not np.linalg.norm(vec) > 0:
        raise ValueError("x must be non-zero: the conditioned excursion law needs x != 0.")
    return vec


def _check_level(a: float) -> float:
    if not a > 0:
        raise ValueError(f"Level a must be positive, got {a}.")
    return float(a)


@dataclass(frozen=True, slots=True)
class SubExcursion:
    """One excursion above level ``level``: a maximal interval where the height exceeds it."""

    start_time: float
    end_time: float
    delta: np.ndarray
    chrono_index: int
    level: float

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    @property
    def size(self) -> float:
        return float(np.linalg.norm(self.delta))


@dataclass(frozen=True, slots=True, eq=False)
class ExcursionPath:
    """Horizontal and vertical parts of an upper half-space excursion."""

    horizontal: PathGrid
    vertical: PathGrid
    endpoint_x: np.ndarray
    components: PathGrid | None = None
    refine_seed: int | None = None
    _fine: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not np.array_equal(self.horizontal.times, self.vertical.times):
            raise ValueError("Horizontal and vertical parts must share their time grid.")
        if self.vertical.dim != 1:
            raise ValueError("The vertical part must be one-dimensional.")
        heights = self.vertical.values[:, 0]
        if np.any(heights < 0):
            raise ValueError("The vertical part must be non-negative.")
        if heights[0] != 0.0 or heights[-1] != 0.0:
            raise ValueError("The vertical part must vanish at both ends.")
        if np.any(self.horizontal.values[0] != 0.0):
            raise ValueError("The horizontal part must start at 0.")
        endpoint = np.asarray(self.endpoint_x, dtype=float)
        if not np.allclose(self.horizontal.values[-1], endpoint, rtol=0.0, atol=1e-12):
            raise ValueError("The horizontal part must end at endpoint_x.")
        object.__setattr__(self, "endpoint_x", endpoint)
        if self.components is not None:
            if not np.array_equal(self.components.times, self.vertical.times):
                raise ValueError("Components must share the excursion grid.")
            if self.components.dim != 3 + self.horizontal.dim:
                raise ValueError("Components are the 3 vertical and d-1 horizontal coordinates.")

    @property
    def d(self) -> int:
        return self.horizontal.dim + 1

    @property
    def duration(self) -> float:
        return self.vertical.duration

    @property
    def times(self) -> np.ndarray:
        return self.vertical.times

    @property
    def height(self) -> np.ndarray:
        return self.vertical.values[:, 0]

    @property
    def max_height(self) -> float:
        return float(self.height.max())

    def combined(self) -> PathGrid:
        """The excursion as one path in R^d, vertical coordinate last."""
        return PathGrid(self.times, np.hstack([self.horizontal.values, self.vertical.values]))

    def refined(self, rng: RngState) -> "ExcursionPath":
        """The same excursion on a grid twice as fine (existing points kept)."""
        if self.components is None:
            raise ValueError("Only sampled excursions keep the components needed to refine.")
        fine = refine_bridge(rng, self.components)
        return _from_components(fine, self.endpoint_x, rng.derive_seed())

    # ------------------------------------------------------------------
    # Crossing refinement
    # ------------------------------------------------------------------
    def _fine_interval(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cached = self._fine.get(i)
        if cached is not None:
            return cached
        times = self.times
        generator = RngState(self.refine_seed, 0).substream(1, i)
        span = float(times[i + 1] - times[i])
        values = conditional_midpoints(
            generator, self.components.values[i], self.components.values[i + 1], span, REFINE_DEPTH
        )
        fine_times = np.linspace(times[i], times[i + 1], values.shape[0])
        fine = (fine_times, np.linalg.norm(values[:, :3], axis=1), values[:, 3:])
        self._fine[i] = fine
        return fine

    def merged(self, levels: Iterable[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Grid times, heights and horizontal values, refined where a level is crossed.

        Every grid interval whose end heights bracket one of ``levels`` is
        replaced by its dyadic conditional-midpoint fill. Paths without
        components are returned unchanged (linear interpolation applies).
        """
        times, heights, horizontal = self.times, self.height, self.horizontal.values
        if self.components is None or self.refine_seed is None:
            return times, heights, horizontal
        mask = np.zeros(times.size - 1, dtype=bool)
        for a in levels:
            mask |= (heights[:-1] > a) != (heights[1:] > a)
            mask |= (heights[:-1] >= a) != (heights[1:] >= a)
        flagged = np.flatnonzero(mask)
        if flagged.size == 0:
            return times, heights, horizontal
        t_parts, v_parts, h_parts = [], [], []
        previous = 0
        for i in flagged:
            t_parts.append(times[previous : i + 1])
            v_parts.append(heights[previous : i + 1])
            h_parts.append(horizontal[previous : i + 1])
            fine_t, fine_v, fine_h = self._fine_interval(int(i))
            t_parts.append(fine_t[1:-1])
            v_parts.append(fine_v[1:-1])
            h_parts.append(fine_h[1:-1])
            previous = int(i) + 1
        t_parts.append(times[previous:])
        v_parts.append(heights[previous:])
        h_parts.append(horizontal[previous:])
        return np.concatenate(t_parts), np.concatenate(v_parts), np.vstack(h_parts)


def _from_components(
    components: PathGrid, endpoint: np.ndarray, refine_seed: int | None
) -> ExcursionPath:
    vertical = PathGrid(components.times, np.linalg.norm(components.values[:, :3], axis=1))
    horizontal = PathGrid(components.times, components.values[:, 3:])
    return ExcursionPath(
        horizontal=horizontal,
        vertical=vertical,
        endpoint_x=endpoint,
        components=components,
        refine_seed=refine_seed,
    )


# ----------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------
def sample_gamma_x(
    rng: RngState,
    x: Sequence[float] | np.ndarray,
    d: int,
    steps: int = DEFAULT_STEPS,
) -> ExcursionPath:
    """Excursion conditioned to end at ``(x, 0)``.

    The duration is ``r |x|**2`` with ``r`` from the normalised duration law;
    the vertical part is a Bessel(3) bridge from 0 to 0 and the horizontal
    part an independent Brownian bridge from 0 to ``x`` over that duration.
    """
    d = _check_dimension(d)
    endpoint = _check_endpoint(x, d)
    duration = float(sample_gamma_x_duration(rng, d)) * float(np.dot(endpoint, endpoint))
    vertical = sample_bessel3_components(rng, duration, steps)
    horizontal = sample_brownian_bridge(rng, d - 1, endpoint, duration, steps)
    components = PathGrid(vertical.times, np.hstack([vertical.values, horizontal.values]))
    return _from_components(components, endpoint, rng.derive_seed())


def sample_n_plus_truncated(
    rng: RngState,
    d: int,
    steps: int = DEFAULT_STEPS,
    r_min: float = ITO_R_MIN,
    r_max: float = ITO_R_MAX,
) -> ExcursionPath:
    """Unconditioned positive excursion with its Ito duration truncated to ``[r_min, r_max]``.

    The vertical part is a Bessel(3) bridge over the duration and the
    horizontal part a free Brownian motion; its endpoint is recorded as
    ``endpoint_x``.
    """
    d = _check_dimension(d)
    duration = float(sample_ito_duration(rng, r_min, r_max))
    vertical = sample_bessel3_components(rng, duration, steps)
    horizontal = sample_brownian_motion(rng, d - 1, duration, steps)
    components = PathGrid(vertical.times, np.hstack([vertical.values, horizontal.values]))
    return _from_components(components, horizontal.values[-1], rng.derive_seed())


# ----------------------------------------------------------------------
# Slicing
# ----------------------------------------------------------------------
def _crossing(times, heights, horizontal, j: int, a: float) -> tuple[float, np.ndarray]:
    """Linear interpolation of the crossing of ``a`` between merged points j and j+1."""
    frac = (a - heights[j]) / (heights[j + 1] - heights[j])
    t = times[j] + frac * (times[j + 1] - times[j])
    h = horizontal[j] + frac * (horizontal[j + 1] - horizontal[j])
    return float(t), h


def slice(e: ExcursionPath, a: float) -> list[SubExcursion]:  # noqa: A001
    """All maximal intervals on which the height exceeds ``a``, in chronological order."""
    a = _check_level(a)
    if e.max_height <= a:
        return []
    times, heights, horizontal = e.merged([a])
    above = heights > a
    if not above.any():
        return []
    edges = np.diff(above.astype(np.int8))
    starts = list(np.flatnonzero(edges == 1) + 1)
    ends = list(np.flatnonzero(edges == -1))
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        ends.append(above.size - 1)

    pieces: list[SubExcursion] = []
    for index, (s, f) in enumerate(zip(starts, ends)):
        if s == 0:
            t_start, h_start = float(times[0]), horizontal[0]
        else:
            t_start, h_start = _crossing(times, heights, horizontal, s - 1, a)
        if f == above.size - 1:
            t_end, h_end = float(times[-1]), horizontal[-1]
        else:
            t_end, h_end = _crossing(times, heights, horizontal, f, a)
        delta = np.asarray(h_end - h_start, dtype=float)
        pieces.append(
            SubExcursion(
                start_time=t_start,
                end_time=t_end,
                delta=delta,
                chrono_index=index,
                level=a,
            )
        )
    return pieces


def hits_level(e: ExcursionPath, a: float) -> float | None:
    """First time the height reaches ``a`` (refined), or None."""
    a = _check_level(a)
    if e.max_height < a:
        return None
    times, heights, horizontal = e.merged([a])
    reached = np.flatnonzero(heights >= a)
    if reached.size == 0:
        return None
    j = int(reached[0])
    if j == 0:
        return float(times[0])
    return _crossing(times, heights, horizontal, j - 1, a)[0]


def martingale_value(
    e: ExcursionPath, a: float, omega: float, eps_floor: float = 0.0
) -> tuple[float, int]:
    """``sum |delta|**omega`` over the slices at ``a`` and the number discarded below the floor."""
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}.")
    if eps_floor < 0:
        raise ValueError("eps_floor must be non-negative.")
    pieces = slice(e, a)
    kept = [p.size for p in pieces if p.size >= eps_floor]
    return float(sum(s**omega for s in kept)), len(pieces) - len(kept)


def no_bubble_check(e: ExcursionPath, levels: Sequence[float], eps: float) -> float:
    """Smallest |delta| among slices longer than ``eps`` at any of ``levels``; inf if none."""
    if eps < 0:
        raise ValueError("eps must be non-negative.")
    smallest = math.inf
    for a in levels:
        for piece in slice(e, a):
            if piece.duration > eps:
                smallest = min(smallest, piece.size)
    return smallest


# ----------------------------------------------------------------------
# Bismut description
# ----------------------------------------------------------------------
class BismutSample(NamedTuple):
    height: float
    left: PathGrid
    right: PathGrid

    @property
    def kill_times(self) -> tuple[float, float]:
        return self.left.duration, self.right.duration


def _killed_leg(
    rng: RngState, d: int, height: float, steps: int, alpha: float | None
) -> PathGrid:
    """Brownian motion in R^d from 0 killed when its last coordinate reaches ``-height``.

    The kill time is ``height**2 / G**2``; on ``[0, kill]`` the last coordinate
    plus ``height`` is a Bessel(3) bridge from ``height`` to 0. With ``alpha``
    set, the horizontal part is the isotropic alpha-stable process obtained
    by Brownian subordination instead of Brownian motion.
    """
    g = float(rng.generator.standard_normal())
    kill = height**2 / g**2
    vertical = sample_bessel3_components(rng, kill, steps, start_height=height).norm()
    last = vertical.values[:, 0] - height
    if alpha is None:
        horizontal = sample_brownian_motion(rng, d - 1, kill, steps).values
    else:
        horizontal = stable_horizontal(rng, alpha, vertical.times, np.zeros(d - 1))
    last[-1] = -height
    return PathGrid(vertical.times, np.hstack([horizontal, last[:, None]]))


def bismut_sample(
    rng: RngState,
    d: int,
    a_max: float,
    steps: int = 1024,
    alpha: float | None = None,
) -> BismutSample:
    """Height uniform on ``[0, a_max]`` and two independent killed legs.

    Both legs start at the origin (relative coordinates) and are killed when
    their last coordinate reaches ``-height``.
    """
    d = _check_dimension(d)
    if not a_max > 0:
        raise ValueError("a_max must be positive.")
    if alpha is not None and not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2).")
    height = float(sample_uniform(rng, 0.0, a_max))
    left = _killed_leg(rng, d, height, steps, alpha)
    right = _killed_leg(rng, d, height, steps, alpha)
    return BismutSample(height, left, right)


# ----------------------------------------------------------------------
# Many-to-one, left-hand side
# ----------------------------------------------------------------------
@dataclass(frozen=True, slots=True, eq=False)
class PathView:
    """A piece of an excursion, materialised as a path in R^d only on demand.

    ``reverse`` views run backwards from the excursion's end, so they start
    at ``(x, 0)``.
    """

    excursion: ExcursionPath
    start: float
    end: float
    reverse: bool = False

    @property
    def duration(self) -> float:
        return self.end - self.start

    def path(self) -> PathGrid:
        full = self.excursion.combined()
        times = full.times
        inner = (times > self.start) & (times < self.end)
        grid = np.concatenate([[self.start], times[inner], [self.end]])
        values = full.at(grid)
        if self.reverse:
            return PathGrid(self.end - grid[::-1], values[::-1])
        return PathGrid(grid - self.start, values)


PathFunctional = Callable[[PathView, PathView], float]


def many_to_one_terms(
    e: ExcursionPath, a: float, F: PathFunctional, weight_power: float | None = None
) -> float:
    """``sum_s |delta_s|**d F(before s, reversed after s)`` for one excursion."""
    power = e.d if weight_power is None else weight_power
    total = 0.0
    for piece in slice(e, a):
        before = PathView(e, 0.0, piece.start_time)
        after = PathView(e, piece.end_time, e.duration, reverse=True)
        total += piece.size**power * float(F(before, after))
    return total


def many_to_one_lhs(
    rng: RngState,
    x: Sequence[float] | np.ndarray,
    d: int,
    a: float,
    F: PathFunctional,
    N: int,
    steps: int = DEFAULT_STEPS,
    threads: int = 1,
) -> EstimateReport:
    """Monte-Carlo mean over conditioned excursions of the weighted sum of F over slices."""
    d = _check_dimension(d)
    endpoint = _check_endpoint(x, d)
    a = _check_level(a)
    if N < MIN_ENSEMBLE:
        raise ValueError(f"many_to_one_lhs needs N >= {MIN_ENSEMBLE}, got {N}.")
    seed = rng.derive_seed()

    def one(stream: RngState) -> float:
        return many_to_one_terms(sample_gamma_x(stream, endpoint, d, steps), a, F)

    values = map_streams(one, seed, N, threads)
    return mean_ci(values, seeds=(seed,), diagnostics={"steps": steps, "level": a, "side": "lhs"})


# ----------------------------------------------------------------------
# Ensembles
# ----------------------------------------------------------------------
def estimate_martingale(
    rng: RngState,
    x: Sequence[float] | np.ndarray,
    d: int,
    levels: Sequence[float],
    omega: float,
    N: int,
    steps: int = DEFAULT_STEPS,
    eps_floor: float | None = None,
    threads: int = 1,
) -> dict[float, EstimateReport]:
    """Ensemble mean of the level-``a`` martingale for every level, one sample set for all.

    The small-excursion floor defaults to ``1e-4 |x|``; the effect of the
    floor is estimated by re-summing with half the floor and reported as
    ``tail_estimate``.
    """
    d = _check_dimension(d)
    endpoint = _check_endpoint(x, d)
    levels = [_check_level(a) for a in levels]
    if N < MIN_ENSEMBLE:
        raise ValueError(f"estimate_martingale needs N >= {MIN_ENSEMBLE}, got {N}.")
    floor = 1e-4 * float(np.linalg.norm(endpoint)) if eps_floor is None else eps_floor
    seed = rng.derive_seed()

    def one(stream: RngState) -> np.ndarray:
        e = sample_gamma_x(stream, endpoint, d, steps)
        row = []
        for a in levels:
            sizes = np.array([p.size for p in slice(e, a)])
            full = float(np.sum(sizes[sizes >= floor] ** omega)) if sizes.size else 0.0
            half = float(np.sum(sizes[sizes >= floor / 2] ** omega)) if sizes.size else 0.0
            row.append((full, half, float(np.sum(sizes < floor))))
        return np.array(row)

    per_path = np.stack(map_streams(one, seed, N, threads))
    reports: dict[float, EstimateReport] = {}
    for k, a in enumerate(levels):
        full, half, discarded = per_path[:, k, 0], per_path[:, k, 1], per_path[:, k, 2]
        report = mean_ci(
            full,
            seeds=(seed,),
            diagnostics={
                "level": a,
                "omega": omega,
                "steps": steps,
                "eps_floor": floor,
                "tail_estimate": float(np.mean(half - full)),
                "discarded_mean": float(discarded.mean()),
            },
        )
        logger.info(
            "Level martingale estimated",
            extra={"ctx_level": a, "ctx_estimate": report.estimate, "ctx_std_error": report.std_error},
        )
        reports[a] = report
    return reports


class HittingMoments(NamedTuple):
    first: EstimateReport
    second: EstimateReport


def weighted_hitting_moments(
    rng: RngState,
    x: Sequence[float] | np.ndarray,
    d: int,
    a: float,
    N: int,
    steps: int = DEFAULT_STEPS,
    threads: int = 1,
) -> HittingMoments:
    """First two moments of the hitting time of ``a`` under the martingale-weighted law.

    Weights are the level-``a`` martingale values with exponent ``d``; the
    estimator is self-normalised.
    """
    d = _check_dimension(d)
    endpoint = _check_endpoint(x, d)
    a = _check_level(a)
    if N < MIN_ENSEMBLE:
        raise ValueError(f"weighted_hitting_moments needs N >= {MIN_ENSEMBLE}, got {N}.")
    seed = rng.derive_seed()

    def one(stream: RngState) -> tuple[float, float]:
        e = sample_gamma_x(stream, endpoint, d, steps)
        weight, _ = martingale_value(e, a, d)
        hit = hits_level(e, a)
        return weight, (hit if hit is not None else 0.0)

    rows = np.array(map_streams(one, seed, N, threads))
    weights, hits = rows[:, 0], rows[:, 1]
    info = {"level": a, "steps": steps}
    return HittingMoments(
        weighted_mean_ci(hits, weights, seeds=(seed,), diagnostics=info),
        weighted_mean_ci(hits**2, weights, seeds=(seed,), diagnostics=info),
    )


def branching_resample(
    rng: RngState,
    x: Sequence[float] | np.ndarray,
    d: int,
    a: float,
    a_prime: float,
    N: int,
    steps: int = 2048,
    omega: float | None = None,
    size_floor: float = 1e-2,
    threads: int = 1,
):
    """Compares the law of the level-``a_prime`` martingale computed two ways.

    Directly, by slicing conditioned excursions at ``a_prime``; and through
    the branching property, by slicing at ``a``, re-sampling each slice of
    size ``x_i`` from the excursion law conditioned to end at ``x_i`` and
    slicing that at ``a_prime - a``. Slices smaller than ``size_floor |x|``
    are not re-sampled; their count is reported.
    """
    d = _check_dimension(d)
    endpoint = _check_endpoint(x, d)
    a, a_prime = _check_level(a), _check_level(a_prime)
    if not a_prime > a:
        raise ValueError("a_prime must exceed a.")
    power = float(d if omega is None else omega)
    floor = size_floor * float(np.linalg.norm(endpoint))
    direct_seed = rng.derive_seed()
    resample_seed = rng.derive_seed()

    def direct(stream: RngState) -> float:
        return martingale_value(sample_gamma_x(stream, endpoint, d, steps), a_prime, power)[0]

    def resampled(stream: RngState) -> tuple[float, int]:
        first = sample_gamma_x(stream, endpoint, d, steps)
        total, skipped = 0.0, 0
        for piece in slice(first, a):
            if piece.size < floor:
                skipped += 1
                continue
            child = sample_gamma_x(stream, piece.delta, d, steps)
            total += martingale_value(child, a_prime - a, power)[0]
        return total, skipped

    direct_values = np.array(map_streams(direct, direct_seed, N, threads))
    rows = np.array(map_streams(resampled, resample_seed, N, threads))
    result = ks_2sample(direct_values, rows[:, 0], name="branching_consistency")
    logger.info(
        "Branching consistency checked",
        extra={"ctx_statistic": result.statistic, "ctx_skipped": float(rows[:, 1].mean())},
    )
    return result


# ----------------------------------------------------------------------
# Export
# ----------------------------------------------------------------------
def slice_rows(replicate: int, pieces: Iterable[SubExcursion]) -> list[list[float]]:
    return [
        [replicate, p.level, p.chrono_index, p.start_time, p.end_time, *p.delta.tolist()]
        for p in pieces
    ]


def export_slices_csv(
    path: str | Path, replicates: Sequence[tuple[int, Sequence[SubExcursion]]], d: int
) -> Path:
    """One row per slice: replicate id, level, index, start, end, delta components."""
    header = ["replicate", "level", "index", "start", "end"] + [f"delta_{k}" for k in range(d - 1)]
    rows: list[list[float]] = []
    for replicate, pieces in replicates:
        rows.extend(slice_rows(replicate, pieces))
    return write_csv(path, header, rows)
