"""Bessel-Brownian paths in the upper half-space and exact spine marginals.

A Bessel-Brownian path has a (d-1)-dimensional Brownian horizontal part and
a Bessel(3) vertical part started from 0. Run up to its last passage at a
level, it is one of the two legs on the right-hand side of the many-to-one
formula for excursions. The spine marginals are exact: the horizontal
process evaluated at the first time a one-dimensional Brownian motion hits
``a``, which is ``a**2 / G**2`` for a standard normal ``G``.

Stable variants use the convention that the isotropic alpha-stable process
has characteristic function ``exp(-t |u|**alpha)``; it is sampled as a
Brownian motion run at twice a positive (alpha/2)-stable clock.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import integrate, special

from .bridges import HorizonError, PathGrid, sample_brownian_bridge, sample_brownian_motion
from .randkit import RngState, map_streams, sample_positive_stable
from .reports import write_csv
from .stats import EstimateReport, mean_ci

logger = logging.getLogger(__name__)

MAX_DOUBLINGS = 8
HORIZON_FACTOR = 10.0
TRANSIENCE_FACTOR = 3.0

LastPassageMethod = Literal["williams", "horizon"]


def _check_dimension(d: int) -> int:
    if not isinstance(d, (int, np.integer)) or d < 3:
        raise ValueError(f"Half-space dimension d must be an integer >= 3, got {d!r}.")
    return int(d)


def _check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}.")
    return float(alpha)


def _horizontal_start(start_x: Sequence[float] | np.ndarray | None, d: int) -> np.ndarray:
    if start_x is None:
        return np.zeros(d - 1)
    vec = np.atleast_1d(np.asarray(start_x, dtype=float))
    if vec.shape != (d - 1,):
        raise ValueError(f"start_x must be a point of R^{d - 1}, got shape {vec.shape}.")
    return vec


@dataclass(frozen=True, slots=True, eq=False)
class HalfSpacePath:
    """A path in the closed upper half-space started on its boundary.

    ``components`` keeps the 3-dimensional Brownian motion whose norm is the
    vertical part, so that grid simulations can be extended.
    """

    horizontal: PathGrid
    vertical: PathGrid
    start_x: np.ndarray
    components: PathGrid | None = None

    def __post_init__(self) -> None:
        if not np.array_equal(self.horizontal.times, self.vertical.times):
            raise ValueError("Horizontal and vertical parts must share their time grid.")
        if self.vertical.dim != 1:
            raise ValueError("The vertical part must be one-dimensional.")
        heights = self.vertical.values[:, 0]
        if np.any(heights < 0):
            raise ValueError("The vertical part must be non-negative.")
        if heights[0] != 0.0:
            raise ValueError("The vertical part must start at 0.")
        start = np.asarray(self.start_x, dtype=float)
        if not np.array_equal(self.horizontal.values[0], start):
            raise ValueError("The horizontal part must start at start_x.")
        object.__setattr__(self, "start_x", start)

    @property
    def d(self) -> int:
        return self.horizontal.dim + 1

    @property
    def duration(self) -> float:
        return self.vertical.duration

    @property
    def height(self) -> np.ndarray:
        return self.vertical.values[:, 0]

    def path(self) -> PathGrid:
        """The path in R^d, vertical coordinate last."""
        return PathGrid(
            self.vertical.times, np.hstack([self.horizontal.values, self.vertical.values])
        )

    def until(self, t: float) -> "HalfSpacePath":
        return HalfSpacePath(self.horizontal.until(t), self.vertical.until(t), self.start_x)


def _from_motion(motion: PathGrid, start: np.ndarray) -> HalfSpacePath:
    vertical = PathGrid(motion.times, np.linalg.norm(motion.values[:, :3], axis=1))
    horizontal = PathGrid(motion.times, motion.values[:, 3:])
    return HalfSpacePath(horizontal, vertical, start, components=motion)


def sample_bessel_brownian(
    rng: RngState,
    d: int,
    start_x: Sequence[float] | np.ndarray | None,
    horizon: float,
    steps: int,
) -> HalfSpacePath:
    """Bessel(3) height from 0 and independent Brownian horizontal part from ``start_x``."""
    d = _check_dimension(d)
    start = _horizontal_start(start_x, d)
    origin = np.concatenate([np.zeros(3), start])
    motion = sample_brownian_motion(rng, d + 2, horizon, steps, start=origin)
    return _from_motion(motion, start)


def stable_horizontal(
    rng: RngState,
    alpha: float,
    times: np.ndarray,
    start: Sequence[float] | np.ndarray,
) -> np.ndarray:
    """Isotropic alpha-stable path on ``times`` from ``start``, by Brownian subordination.

    Each grid increment is ``sqrt(2 S) N`` with ``S`` positive (alpha/2)-stable
    at the step's duration and ``N`` standard normal; the sum over a grid has
    the exact law of the process at the grid times.
    """
    alpha = _check_alpha(alpha)
    origin = np.atleast_1d(np.asarray(start, dtype=float))
    dt = np.diff(np.asarray(times, dtype=float))
    clock = sample_positive_stable(rng, alpha / 2.0, 1.0, size=dt.size) * dt ** (2.0 / alpha)
    increments = np.sqrt(2.0 * clock)[:, None] * rng.generator.standard_normal((dt.size, origin.size))
    return np.vstack([origin[None, :], origin + np.cumsum(increments, axis=0)])


def _extend(rng: RngState, p: HalfSpacePath, steps: int) -> HalfSpacePath:
    """Doubles the horizon of a grid-simulated path with fresh Brownian increments."""
    if p.components is None:
        raise ValueError("Only grid-simulated Bessel-Brownian paths can be extended.")
    motion = p.components
    tail = sample_brownian_motion(rng, motion.dim, p.duration, steps, start=motion.end)
    times = np.concatenate([motion.times, p.duration + tail.times[1:]])
    values = np.vstack([motion.values, tail.values[1:]])
    return _from_motion(PathGrid(times, values), p.start_x)


def grow_until(
    rng: RngState,
    d: int,
    start_x: Sequence[float] | np.ndarray | None,
    horizon: float,
    steps: int,
    done: Callable[[HalfSpacePath], bool],
    max_doublings: int = MAX_DOUBLINGS,
) -> HalfSpacePath:
    """Simulates from ``horizon`` and doubles it until ``done`` holds.

    Raises HorizonError after ``max_doublings`` unsuccessful doublings.
    """
    p = sample_bessel_brownian(rng, d, start_x, horizon, steps)
    for _ in range(max_doublings):
        if done(p):
            return p
        p = _extend(rng, p, steps)
    if done(p):
        return p
    raise HorizonError(
        f"Path did not reach the requested state within {max_doublings} horizon doublings "
        f"(final horizon {p.duration:.4g})."
    )


# ----------------------------------------------------------------------
# Passage times
# ----------------------------------------------------------------------
def last_passage(p: HalfSpacePath, a: float) -> float:
    """Last grid-interpolated time at which the height is at most ``a``."""
    if not a > 0:
        raise ValueError(f"Level a must be positive, got {a}.")
    heights, times = p.height, p.vertical.times
    if heights[-1] <= a:
        raise HorizonError(
            f"horizon too small: height {heights[-1]:.4g} at the horizon does not exceed {a}."
        )
    j = int(np.flatnonzero(heights <= a)[-1])
    frac = (a - heights[j]) / (heights[j + 1] - heights[j])
    return float(times[j] + frac * (times[j + 1] - times[j]))


def first_hitting(p: HalfSpacePath, a: float) -> float | None:
    """First grid-interpolated time at which the height reaches ``a``, or None."""
    if not a > 0:
        raise ValueError(f"Level a must be positive, got {a}.")
    heights, times = p.height, p.vertical.times
    reached = np.flatnonzero(heights >= a)
    if reached.size == 0:
        return None
    j = int(reached[0])
    frac = (a - heights[j - 1]) / (heights[j] - heights[j - 1])
    return float(times[j - 1] + frac * (times[j] - times[j - 1]))


def sample_to_last_passage(
    rng: RngState,
    d: int,
    a: float,
    start_x: Sequence[float] | np.ndarray | None = None,
    steps: int = 1024,
    method: LastPassageMethod = "williams",
    alpha: float | None = None,
) -> HalfSpacePath:
    """Bessel-Brownian path cut at its last passage at ``a``.

    ``"williams"`` is exact: the last passage time is ``a**2 / G**2`` and the
    height on ``[0, S_a]`` is a Bessel(3) bridge from 0 to ``a`` (the time
    reversal of a Brownian motion from ``a`` killed at 0). ``"horizon"``
    simulates on a grid from horizon ``10 a**2``, doubling until the height
    exceeds ``3 a`` at the horizon, and cuts at the grid last passage.

    With ``alpha`` set the horizontal part is the isotropic alpha-stable
    process on the same grid instead of Brownian motion.
    """
    d = _check_dimension(d)
    if not a > 0:
        raise ValueError(f"Level a must be positive, got {a}.")
    start = _horizontal_start(start_x, d)
    if alpha is not None:
        alpha = _check_alpha(alpha)
        brownian = sample_to_last_passage(rng, d, a, start, steps, method)
        times = brownian.vertical.times
        horizontal = PathGrid(times, stable_horizontal(rng, alpha, times, start))
        return HalfSpacePath(horizontal, brownian.vertical, start)
    if method == "williams":
        g = float(rng.generator.standard_normal())
        passage = a**2 / g**2
        vertical = sample_brownian_bridge(
            rng, 3, [a, 0.0, 0.0], passage, steps, start=np.zeros(3)
        ).norm()
        horizontal = sample_brownian_motion(rng, d - 1, passage, steps, start=start)
        return HalfSpacePath(horizontal, vertical, start)
    if method == "horizon":
        p = grow_until(
            rng,
            d,
            start,
            HORIZON_FACTOR * a**2,
            steps,
            lambda path: path.height[-1] > TRANSIENCE_FACTOR * a,
        )
        return p.until(last_passage(p, a))
    raise ValueError(f"Unknown last-passage method {method!r}.")


def sample_hitting_times(
    rng: RngState,
    a: float,
    N: int,
    steps: int = 1024,
    d: int = 3,
    threads: int = 1,
) -> np.ndarray:
    """Grid first-hitting times of ``a`` by the Bessel(3) height (upward grid bias)."""
    seed = rng.derive_seed()

    def one(stream: RngState) -> float:
        p = grow_until(stream, d, None, a**2, steps, lambda path: path.height.max() >= a)
        return first_hitting(p, a)

    return np.array(map_streams(one, seed, N, threads))


def bessel3_hitting_moments(a: float) -> tuple[float, float]:
    """First two moments of the first time a Bessel(3) process from 0 hits ``a``.

    The Laplace transform is ``y / sinh(y)`` with ``y = a sqrt(2 lam)``, whose
    expansion gives ``a**2 / 3`` and ``7 a**4 / 45``.
    """
    if not a > 0:
        raise ValueError(f"Level a must be positive, got {a}.")
    return a**2 / 3.0, 7.0 * a**4 / 45.0


def last_passage_laplace(a: float, lam: float) -> float:
    """``E exp(-lam S_a) = exp(-a sqrt(2 lam))`` for the Bessel(3) last passage at ``a``."""
    if not a > 0 or lam < 0:
        raise ValueError("Need a > 0 and lam >= 0.")
    return math.exp(-a * math.sqrt(2.0 * lam))


# ----------------------------------------------------------------------
# Spine marginals
# ----------------------------------------------------------------------
def _hitting_clock(rng: RngState, a: float, size: int | None) -> np.ndarray:
    g = rng.generator.standard_normal(size)
    return a**2 / g**2


def spine_size_brownian(rng: RngState, d: int, a: float, size: int | None = None) -> np.ndarray:
    """Exact isotropic Cauchy sample of scale ``a`` in R^(d-1): ``sqrt(T) N`` with ``T = a**2/G**2``."""
    d = _check_dimension(d)
    if not a > 0:
        raise ValueError(f"Level a must be positive, got {a}.")
    count = 1 if size is None else int(size)
    clock = _hitting_clock(rng, a, count)
    out = np.sqrt(clock)[:, None] * rng.generator.standard_normal((count, d - 1))
    return out[0] if size is None else out


def spine_size_stable(
    rng: RngState, d: int, alpha: float, a: float, size: int | None = None
) -> np.ndarray:
    """Isotropic alpha-stable horizontal process evaluated at the hitting time of ``a``.

    Its characteristic function is ``exp(-a sqrt(2) |u|**(alpha/2))``.
    """
    d = _check_dimension(d)
    alpha = _check_alpha(alpha)
    if not a > 0:
        raise ValueError(f"Level a must be positive, got {a}.")
    count = 1 if size is None else int(size)
    clock = _hitting_clock(rng, a, count)
    subordinator = sample_positive_stable(rng, alpha / 2.0, 1.0, size=count) * clock ** (2.0 / alpha)
    out = np.sqrt(2.0 * subordinator)[:, None] * rng.generator.standard_normal((count, d - 1))
    return out[0] if size is None else out


def spine_stable_cf(u: np.ndarray | float, alpha: float, a: float) -> np.ndarray | float:
    return np.exp(-a * math.sqrt(2.0) * np.abs(u) ** (alpha / 2.0))


def export_spine_csv(path: str | Path, a: float, samples: np.ndarray) -> Path:
    """One row per sample: replicate id, level, components."""
    samples = np.atleast_2d(samples)
    header = ["replicate", "a"] + [f"x_{k}" for k in range(samples.shape[1])]
    rows = [[i, a, *row.tolist()] for i, row in enumerate(samples)]
    return write_csv(path, header, rows)


# ----------------------------------------------------------------------
# Many-to-one, right-hand side
# ----------------------------------------------------------------------
def many_to_one_rhs(
    rng: RngState,
    x: Sequence[float] | np.ndarray,
    d: int,
    a: float,
    F: Callable[[HalfSpacePath, HalfSpacePath], float],
    N: int,
    steps: int = 1024,
    method: LastPassageMethod = "williams",
    threads: int = 1,
) -> EstimateReport:
    """``|x|**d`` times the mean of F over two independent legs cut at their last passage at ``a``.

    The first leg starts at the origin and the second at ``(x, 0)``. Legs
    expose ``duration`` and ``path()`` like the excursion-side views.
    """
    d = _check_dimension(d)
    endpoint = _horizontal_start(x, d)
    norm = float(np.linalg.norm(endpoint))
    if not norm > 0:
        raise ValueError("x must be non-zero.")
    if N < 1:
        raise ValueError("N must be positive.")
    seed = rng.derive_seed()

    def one(stream: RngState) -> float:
        first = sample_to_last_passage(stream, d, a, None, steps, method)
        second = sample_to_last_passage(stream, d, a, endpoint, steps, method)
        return float(F(first, second))

    values = map_streams(one, seed, N, threads)
    report = mean_ci(values, seeds=(seed,), diagnostics={"level": a, "method": method, "side": "rhs"})
    return report.scaled(norm**d)


# ----------------------------------------------------------------------
# Stable disintegration (alpha = 1)
# ----------------------------------------------------------------------
def _cauchy_ray_density(v: float | np.ndarray, d: int) -> float | np.ndarray:
    """Density of the (d-1)-dimensional Cauchy law with ``exp(-|u|)`` transform at distance v."""
    return special.gamma(d / 2.0) * math.pi ** (-d / 2.0) * (1.0 + np.asarray(v) ** 2) ** (-d / 2.0)


def _only_cauchy(alpha: float) -> None:
    if alpha != 1.0:
        raise NotImplementedError(
            "The stable ray density has a closed form only for alpha = 1."
        )


def stable_disintegration_constant(d: int, alpha: float = 1.0) -> tuple[float, float]:
    """Normalising constant of the stable endpoint disintegration, by quadrature.

    Returns ``(value, closed_form)``; the closed form uses the Beta function.
    """
    d = _check_dimension(d)
    _only_cauchy(alpha)
    omega = d - 1 + alpha / 2.0
    prefactor = alpha / (2.0 * math.sqrt(2.0 * math.pi))
    value, _ = integrate.quad(
        lambda v: _cauchy_ray_density(v, d) * v ** (omega - 1.0), 0.0, np.inf, limit=200
    )
    closed = (
        prefactor
        * special.gamma(d / 2.0)
        * math.pi ** (-d / 2.0)
        * 0.5
        * special.beta(omega / 2.0, (d - omega) / 2.0)
    )
    return prefactor * value, float(closed)


def stable_duration_density(r: float | np.ndarray, d: int, alpha: float = 1.0):
    """Probability density of the normalised duration of a stable conditioned excursion."""
    d = _check_dimension(d)
    _only_cauchy(alpha)
    omega = d - 1 + alpha / 2.0
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("Durations must be positive.")
    _, constant = stable_disintegration_constant(d, alpha)
    raw = _cauchy_ray_density(r_arr ** (-1.0 / alpha), d) / (
        2.0 * math.sqrt(2.0 * math.pi) * r_arr ** (1.0 + omega / alpha)
    )
    return raw / constant
