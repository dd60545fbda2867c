"""Exact samplers for Brownian and Bessel(3) bridges and excursion durations.

Grid values are exact draws from the continuous-time law at the grid times;
nothing here discretises an SDE. A Bessel(3) bridge is the Euclidean norm of
a 3-dimensional Brownian bridge, so callers that need to refine a Bessel
path later keep the three Brownian components around.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special
from scipy import stats as sps

from .randkit import RngState

logger = logging.getLogger(__name__)

ITO_R_MIN = 1e-4
ITO_R_MAX = 1e4


class HorizonError(RuntimeError):
    """Raised when a path never reaches the state a caller needs within its horizon."""


@dataclass(frozen=True, slots=True, eq=False)
class PathGrid:
    """A trajectory in R^dim sampled at strictly increasing times from 0.

    ``values`` has shape ``(len(times), dim)``; both arrays are read-only.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or times.size < 2:
            raise ValueError("A path needs at least two grid times.")
        if times[0] != 0.0:
            raise ValueError("Path times must start at 0.")
        if np.any(np.diff(times) <= 0):
            raise ValueError("Path times must be strictly increasing.")
        if values.shape[0] != times.size:
            raise ValueError("A path needs exactly one value per grid time.")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform_times(cls, duration: float, steps: int) -> np.ndarray:
        if not duration > 0:
            raise ValueError(f"duration must be positive, got {duration}.")
        if steps < 2:
            raise ValueError(f"steps must be at least 2, got {steps}.")
        times = np.linspace(0.0, duration, steps + 1)
        times[-1] = duration
        return times

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def steps(self) -> int:
        return int(self.times.size - 1)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def step(self) -> float:
        """Largest grid spacing."""
        return float(np.max(np.diff(self.times)))

    @property
    def start(self) -> np.ndarray:
        return self.values[0]

    @property
    def end(self) -> np.ndarray:
        return self.values[-1]

    def __len__(self) -> int:
        return int(self.times.size)

    def at(self, t: float | np.ndarray) -> np.ndarray:
        """Linear interpolation of every component at time(s) ``t``."""
        t_arr = np.asarray(t, dtype=float)
        out = np.stack(
            [np.interp(t_arr, self.times, self.values[:, k]) for k in range(self.dim)],
            axis=-1,
        )
        return out

    def norm(self) -> "PathGrid":
        return PathGrid(self.times, np.linalg.norm(self.values, axis=1))

    def component(self, index: int) -> "PathGrid":
        return PathGrid(self.times, self.values[:, index])

    def until(self, t: float) -> "PathGrid":
        """The path restricted to ``[0, t]``, closed with the interpolated value at ``t``."""
        if not 0 < t <= self.duration:
            raise ValueError(f"Cut time {t} outside (0, {self.duration}].")
        keep = self.times < t
        times = np.append(self.times[keep], t)
        values = np.vstack([self.values[keep], self.at(t)[None, :]])
        return PathGrid(times, values)

    def reversed(self) -> "PathGrid":
        """``s -> path(duration - s)``."""
        return PathGrid(self.duration - self.times[::-1], self.values[::-1])

    def shifted(self, offset: Sequence[float] | np.ndarray) -> "PathGrid":
        return PathGrid(self.times, self.values + np.asarray(offset, dtype=float))


# ----------------------------------------------------------------------
# Brownian building blocks
# ----------------------------------------------------------------------
def _point(value: Sequence[float] | np.ndarray | float, n: int, what: str) -> np.ndarray:
    vec = np.atleast_1d(np.asarray(value, dtype=float))
    if vec.shape != (n,):
        raise ValueError(f"{what} must be a point of R^{n}, got shape {vec.shape}.")
    return vec


def _brownian_increments(
    generator: np.random.Generator, times: np.ndarray, n: int
) -> np.ndarray:
    dt = np.diff(times)
    steps = generator.standard_normal((dt.size, n)) * np.sqrt(dt)[:, None]
    path = np.zeros((times.size, n))
    np.cumsum(steps, axis=0, out=path[1:])
    return path


def sample_brownian_motion(
    rng: RngState,
    n: int,
    duration: float,
    steps: int,
    start: Sequence[float] | np.ndarray | float | None = None,
) -> PathGrid:
    """n-dimensional Brownian motion from ``start`` (default 0) on a uniform grid."""
    if n < 1:
        raise ValueError("dimension must be at least 1.")
    times = PathGrid.uniform_times(duration, steps)
    origin = np.zeros(n) if start is None else _point(start, n, "start")
    return PathGrid(times, origin + _brownian_increments(rng.generator, times, n))


def sample_brownian_bridge(
    rng: RngState,
    n: int,
    endpoint: Sequence[float] | np.ndarray | float,
    duration: float,
    steps: int,
    start: Sequence[float] | np.ndarray | float | None = None,
) -> PathGrid:
    """Brownian bridge from ``start`` (default 0) to ``endpoint`` over ``[0, duration]``.

    Built as ``W(t) - (t / T) (W(T) - (endpoint - start))`` from a Brownian
    motion ``W`` on the same grid. This has exactly the joint Gaussian law of
    the sequential conditional updates at the grid points. The last value is
    set to ``endpoint`` exactly.
    """
    if n < 1:
        raise ValueError("dimension must be at least 1.")
    if steps < 2:
        raise ValueError(f"steps must be at least 2, got {steps}.")
    times = PathGrid.uniform_times(duration, steps)
    end = _point(endpoint, n, "endpoint")
    origin = np.zeros(n) if start is None else _point(start, n, "start")
    w = _brownian_increments(rng.generator, times, n)
    fraction = (times / duration)[:, None]
    values = origin + w - fraction * (w[-1] - (end - origin))
    values[0] = origin
    values[-1] = end
    return PathGrid(times, values)


def conditional_midpoints(
    generator: np.random.Generator,
    start_value: np.ndarray,
    end_value: np.ndarray,
    span: float,
    depth: int,
) -> np.ndarray:
    """Dyadic Brownian-bridge fill of one grid interval.

    Returns ``2**depth + 1`` points (endpoints included) of a Brownian bridge
    from ``start_value`` to ``end_value`` over ``span`` time units, produced by
    ``depth`` rounds of conditional-midpoint bisection. A midpoint between
    points ``h`` apart is Gaussian around their average with variance ``h / 4``.
    """
    if depth < 0:
        raise ValueError("depth must be non-negative.")
    a = np.atleast_1d(np.asarray(start_value, dtype=float))
    b = np.atleast_1d(np.asarray(end_value, dtype=float))
    values = np.stack([a, b])
    h = float(span)
    for _ in range(depth):
        mids = 0.5 * (values[:-1] + values[1:]) + math.sqrt(h / 4.0) * generator.standard_normal(
            (values.shape[0] - 1, values.shape[1])
        )
        merged = np.empty((2 * values.shape[0] - 1, values.shape[1]))
        merged[0::2] = values
        merged[1::2] = mids
        values = merged
        h /= 2.0
    return values


def refine_bridge(rng: RngState, path: PathGrid) -> PathGrid:
    """Doubles the grid of a Brownian (bridge) path, keeping every existing point.

    Each new point is the conditional midpoint of its two neighbours, so the
    refined path has the same law at the old grid times and the correct
    Brownian law at the new ones.
    """
    h = np.diff(path.times)
    mids = 0.5 * (path.values[:-1] + path.values[1:]) + np.sqrt(h / 4.0)[:, None] * (
        rng.generator.standard_normal((h.size, path.dim))
    )
    times = np.empty(2 * path.steps + 1)
    times[0::2] = path.times
    times[1::2] = 0.5 * (path.times[:-1] + path.times[1:])
    values = np.empty((times.size, path.dim))
    values[0::2] = path.values
    values[1::2] = mids
    return PathGrid(times, values)


def sample_bessel3_components(
    rng: RngState,
    duration: float,
    steps: int,
    start_height: float = 0.0,
    end_height: float = 0.0,
) -> PathGrid:
    """The 3-dimensional Brownian bridge whose norm is a Bessel(3) bridge.

    Runs from ``(start_height, 0, 0)`` to ``(end_height, 0, 0)``.
    """
    if start_height < 0 or end_height < 0:
        raise ValueError("Bessel heights must be non-negative.")
    return sample_brownian_bridge(
        rng,
        3,
        [end_height, 0.0, 0.0],
        duration,
        steps,
        start=[start_height, 0.0, 0.0],
    )


def sample_bessel3_bridge(rng: RngState, duration: float, steps: int) -> PathGrid:
    """Bessel(3) bridge from 0 to 0: the norm of a 3-d Brownian bridge from 0 to 0."""
    return sample_bessel3_components(rng, duration, steps).norm()


# ----------------------------------------------------------------------
# Duration laws
# ----------------------------------------------------------------------
def _check_excursion_dimension(d: int) -> int:
    if not isinstance(d, (int, np.integer)) or d < 3:
        raise ValueError(f"Half-space dimension d must be an integer >= 3, got {d!r}.")
    return int(d)


def gamma_x_duration_density(r: float | np.ndarray, d: int) -> float | np.ndarray:
    """Density ``exp(-1/(2r)) / (2**(d/2) Gamma(d/2) r**(d/2 + 1))`` on (0, inf)."""
    d = _check_excursion_dimension(d)
    r_arr = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_density = (
            -1.0 / (2.0 * r_arr)
            - 0.5 * d * math.log(2.0)
            - special.gammaln(0.5 * d)
            - (0.5 * d + 1.0) * np.log(r_arr)
        )
        density = np.where(r_arr > 0, np.exp(log_density), 0.0)
    return float(density) if density.ndim == 0 else density


def gamma_x_duration_cdf(r: float | np.ndarray, d: int) -> float | np.ndarray:
    """``P(duration <= r)``; ``1/duration`` is chi-square with ``d`` degrees of freedom."""
    d = _check_excursion_dimension(d)
    r_arr = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        cdf = np.where(r_arr > 0, sps.chi2.sf(1.0 / np.maximum(r_arr, 1e-300), d), 0.0)
    return float(cdf) if cdf.ndim == 0 else cdf


def sample_gamma_x_duration(
    rng: RngState, d: int, size: int | None = None
) -> float | np.ndarray:
    """Normalised duration ``r = 1/s`` with ``s ~ Gamma(d/2, rate=1/2)``."""
    d = _check_excursion_dimension(d)
    s = rng.generator.gamma(0.5 * d, 2.0, size)
    return 1.0 / s


def _quad_half_line(fn) -> tuple[float, float]:
    head, head_err = integrate.quad(fn, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    tail, tail_err = integrate.quad(fn, 1.0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
    return head + tail, head_err + tail_err


def gamma_x_normalization(d: int) -> tuple[float, float]:
    """Quadrature of the duration density over (0, inf); returns (value, error estimate)."""
    d = _check_excursion_dimension(d)
    return _quad_half_line(lambda r: gamma_x_duration_density(r, d))


def disintegration_integrand(t: float, d: int) -> float:
    """``exp(-1/(2t)) / (2 (2 pi)**(d/2) t**(d/2 + 1))``."""
    if t <= 0:
        return 0.0
    return math.exp(
        -1.0 / (2.0 * t)
        - math.log(2.0)
        - 0.5 * d * math.log(2.0 * math.pi)
        - (0.5 * d + 1.0) * math.log(t)
    )


def disintegration_integral(d: int) -> tuple[float, float]:
    d = _check_excursion_dimension(d)
    return _quad_half_line(lambda t: disintegration_integrand(t, d))


def disintegration_closed_form(d: int) -> float:
    """``Gamma(d/2) / (2 pi**(d/2))``; equals ``1/(4 pi)`` at d = 3."""
    d = _check_excursion_dimension(d)
    return 0.5 * math.pi ** (-0.5 * d) * math.gamma(0.5 * d)


def _check_ito_window(r_min: float, r_max: float) -> None:
    if not (r_min > 0 and r_max > r_min and math.isfinite(r_max)):
        raise ValueError(
            f"Ito duration window needs 0 < r_min < r_max < inf, got [{r_min}, {r_max}]."
        )


def ito_duration_density(
    r: float | np.ndarray, r_min: float = ITO_R_MIN, r_max: float = ITO_R_MAX
) -> float | np.ndarray:
    """Normalised ``r**(-3/2)`` density on ``[r_min, r_max]``."""
    _check_ito_window(r_min, r_max)
    r_arr = np.asarray(r, dtype=float)
    mass = 2.0 * (r_min**-0.5 - r_max**-0.5)
    inside = (r_arr >= r_min) & (r_arr <= r_max)
    density = np.where(inside, np.abs(r_arr) ** -1.5 / mass, 0.0)
    return float(density) if density.ndim == 0 else density


def ito_duration_cdf(
    r: float | np.ndarray, r_min: float = ITO_R_MIN, r_max: float = ITO_R_MAX
) -> float | np.ndarray:
    _check_ito_window(r_min, r_max)
    r_arr = np.clip(np.asarray(r, dtype=float), r_min, r_max)
    cdf = (r_min**-0.5 - r_arr**-0.5) / (r_min**-0.5 - r_max**-0.5)
    return float(cdf) if cdf.ndim == 0 else cdf


def ito_duration_quantile(
    u: float | np.ndarray, r_min: float = ITO_R_MIN, r_max: float = ITO_R_MAX
) -> float | np.ndarray:
    _check_ito_window(r_min, r_max)
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr < 0) | (u_arr > 1)):
        raise ValueError("Quantile levels must lie in [0, 1].")
    q = (r_min**-0.5 - u_arr * (r_min**-0.5 - r_max**-0.5)) ** -2.0
    return float(q) if q.ndim == 0 else q


def sample_ito_duration(
    rng: RngState,
    r_min: float = ITO_R_MIN,
    r_max: float = ITO_R_MAX,
    size: int | None = None,
) -> float | np.ndarray:
    """Duration with density proportional to ``r**(-3/2)`` on ``[r_min, r_max]``.

    The untruncated density is not normalisable, so the window is mandatory.
    """
    _check_ito_window(r_min, r_max)
    return ito_duration_quantile(rng.generator.uniform(0.0, 1.0, size), r_min, r_max)
