"""Seedable random-number primitives shared by every sampler in the lab.

Streams are counter-based (numpy's Philox) and keyed by ``(seed, stream_id)``
so that replicate ``i`` of an ensemble always sees the same numbers no matter
how many worker threads the ensemble is fanned out to.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

_UINT64_MAX = 2**64 - 1

T = TypeVar("T")


def _check_word(name: str, value: int) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}.")
    value = int(value)
    if not 0 <= value <= _UINT64_MAX:
        raise ValueError(f"{name} must fit in an unsigned 64-bit word, got {value}.")
    return value


@dataclass(slots=True)
class RngState:
    """A single-owner random stream keyed by ``(seed, stream_id)``.

    The underlying bit generator is Philox-4x64, whose 128-bit key is the
    pair ``(seed, stream_id)``. Two states with the same key produce
    byte-identical sequences; distinct keys give independent streams under
    the counter-based generator contract.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.seed = _check_word("seed", self.seed)
        self.stream_id = _check_word("stream_id", self.stream_id)
        self.generator = np.random.Generator(np.random.Philox(key=self.key))

    @property
    def key(self) -> np.ndarray:
        return np.array([self.seed, self.stream_id], dtype=np.uint64)

    def spawn(self, stream_id: int) -> "RngState":
        """Returns an independent stream under the same seed."""
        return RngState(self.seed, stream_id)

    def derive_seed(self) -> int:
        """Draws a seed for a child family of streams (an ensemble or a path's noise)."""
        return int(self.generator.integers(0, 2**63))

    def substream(self, block: int, index: int) -> np.random.Generator:
        """Returns a generator positioned at a reserved counter block.

        Substreams let a sampler attach noise to a fixed coordinate of a
        stored object (for example "grid interval ``index`` of this path")
        so that repeated requests for that noise see identical draws.
        The main stream starts at counter zero and would need 2**128 blocks
        to reach a reserved block.
        """
        if block <= 0:
            raise ValueError("Substream blocks start at 1; block 0 is the main stream.")
        counter = np.array(
            [0, 0, _check_word("block", block), _check_word("index", index)],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=self.key, counter=counter))


def sample_gaussian(rng: RngState, size: int | tuple[int, ...] | None = None):
    """Standard normal variate(s) drawn with numpy's ziggurat sampler."""
    return rng.generator.standard_normal(size)


def sample_uniform(
    rng: RngState,
    low: float = 0.0,
    high: float = 1.0,
    size: int | tuple[int, ...] | None = None,
):
    if not high > low:
        raise ValueError(f"Uniform sampler needs low < high, got [{low}, {high}].")
    return rng.generator.uniform(low, high, size)


def sample_exponential(
    rng: RngState, rate: float = 1.0, size: int | tuple[int, ...] | None = None
):
    if not rate > 0:
        raise ValueError(f"Exponential rate must be positive, got {rate}.")
    return rng.generator.exponential(1.0 / rate, size)


def sample_gamma(
    rng: RngState,
    shape: float,
    rate: float,
    size: int | tuple[int, ...] | None = None,
):
    """Gamma(shape, rate) variate(s); the mean is ``shape / rate``."""
    if not shape > 0:
        raise ValueError(f"Gamma shape must be positive, got {shape}.")
    if not rate > 0:
        raise ValueError(f"Gamma rate must be positive, got {rate}.")
    return rng.generator.gamma(shape, 1.0 / rate, size)


def sample_uniform_sphere(rng: RngState, n: int, size: int | None = None) -> np.ndarray:
    """Uniform point(s) on the unit sphere of R^n.

    Returns an array of shape ``(n,)`` or ``(size, n)``. For ``n == 1`` the
    sphere is ``{-1, +1}``.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"Sphere dimension must be a positive integer, got {n!r}.")
    count = 1 if size is None else int(size)
    if n == 1:
        points = rng.generator.choice(np.array([-1.0, 1.0]), size=(count, 1))
    else:
        points = rng.generator.standard_normal((count, n))
        norms = np.linalg.norm(points, axis=1)
        # A zero Gaussian vector has probability zero; redraw rather than divide by it.
        while np.any(norms == 0.0):
            bad = norms == 0.0
            points[bad] = rng.generator.standard_normal((int(bad.sum()), n))
            norms = np.linalg.norm(points, axis=1)
        points = points / norms[:, None]
    return points[0] if size is None else points


def _open_angle(rng: RngState, size: int | tuple[int, ...] | None):
    """Uniform angle(s) on the open interval (0, pi)."""
    u = np.atleast_1d(rng.generator.uniform(0.0, math.pi, size)).astype(float)
    # uniform() can return its lower bound; sin(0) would divide by zero.
    zero = u == 0.0
    while zero.any():
        u[zero] = rng.generator.uniform(0.0, math.pi, int(zero.sum()))
        zero = u == 0.0
    return u if size is not None else u[0]


def sample_positive_stable(
    rng: RngState,
    index: float,
    scale_time: float,
    size: int | tuple[int, ...] | None = None,
):
    """One-sided stable variate with Laplace transform exp(-scale_time * lam**index).

    Uses Kanter's trigonometric representation of the Chambers-Mallows-Stuck
    method: with ``U`` uniform on (0, pi) and ``E`` standard exponential,

        S = sin(a U) / sin(U)**(1/a) * (sin((1 - a) U) / E)**((1 - a) / a)

    has Laplace transform exp(-lam**a); scaling by ``scale_time**(1/a)``
    gives the requested clock.
    """
    if not 0.0 < index < 1.0:
        raise ValueError(f"Positive stable index must lie in (0, 1), got {index}.")
    if scale_time < 0:
        raise ValueError(f"scale_time must be non-negative, got {scale_time}.")
    u = _open_angle(rng, size)
    e = rng.generator.standard_exponential(size)
    if scale_time == 0:
        return np.zeros_like(u) if size is not None else 0.0
    a = index
    s = (
        np.sin(a * u)
        / np.sin(u) ** (1.0 / a)
        * (np.sin((1.0 - a) * u) / e) ** ((1.0 - a) / a)
    )
    return scale_time ** (1.0 / a) * s


def map_streams(
    fn: Callable[[RngState], T],
    seed: int,
    count: int,
    threads: int = 1,
    first_stream: int = 0,
) -> list[T]:
    """Runs ``fn`` once per stream and returns the results in stream order.

    Stream ``first_stream + i`` is handed to call ``i``. Results come back in
    stream order regardless of ``threads``, so any reduction done by the
    caller is independent of the degree of parallelism.
    """
    if count < 0:
        raise ValueError("count must be non-negative.")
    if threads < 1:
        raise ValueError("threads must be at least 1.")
    states = [RngState(seed, first_stream + i) for i in range(count)]
    if threads == 1 or count <= 1:
        return [fn(state) for state in states]
    logger.debug("Fanning %d streams out to %d threads", count, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, states))
