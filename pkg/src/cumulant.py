"""Isotropic cumulant function, its roots, and spine exponents.

kappa(q) = psi(q) + J(q), where psi is the Laplace exponent of the cell's
log-size and J(q) integrates the q-th power of the relative child size
against the image Levy system. Two Levy systems are supported:

* ``ToyCP`` - the compound-Poisson toy driver, closed-form psi and a
  one-dimensional angular integral for J.
* ``IsotropicStable`` - the isotropic stable Levy system with density
  ``c(alpha) e^{dx} / |e^x Phi - theta|^{alpha + d}``; psi is supplied by the
  caller because the radial Lamperti exponent has no closed form here.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy import integrate, optimize

from .randkit import RngState, sample_uniform_sphere
from .reports import write_csv
from .stats import EstimateReport, mean_ci

logger = logging.getLogger(__name__)

PsiFn = Callable[[float], float]

ROOT_TOLERANCE = 1e-9
ROOT_GRID = 256
QUAD_TOLERANCE = 1e-10
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(32)


class DivergenceError(RuntimeError):
    """Raised when the jump integral is infinite at the requested exponent."""

    def __init__(self, q: float, region: str, detail: str = "") -> None:
        self.q = q
        self.region = region
        message = f"Jump integral diverges at q={q} ({region})"
        super().__init__(f"{message}: {detail}" if detail else message)


class NotARootError(ValueError):
    """Raised when an exponent expected to be a root of kappa is not one."""


def sphere_area(k: int) -> float:
    """Surface area of the unit sphere S^k in R^(k+1); ``sphere_area(0) == 2``."""
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


# ----------------------------------------------------------------------
# Levy systems
# ----------------------------------------------------------------------
@dataclass(frozen=True, slots=True)
class ToyCP:
    """Compound-Poisson toy: rate ``lam``, radial factor ``beta``, log-size drift ``-drift``.

    psi(q) = -drift q + lam (beta**q - 1). At a jump the direction is
    re-drawn uniformly on the sphere of R^n, so the relative child size is
    ``|theta - beta Phi|``.
    """

    lam: float
    beta: float
    drift: float
    n: int = 2

    variant = "toy"

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}.")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}.")
        if not isinstance(self.n, int) or self.n < 2:
            raise ValueError(f"ambient dimension n must be an integer >= 2, got {self.n!r}.")

    @classmethod
    def with_root_at_two(cls, lam: float, beta: float, n: int = 2) -> "ToyCP":
        """The toy with ``drift = lam * beta**2``, which makes kappa(2) = 0."""
        return cls(lam=lam, beta=beta, drift=lam * beta**2, n=n)

    def psi(self, q: float) -> float:
        return -self.drift * q + self.lam * (self.beta**q - 1.0)


@dataclass(frozen=True, slots=True)
class IsotropicStable:
    """Isotropic alpha-stable Levy system in R^d, optionally restricted to ``x`` in a window."""

    alpha: float
    d: int
    window: tuple[float, float] | None = None
    psi_fn: PsiFn | None = field(default=None, compare=False)

    variant = "stable"

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}.")
        if not isinstance(self.d, int) or self.d < 2:
            raise ValueError(f"dimension d must be an integer >= 2, got {self.d!r}.")
        if self.window is not None:
            lo, hi = self.window
            if not lo < hi:
                raise ValueError(f"window must satisfy lo < hi, got {self.window}.")

    @property
    def c_alpha(self) -> float:
        a, d = self.alpha, self.d
        return (
            2.0 ** (a - 1.0)
            * math.pi ** (-d)
            * math.gamma((d + a) / 2.0)
            * math.gamma(d / 2.0)
            / abs(math.gamma(-a / 2.0))
        )

    @property
    def x_bounds(self) -> tuple[float, float]:
        return self.window if self.window is not None else (-math.inf, math.inf)

    def psi(self, q: float) -> float:
        if self.psi_fn is None:
            raise ValueError("IsotropicStable has no psi; pass a callable or a table.")
        return float(self.psi_fn(q))


LevySystemSpec = Union[ToyCP, IsotropicStable]


def psi_from_table(qs: Sequence[float], values: Sequence[float]) -> PsiFn:
    """Linear interpolation of a tabulated exponent; refuses to extrapolate."""
    q_arr = np.asarray(qs, dtype=float)
    v_arr = np.asarray(values, dtype=float)
    if q_arr.ndim != 1 or q_arr.shape != v_arr.shape or q_arr.size < 2:
        raise ValueError("psi table needs matching 1-D arrays with at least two entries.")
    if np.any(np.diff(q_arr) <= 0):
        raise ValueError("psi table q values must be strictly increasing.")

    def psi(q: float) -> float:
        if not q_arr[0] <= q <= q_arr[-1]:
            raise ValueError(f"q={q} outside the tabulated range [{q_arr[0]}, {q_arr[-1]}].")
        return float(np.interp(q, q_arr, v_arr))

    return psi


_SPEC_KEYS = {"variant", "alpha", "d", "lambda", "beta", "drift", "n", "window"}


def load_spec(path: str | Path) -> LevySystemSpec:
    """Reads a flat ``key = value`` Levy-system description.

    Blank lines and ``#`` comments are ignored. ``window`` is written as
    ``lo, hi``.
    """
    entries: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}.")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SPEC_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}.")
        entries[key] = value
    return spec_from_mapping(entries)


def spec_from_mapping(entries: dict[str, str]) -> LevySystemSpec:
    variant = entries.get("variant", "").strip().lower()
    try:
        if variant == "toy":
            return ToyCP(
                lam=float(entries["lambda"]),
                beta=float(entries["beta"]),
                drift=float(entries["drift"]),
                n=int(entries.get("n", 2)),
            )
        if variant == "stable":
            window = None
            if entries.get("window"):
                lo, hi = (float(v) for v in entries["window"].split(","))
                window = (lo, hi)
            return IsotropicStable(
                alpha=float(entries["alpha"]), d=int(entries["d"]), window=window
            )
    except KeyError as exc:
        raise ValueError(f"Levy-system description is missing {exc.args[0]!r}.") from exc
    raise ValueError(f"Unknown variant {variant!r}; expected 'toy' or 'stable'.")


# ----------------------------------------------------------------------
# Jump integral
# ----------------------------------------------------------------------
def _unit(theta: Sequence[float] | np.ndarray | None, d: int) -> np.ndarray:
    if theta is None:
        vec = np.zeros(d)
        vec[0] = 1.0
        return vec
    vec = np.asarray(theta, dtype=float)
    if vec.shape != (d,):
        raise ValueError(f"theta must be a unit vector of R^{d}.")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("theta must have unit norm.")
    return vec / norm


def _orthogonal_direction(theta: np.ndarray) -> np.ndarray:
    axis = np.zeros_like(theta)
    axis[int(np.argmin(np.abs(theta)))] = 1.0
    v = axis - np.dot(axis, theta) * theta
    return v / np.linalg.norm(v)


def divergence_region(spec: LevySystemSpec, q: float) -> str | None:
    """Names the part of the domain where J(q) is infinite, or None if finite."""
    if isinstance(spec, ToyCP):
        return None
    lo, hi = spec.x_bounds
    if lo < 0.0 < hi and q <= spec.alpha:
        return "corner x=0, Phi=theta needs q > alpha"
    if math.isinf(hi) and q >= spec.alpha:
        return "upper tail x -> +inf needs q < alpha"
    return None


def _toy_jump_integral(spec: ToyCP, q: float) -> tuple[float, float]:
    power = spec.n - 2
    norm = math.sqrt(math.pi) * math.gamma((spec.n - 1) / 2.0) / math.gamma(spec.n / 2.0)
    b = spec.beta

    def integrand(gamma: float) -> float:
        return (1.0 - 2.0 * b * math.cos(gamma) + b * b) ** (q / 2.0) * math.sin(gamma) ** power

    value, err = integrate.quad(integrand, 0.0, math.pi, epsabs=1e-14, epsrel=1e-13, limit=200)
    return spec.lam * value / norm, spec.lam * err / norm


def _graded_panels(scale: float) -> np.ndarray:
    """Panel edges on [0, pi] shrinking geometrically toward 0 down to ``scale / 8``."""
    edges = [math.pi]
    floor = max(scale / 8.0, 1e-14)
    while edges[-1] > floor:
        edges.append(edges[-1] / 2.0)
    edges.append(0.0)
    return np.array(edges[::-1])


def _angular_integral(
    x: float, exponent: float, theta: np.ndarray, normal: np.ndarray, d: int
) -> float:
    """Integral over the sphere of ``|theta - e^x Phi|**exponent`` in polar angle about theta.

    Uses composite Gauss-Legendre on panels graded toward the pole, where
    the integrand is singular as x -> 0. For d = 2 both half-circles are
    evaluated separately.
    """
    edges = _graded_panels(abs(x))
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    gammas = (0.5 * (hi + lo))[:, None] + half[:, None] * _GAUSS_NODES[None, :]
    weights = half[:, None] * _GAUSS_WEIGHTS[None, :]
    gammas, weights = gammas.ravel(), weights.ravel()
    r = math.exp(x)
    total = 0.0
    sides = (normal, -normal) if d == 2 else (normal,)
    side_measure = 1.0 if d == 2 else sphere_area(d - 2)
    for side in sides:
        phi = np.cos(gammas)[:, None] * theta[None, :] + np.sin(gammas)[:, None] * side[None, :]
        gap = np.linalg.norm(theta[None, :] - r * phi, axis=1)
        values = gap**exponent * np.sin(gammas) ** (d - 2)
        total += side_measure * float(np.dot(weights, values))
    return total


def _stable_jump_integral(
    spec: IsotropicStable, q: float, theta: np.ndarray, tol: float
) -> tuple[float, float]:
    region = divergence_region(spec, q)
    if region is not None:
        raise DivergenceError(q, region, f"alpha={spec.alpha}, window={spec.window}")
    d = spec.d
    exponent = q - spec.alpha - d
    normal = _orthogonal_direction(theta)

    def outer(x: float) -> float:
        return math.exp(d * x) * _angular_integral(x, exponent, theta, normal, d)

    lo, hi = spec.x_bounds
    pieces = []
    if lo < 0.0:
        pieces.append((lo, min(hi, 0.0)))
    if hi > 0.0:
        pieces.append((max(lo, 0.0), hi))
    value = err = 0.0
    for a, b in pieces:
        part, part_err = integrate.quad(outer, a, b, epsabs=tol, epsrel=tol, limit=400)
        value += part
        err += part_err
    return spec.c_alpha * value, spec.c_alpha * err


def jump_integral_with_error(
    spec: LevySystemSpec,
    q: float,
    theta: Sequence[float] | np.ndarray | None = None,
    tol: float = QUAD_TOLERANCE,
) -> tuple[float, float]:
    """J(q; theta) and its quadrature error estimate."""
    if isinstance(spec, ToyCP):
        return _toy_jump_integral(spec, q)
    return _stable_jump_integral(spec, q, _unit(theta, spec.d), tol)


def jump_integral(
    spec: LevySystemSpec,
    q: float,
    theta: Sequence[float] | np.ndarray | None = None,
    tol: float = QUAD_TOLERANCE,
) -> float:
    """J(q; theta) by quadrature; raises DivergenceError where it is infinite."""
    return jump_integral_with_error(spec, q, theta, tol)[0]


def jump_integral_mc_oracle(
    rng: RngState,
    spec: LevySystemSpec,
    q: float,
    theta: Sequence[float] | np.ndarray | None,
    N: int,
) -> EstimateReport:
    """Monte-Carlo estimate of the jump integral, independent of the quadrature.

    For the toy, ``lam |theta - beta Phi|**q`` is averaged over uniform Phi.
    For the stable system the integral is rewritten in jump coordinates
    ``y = e^x Phi - theta``, where the Levy measure is ``c dy / |y|**(alpha+d)``;
    ``|y|`` is drawn with density proportional to ``r**(q - alpha - 1)`` on a
    ball that contains the window, the direction uniformly, and the window
    indicator is averaged.
    """
    if N < 1000:
        raise ValueError(f"jump_integral_mc_oracle needs N >= 1000, got {N}.")
    if isinstance(spec, ToyCP):
        th = _unit(theta, spec.n)
        phi = sample_uniform_sphere(rng, spec.n, N)
        values = spec.lam * np.linalg.norm(th[None, :] - spec.beta * phi, axis=1) ** q
        return mean_ci(values, seeds=(rng.seed,), diagnostics={"stream_id": rng.stream_id})

    if spec.window is None:
        raise ValueError("The stable oracle needs a bounded truncation window.")
    th = _unit(theta, spec.d)
    lo, hi = spec.window
    r_max = math.exp(hi) + 1.0
    if lo < 0.0 < hi:
        r_min = 0.0
    else:
        r_min = min(abs(math.exp(lo) - 1.0), abs(math.exp(hi) - 1.0))
    p = q - spec.alpha
    if r_min == 0.0 and p <= 0:
        raise DivergenceError(q, "corner x=0, Phi=theta needs q > alpha")

    u = rng.generator.uniform(0.0, 1.0, N)
    if p == 0.0:
        radii = r_min * (r_max / r_min) ** u
        radial_mass = math.log(r_max / r_min)
    else:
        radii = (r_min**p + u * (r_max**p - r_min**p)) ** (1.0 / p)
        radial_mass = (r_max**p - r_min**p) / p
    directions = sample_uniform_sphere(rng, spec.d, N)
    targets = th[None, :] + radii[:, None] * directions
    log_norm = np.log(np.linalg.norm(targets, axis=1))
    inside = ((log_norm >= lo) & (log_norm <= hi)).astype(float)
    scale = spec.c_alpha * sphere_area(spec.d - 1) * radial_mass
    report = mean_ci(
        scale * inside,
        seeds=(rng.seed,),
        diagnostics={"stream_id": rng.stream_id, "window": [lo, hi], "r_max": r_max},
    )
    return report


# ----------------------------------------------------------------------
# kappa and roots
# ----------------------------------------------------------------------
def _resolve_psi(spec: LevySystemSpec, psi: PsiFn | None) -> PsiFn:
    return psi if psi is not None else spec.psi


def kappa(spec: LevySystemSpec, psi: PsiFn | None, q: float) -> float:
    """psi(q) + J(q); ``math.inf`` where the jump integral diverges."""
    psi_fn = _resolve_psi(spec, psi)
    try:
        return float(psi_fn(q)) + jump_integral(spec, q)
    except DivergenceError as exc:
        logger.debug("kappa(%s) is infinite: %s", q, exc)
        return math.inf


@dataclass(frozen=True, slots=True)
class KappaResult:
    """kappa tabulated on a grid with its roots and a convexity diagnostic."""

    q: tuple[float, ...]
    values: tuple[float, ...]
    errors: tuple[float, ...]
    roots: tuple[float, ...]
    convex: bool
    min_second_difference: float

    def to_dict(self) -> dict:
        return {
            "q": list(self.q),
            "kappa": list(self.values),
            "error": list(self.errors),
            "roots": list(self.roots),
            "convex": self.convex,
            "min_second_difference": self.min_second_difference,
        }

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.q, self.values, self.errors))


def _second_differences(values: np.ndarray) -> np.ndarray:
    finite = values[np.isfinite(values)]
    if finite.size < 3:
        return np.zeros(1)
    return finite[2:] - 2.0 * finite[1:-1] + finite[:-2]


def find_roots(
    spec: LevySystemSpec,
    psi: PsiFn | None,
    bracket: Sequence[float],
    grid: int = ROOT_GRID,
) -> list[float]:
    """Roots of kappa on ``bracket``: sign-change scan then bisection.

    A convex kappa has at most two roots. Every returned root satisfies
    ``|kappa(root)| <= 1e-9``.
    """
    q_lo, q_hi = float(bracket[0]), float(bracket[1])
    if not q_lo < q_hi:
        raise ValueError(f"bracket must satisfy q_lo < q_hi, got {bracket}.")
    qs = np.linspace(q_lo, q_hi, grid)
    values = np.array([kappa(spec, psi, q) for q in qs])
    if not np.all(np.isfinite(values)):
        raise ValueError("kappa must be finite on the whole bracket.")
    if np.min(_second_differences(values)) < -1e-8:
        logger.warning("kappa is not convex on [%s, %s]", q_lo, q_hi)

    def fn(q: float) -> float:
        return kappa(spec, psi, q)

    roots: list[float] = []
    for i, (left, right) in enumerate(zip(values[:-1], values[1:])):
        if left == 0.0:
            candidate = float(qs[i])
        elif left * right < 0.0:
            candidate = float(optimize.bisect(fn, qs[i], qs[i + 1], xtol=1e-13, maxiter=200))
        else:
            continue
        residual = abs(fn(candidate))
        if residual > ROOT_TOLERANCE:
            logger.warning("Discarding root %.12f with residual %.3e", candidate, residual)
            continue
        roots.append(candidate)
    if values[-1] == 0.0:
        roots.append(float(qs[-1]))
    if len(roots) > 2:
        logger.warning("Found %d roots; a convex kappa has at most two", len(roots))
    return roots


def kappa_table(
    spec: LevySystemSpec,
    psi: PsiFn | None,
    qs: Sequence[float],
    bracket: Sequence[float] | None = None,
) -> KappaResult:
    """Tabulates kappa on ``qs`` (inf where divergent) and locates its roots."""
    psi_fn = _resolve_psi(spec, psi)
    values: list[float] = []
    errors: list[float] = []
    for q in qs:
        try:
            j, err = jump_integral_with_error(spec, q)
            values.append(float(psi_fn(q)) + j)
            errors.append(err)
        except DivergenceError:
            values.append(math.inf)
            errors.append(math.nan)
    second = _second_differences(np.array(values))
    roots: list[float] = []
    if bracket is not None:
        roots = find_roots(spec, psi, bracket)
    min_second = float(np.min(second))
    return KappaResult(
        q=tuple(float(q) for q in qs),
        values=tuple(values),
        errors=tuple(errors),
        roots=tuple(roots),
        convex=min_second >= -1e-8,
        min_second_difference=min_second,
    )


def check_root(spec: LevySystemSpec, psi: PsiFn | None, omega: float) -> None:
    residual = kappa(spec, psi, omega)
    if not abs(residual) <= ROOT_TOLERANCE:
        raise NotARootError(f"omega={omega} is not a root of kappa (kappa={residual}).")


def spine_exponent(spec: LevySystemSpec, psi: PsiFn | None, omega: float, q: float) -> float:
    """Laplace exponent of the spine's log-size: kappa(omega + q)."""
    check_root(spec, psi, omega)
    return kappa(spec, psi, omega + q)


def sum_kappa_target(spec: ToyCP, psi: PsiFn | None, q: float) -> float:
    """``1 - kappa(q) / psi(q)``, the mean of the summed q-th powers of jump sizes."""
    psi_fn = _resolve_psi(spec, psi)
    return 1.0 - kappa(spec, psi, q) / psi_fn(q)


def sum_kappa_identity_check(
    rng: RngState,
    spec: ToyCP,
    psi: PsiFn | None,
    q: float,
    N: int,
    size_floor: float = 1e-3,
) -> EstimateReport:
    """Monte-Carlo mean of ``sum |Delta X(t)|**q`` over a whole cell lifetime.

    Each cell starts at a unit vector and is followed until its size drops
    below ``size_floor``. The expected remainder after that point,
    ``|X_end|**q (1 - kappa/psi)``, is reported as ``tail_bound``.
    """
    if not isinstance(spec, ToyCP):
        raise ValueError("sum_kappa_identity_check runs on the toy Levy system only.")
    if spec.lam <= 0:
        raise ValueError("The toy needs a positive jump rate for the identity to be non-trivial.")
    psi_fn = _resolve_psi(spec, psi)
    psi_q = psi_fn(q)
    if not psi_q < 0:
        raise ValueError(f"psi(q) must be negative, got psi({q})={psi_q}.")
    kappa_q = kappa(spec, psi, q)
    if not math.isfinite(kappa_q):
        raise ValueError(f"kappa({q}) must be finite.")
    if N < 100:
        raise ValueError("sum_kappa_identity_check needs N >= 100.")

    from .gfengine import ToyDrivingSpec, jump_power_sums

    driver = ToyDrivingSpec.from_levy_system(spec)
    sums, end_sizes = jump_power_sums(rng, driver, N, q, size_floor)
    target = 1.0 - kappa_q / psi_q
    tail = float(np.mean(end_sizes**q) * target)
    report = mean_ci(
        sums,
        seeds=(rng.seed,),
        diagnostics={"target": target, "tail_bound": tail, "size_floor": size_floor, "q": q},
    )
    logger.info(
        "Sum of jump powers estimated",
        extra={"ctx_q": q, "ctx_estimate": report.estimate, "ctx_target": target},
    )
    return report


def toy_closed_form_j2(lam: float, beta: float) -> float:
    """J(2) for the toy: ``lam (1 + beta**2)`` since the cross term averages to 0."""
    return lam * (1.0 + beta**2)


def export_kappa_csv(path: str | Path, result: KappaResult) -> Path:
    """CSV of ``q, kappa(q), error``; divergent rows carry ``inf`` and ``nan``."""
    return write_csv(path, ["q", "kappa", "error"], result.rows())
