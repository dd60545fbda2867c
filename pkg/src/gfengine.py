"""Cell systems on the Ulam tree, genealogical martingales and spine samplers.

A cell is driven by a process with finite jump activity. Every jump of a
cell gives birth to a child whose initial size is minus the jump, and every
child is then driven in the same way. Cells are expanded generation by
generation; within a generation all cells of a tree are simulated together
with vectorised event loops.

Labels are Ulam words stored as tuples of 1-based integers, the root being
``()``. The children of ``u`` are ``u + (k,)`` ranked by descending norm of
their initial size (ties broken by birth time).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Iterator, Mapping, NamedTuple, Protocol, Sequence

import numpy as np

from .bridges import PathGrid
from .cumulant import ToyCP, check_root, jump_integral
from .randkit import RngState, map_streams, sample_exponential, sample_uniform_sphere
from .reports import write_ndjson
from .stats import EstimateReport, mean_ci

logger = logging.getLogger(__name__)

NODE_BUDGET = 10_000_000
DEFAULT_SIZE_FLOOR = 1e-3
TRUNCATION_LIMIT = 0.05

Label = tuple[int, ...]


class NodeBudgetError(RuntimeError):
    """Raised when a cell system would exceed its node budget."""


class InsufficientDepthError(RuntimeError):
    """Raised when a tree was not expanded deep enough for the requested generation."""


class TruncationError(RuntimeError):
    """Raised when truncated mass is too large for a weighted selection to be trusted."""


# ----------------------------------------------------------------------
# Driving processes
# ----------------------------------------------------------------------
class DrivingProcess(Protocol):
    """Event-driven jump source plus a deterministic flow between jumps.

    All methods work on batches: ``x`` has shape ``(m, n)``.
    """

    n: int

    @property
    def jump_rate(self) -> float: ...

    def flow(self, x: np.ndarray, elapsed: np.ndarray) -> np.ndarray: ...

    def time_to_size(self, x: np.ndarray, size: float) -> np.ndarray: ...

    def post_jump(self, rng: RngState, x_minus: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, slots=True)
class ToyDrivingSpec:
    """Toy driver: radial decay at rate ``drift``, jumps at rate ``lam``.

    At a jump the position becomes ``beta |X(t-)| Phi`` with ``Phi`` uniform
    on the sphere, so the child born at that jump has size
    ``|X(t-)| |theta - beta Phi|``.
    """

    n: int
    lam: float
    beta: float
    drift: float

    def __post_init__(self) -> None:
        # Reuses the Levy-system validation.
        self.levy_system()

    @classmethod
    def from_levy_system(cls, spec: ToyCP) -> "ToyDrivingSpec":
        return cls(n=spec.n, lam=spec.lam, beta=spec.beta, drift=spec.drift)

    def levy_system(self) -> ToyCP:
        return ToyCP(lam=self.lam, beta=self.beta, drift=self.drift, n=self.n)

    @property
    def jump_rate(self) -> float:
        return self.lam

    def psi(self, q: float) -> float:
        return self.levy_system().psi(q)

    def flow(self, x: np.ndarray, elapsed: np.ndarray) -> np.ndarray:
        if self.drift == 0:
            return np.array(x, dtype=float, copy=True)
        return x * np.exp(-self.drift * np.asarray(elapsed, dtype=float))[:, None]

    def time_to_size(self, x: np.ndarray, size: float) -> np.ndarray:
        norms = np.linalg.norm(x, axis=1)
        if size <= 0 or self.drift == 0:
            return np.where(norms > size, np.inf, 0.0)
        with np.errstate(divide="ignore"):
            return np.maximum(np.log(norms / size) / self.drift, 0.0)

    def post_jump(self, rng: RngState, x_minus: np.ndarray) -> np.ndarray:
        phi = sample_uniform_sphere(rng, self.n, x_minus.shape[0])
        return self.beta * np.linalg.norm(x_minus, axis=1)[:, None] * phi


class _Batch(NamedTuple):
    event_cell: np.ndarray
    event_time: np.ndarray
    event_pre: np.ndarray
    event_jump: np.ndarray
    end_time: np.ndarray
    end_position: np.ndarray
    end_reason: np.ndarray


def simulate_batch(
    rng: RngState,
    driver: DrivingProcess,
    starts: np.ndarray,
    births: np.ndarray,
    horizon: float,
    size_floor: float,
) -> _Batch:
    """Event-driven simulation of many independent cells at once.

    A cell is followed until ``horizon`` or until its size drops below
    ``size_floor``. ``end_reason`` is ``"horizon"`` or ``"floor"``.
    Events are returned grouped in rounds; per cell they are in time order.
    """
    x = np.array(starts, dtype=float, copy=True)
    t = np.array(births, dtype=float, copy=True)
    m = x.shape[0]
    end_time = np.full(m, np.nan)
    end_position = np.zeros_like(x)
    end_reason = np.full(m, "horizon", dtype=object)
    active = np.ones(m, dtype=bool)

    already = (np.linalg.norm(x, axis=1) < size_floor) | (t >= horizon)
    end_time[already] = t[already]
    end_position[already] = x[already]
    end_reason[already & (np.linalg.norm(x, axis=1) < size_floor)] = "floor"
    active[already] = False

    cells: list[np.ndarray] = []
    times: list[np.ndarray] = []
    pres: list[np.ndarray] = []
    jumps: list[np.ndarray] = []
    rate = driver.jump_rate
    while active.any():
        idx = np.flatnonzero(active)
        xs, ts = x[idx], t[idx]
        to_floor = driver.time_to_size(xs, size_floor)
        to_horizon = horizon - ts
        stop = np.minimum(to_floor, to_horizon)
        if rate > 0:
            tau = sample_exponential(rng, rate, idx.size)
        else:
            tau = np.full(idx.size, np.inf)
        jumping = tau < stop

        quiet = ~jumping
        finished = idx[quiet]
        if finished.size:
            end_time[finished] = ts[quiet] + stop[quiet]
            end_position[finished] = driver.flow(xs[quiet], stop[quiet])
            end_reason[finished] = np.where(to_floor[quiet] <= to_horizon[quiet], "floor", "horizon")
            active[finished] = False

        movers = idx[jumping]
        if movers.size == 0:
            continue
        x_minus = driver.flow(xs[jumping], tau[jumping])
        x_new = driver.post_jump(rng, x_minus)
        t[movers] = ts[jumping] + tau[jumping]
        x[movers] = x_new
        cells.append(movers)
        times.append(t[movers].copy())
        pres.append(x_minus)
        jumps.append(x_new - x_minus)

        below = np.linalg.norm(x_new, axis=1) < size_floor
        if below.any():
            stopped = movers[below]
            end_time[stopped] = t[stopped]
            end_position[stopped] = x_new[below]
            end_reason[stopped] = "floor"
            active[stopped] = False

    n = x.shape[1]
    return _Batch(
        event_cell=np.concatenate(cells) if cells else np.zeros(0, dtype=int),
        event_time=np.concatenate(times) if times else np.zeros(0),
        event_pre=np.vstack(pres) if pres else np.zeros((0, n)),
        event_jump=np.vstack(jumps) if jumps else np.zeros((0, n)),
        end_time=end_time,
        end_position=end_position,
        end_reason=end_reason,
    )


def _as_start(x0: Sequence[float] | np.ndarray, n: int) -> np.ndarray:
    vec = np.asarray(x0, dtype=float)
    if vec.shape != (n,):
        raise ValueError(f"x0 must be a point of R^{n}, got shape {vec.shape}.")
    if not np.linalg.norm(vec) > 0:
        raise ValueError("x0 must be non-zero.")
    return vec


@dataclass(frozen=True, slots=True, eq=False)
class CellPath:
    """One simulated cell: its start, jump record and where tracking stopped."""

    x0: np.ndarray
    jump_times: np.ndarray
    pre_jump: np.ndarray
    jumps: np.ndarray
    end_time: float
    end_position: np.ndarray
    driver: DrivingProcess = field(repr=False)

    def position(self, t: float) -> np.ndarray:
        if not 0 <= t <= self.end_time:
            raise ValueError(f"t={t} outside the simulated range [0, {self.end_time}].")
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        if k == 0:
            anchor, since = self.x0, t
        else:
            anchor = self.pre_jump[k - 1] + self.jumps[k - 1]
            since = t - self.jump_times[k - 1]
        return self.driver.flow(anchor[None, :], np.array([since]))[0]


def simulate_cell(
    rng: RngState,
    spec: DrivingProcess,
    x0: Sequence[float] | np.ndarray,
    horizon: float,
    size_floor: float = 0.0,
) -> tuple[CellPath, list[tuple[float, np.ndarray]]]:
    """Exact event-driven simulation of a single cell on ``[0, horizon]``.

    Returns the path summary and the list of ``(jump time, X(t) - X(t-))``.
    """
    start = _as_start(x0, spec.n)
    if not horizon > 0:
        raise ValueError("horizon must be positive.")
    batch = simulate_batch(rng, spec, start[None, :], np.zeros(1), horizon, size_floor)
    path = CellPath(
        x0=start,
        jump_times=batch.event_time,
        pre_jump=batch.event_pre,
        jumps=batch.event_jump,
        end_time=float(batch.end_time[0]),
        end_position=batch.end_position[0],
        driver=spec,
    )
    return path, [(float(s), j) for s, j in zip(batch.event_time, batch.event_jump)]


# ----------------------------------------------------------------------
# Cell systems
# ----------------------------------------------------------------------
@dataclass(frozen=True, slots=True, eq=False)
class CellNode:
    """One cell: jumps are stored in time order, ``child_rank`` maps child k to its jump."""

    label: Label
    birth_time: float
    initial_size: np.ndarray
    generation: int
    truncated: bool
    reason: str
    jump_times: np.ndarray
    jumps: np.ndarray
    post_jump: np.ndarray
    child_rank: np.ndarray
    end_time: float
    end_size: np.ndarray

    @property
    def n_children(self) -> int:
        return int(self.jump_times.size)

    def children(self) -> list[Label]:
        return [self.label + (k,) for k in range(1, self.n_children + 1)]

    def child_size(self, k: int) -> np.ndarray:
        """Initial size of child ``k`` (1-based): minus the parent's jump."""
        return -self.jumps[self.child_rank[k - 1]]

    def position(self, t: float, driver: DrivingProcess) -> np.ndarray:
        """Size at absolute time ``t`` within the tracked part of the cell's life."""
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        if k == 0:
            anchor, since = self.initial_size, t - self.birth_time
        else:
            anchor, since = self.post_jump[k - 1], t - self.jump_times[k - 1]
        return driver.flow(anchor[None, :], np.array([since]))[0]


@dataclass(frozen=True, slots=True, eq=False)
class CellTree:
    """Read-only cell system; safe to share across analysis passes."""

    nodes: Mapping[Label, CellNode]
    x0: np.ndarray
    max_gen: int
    size_floor: float
    horizon: float
    driver: DrivingProcess = field(repr=False)
    stats: Mapping[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[CellNode]:
        return iter(self.nodes.values())

    @property
    def root(self) -> CellNode:
        return self.nodes[()]

    def generation(self, k: int) -> list[CellNode]:
        return [node for node in self.nodes.values() if node.generation == k]

    def children_of(self, label: Label) -> list[CellNode]:
        return [self.nodes[child] for child in self.nodes[label].children()]

    def ancestry(self, label: Label) -> list[CellNode]:
        return [self.nodes[label[:k]] for k in range(len(label) + 1)]


def _group_events(batch: _Batch, count: int) -> list[np.ndarray]:
    order = np.argsort(batch.event_cell, kind="stable")
    boundaries = np.searchsorted(batch.event_cell[order], np.arange(count + 1))
    return [order[boundaries[i] : boundaries[i + 1]] for i in range(count)]


def build_cell_system(
    rng: RngState,
    spec: DrivingProcess,
    x0: Sequence[float] | np.ndarray,
    max_gen: int,
    size_floor: float = DEFAULT_SIZE_FLOOR,
    horizon: float = math.inf,
    node_budget: int = NODE_BUDGET,
) -> CellTree:
    """Breadth-first construction of the cell system started from ``x0``.

    ``size_floor`` is relative to ``|x0|``. Cells smaller than the floor and
    cells of generation ``max_gen + 1`` are recorded as truncated leaves.
    Expanded cells are followed until ``horizon`` or until their own size
    drops below the floor.
    """
    start = _as_start(x0, spec.n)
    if max_gen < 0:
        raise ValueError("max_gen must be non-negative.")
    if not size_floor > 0:
        raise ValueError("size_floor must be positive.")
    floor = size_floor * float(np.linalg.norm(start))

    nodes: dict[Label, CellNode] = {}
    labels: list[Label] = [()]
    sizes = start[None, :]
    births = np.zeros(1)
    empty_times = np.zeros(0)
    empty_jumps = np.zeros((0, spec.n))
    stats = {"expanded": 0, "size_truncated": 0, "depth_truncated": 0}

    for gen in range(max_gen + 2):
        if not labels:
            break
        if len(nodes) + len(labels) > node_budget:
            raise NodeBudgetError(
                f"Cell system needs more than {node_budget} nodes at generation {gen}."
            )
        norms = np.linalg.norm(sizes, axis=1)
        expand = (norms >= floor) & (gen <= max_gen)
        for i in np.flatnonzero(~expand):
            reason = "depth" if gen > max_gen else "size_floor"
            stats["depth_truncated" if reason == "depth" else "size_truncated"] += 1
            nodes[labels[i]] = CellNode(
                label=labels[i],
                birth_time=float(births[i]),
                initial_size=sizes[i],
                generation=gen,
                truncated=True,
                reason=reason,
                jump_times=empty_times,
                jumps=empty_jumps,
                post_jump=empty_jumps,
                child_rank=np.zeros(0, dtype=int),
                end_time=float(births[i]),
                end_size=sizes[i],
            )
        chosen = np.flatnonzero(expand)
        if chosen.size == 0:
            break
        batch = simulate_batch(rng, spec, sizes[chosen], births[chosen], horizon, floor)
        groups = _group_events(batch, chosen.size)

        next_labels: list[Label] = []
        next_sizes: list[np.ndarray] = []
        next_births: list[np.ndarray] = []
        for j, i in enumerate(chosen):
            events = groups[j]
            times = batch.event_time[events]
            jump_vectors = batch.event_jump[events]
            children = -jump_vectors
            order = np.lexsort((times, -np.linalg.norm(children, axis=1)))
            label = labels[i]
            nodes[label] = CellNode(
                label=label,
                birth_time=float(births[i]),
                initial_size=sizes[i],
                generation=gen,
                truncated=False,
                reason=str(batch.end_reason[j]),
                jump_times=times,
                jumps=jump_vectors,
                post_jump=batch.event_pre[events] + jump_vectors,
                child_rank=order,
                end_time=float(batch.end_time[j]),
                end_size=batch.end_position[j],
            )
            stats["expanded"] += 1
            next_labels.extend(label + (k,) for k in range(1, order.size + 1))
            next_sizes.append(children[order])
            next_births.append(times[order])
        labels = next_labels
        sizes = np.vstack(next_sizes) if next_sizes else np.zeros((0, spec.n))
        births = np.concatenate(next_births) if next_births else np.zeros(0)

    stats["nodes"] = len(nodes)
    return CellTree(
        nodes=MappingProxyType(nodes),
        x0=start,
        max_gen=max_gen,
        size_floor=floor,
        horizon=horizon,
        driver=spec,
        stats=MappingProxyType(stats),
    )


def genealogical_martingale(tree: CellTree, n: int, omega: float) -> tuple[float, float]:
    """``sum_{|u| = n+1} |x_u|**omega`` and the truncation remainder bound.

    The remainder adds ``|x|**omega`` for every size-truncated leaf and the
    final size of every expanded cell up to generation ``n``; it is the
    expected generation-``n+1`` mass those cells would still have produced.
    """
    if n < 0:
        raise ValueError("n must be non-negative.")
    if n + 1 > tree.max_gen + 1:
        raise InsufficientDepthError(
            f"Generation {n + 1} needs max_gen >= {n}; tree has max_gen={tree.max_gen}."
        )
    value = 0.0
    remainder = 0.0
    for node in tree:
        if node.generation == n + 1:
            value += float(np.linalg.norm(node.initial_size)) ** omega
        elif node.generation <= n:
            if node.reason == "size_floor":
                remainder += float(np.linalg.norm(node.initial_size)) ** omega
            elif not node.truncated and math.isfinite(node.end_time):
                remainder += float(np.linalg.norm(node.end_size)) ** omega
    return value, remainder


def genealogical_ensemble(
    seed: int,
    spec: DrivingProcess,
    x0: Sequence[float] | np.ndarray,
    omega: float,
    N: int,
    max_gen: int,
    size_floor: float = DEFAULT_SIZE_FLOOR,
    threads: int = 1,
) -> list[EstimateReport]:
    """Ensemble means of the generation-``n`` martingale for ``n = 0..max_gen``."""
    start = _as_start(x0, spec.n)

    def one_tree(rng: RngState) -> np.ndarray:
        tree = build_cell_system(rng, spec, start, max_gen, size_floor)
        return np.array(
            [genealogical_martingale(tree, n, omega) for n in range(max_gen + 1)]
        )

    per_tree = np.stack(map_streams(one_tree, seed, N, threads))
    reports = []
    for n in range(max_gen + 1):
        values, remainders = per_tree[:, n, 0], per_tree[:, n, 1]
        report = mean_ci(
            values,
            seeds=(seed,),
            diagnostics={
                "generation": n + 1,
                "truncated_mass": float(remainders.mean()),
                "truncated_fraction": float(remainders.mean() / max(values.mean(), 1e-300)),
            },
        )
        logger.info(
            "Genealogical martingale estimated",
            extra={"ctx_n": n, "ctx_estimate": report.estimate, "ctx_std_error": report.std_error},
        )
        reports.append(report)
    return reports


def jump_power_sums(
    rng: RngState,
    spec: DrivingProcess,
    N: int,
    q: float,
    size_floor: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell ``sum |Delta X|**q`` over the whole tracked life of ``N`` unit cells.

    Returns the sums and the size at which each cell stopped being tracked.
    """
    starts = np.zeros((N, spec.n))
    starts[:, 0] = 1.0
    batch = simulate_batch(rng, spec, starts, np.zeros(N), math.inf, size_floor)
    powers = np.linalg.norm(batch.event_jump, axis=1) ** q
    sums = np.bincount(batch.event_cell, weights=powers, minlength=N)
    return sums, np.linalg.norm(batch.end_position, axis=1)


# ----------------------------------------------------------------------
# Snapshots and the temporal many-to-one identity
# ----------------------------------------------------------------------
class Snapshot(NamedTuple):
    cells: list[tuple[np.ndarray, int]]
    unresolved: list[tuple[np.ndarray, int]]


def snapshot(tree: CellTree, t: float) -> Snapshot:
    """Cells alive at time ``t`` as ``(size, generation)``, ranked by descending norm.

    Cells born before ``t`` whose size at ``t`` was not simulated (truncated
    leaves, or cells no longer tracked below the floor) are listed in
    ``unresolved`` with their last known size.
    """
    if t < 0 or t > tree.horizon:
        raise ValueError(f"t={t} outside [0, {tree.horizon}] used to build the tree.")
    alive: list[tuple[np.ndarray, int]] = []
    unresolved: list[tuple[np.ndarray, int]] = []
    for node in tree:
        if node.birth_time > t:
            continue
        if node.truncated:
            unresolved.append((node.initial_size, node.generation))
        elif t <= node.end_time:
            alive.append((node.position(t, tree.driver), node.generation))
        else:
            unresolved.append((node.end_size, node.generation))
    alive.sort(key=lambda item: -float(np.linalg.norm(item[0])))
    return Snapshot(alive, unresolved)


def temporal_many_to_one(
    seed: int,
    spec: ToyDrivingSpec,
    x0: Sequence[float] | np.ndarray,
    omega: float,
    t: float,
    f: Callable[[np.ndarray], float],
    N: int,
    size_floor: float = DEFAULT_SIZE_FLOOR,
    max_gen: int = 64,
    threads: int = 1,
) -> tuple[EstimateReport, EstimateReport]:
    """Both sides of ``E[sum_i |X_i(t)|**w f(X_i(t))] = |x0|**w E[f(spine(t))]``.

    The left side averages over ``N`` cell systems, the right side over
    ``N`` independent spines; they use disjoint stream ranges.
    """
    start = _as_start(x0, spec.n)

    def lhs(rng: RngState) -> tuple[float, float]:
        tree = build_cell_system(rng, spec, start, max_gen, size_floor, horizon=t)
        snap = snapshot(tree, t)
        value = sum(float(np.linalg.norm(x)) ** omega * f(x) for x, _ in snap.cells)
        missing = sum(float(np.linalg.norm(x)) ** omega for x, _ in snap.unresolved)
        return value, missing

    def rhs(rng: RngState) -> float:
        spine = sample_spine(rng, spec, start, omega, t)
        return f(spine.size_at(t))

    left = np.array(map_streams(lhs, seed, N, threads))
    right = np.array(map_streams(rhs, seed, N, threads, first_stream=N))
    scale = float(np.linalg.norm(start)) ** omega
    lhs_report = mean_ci(
        left[:, 0],
        seeds=(seed,),
        diagnostics={"unresolved_mass": float(left[:, 1].mean()), "t": t},
    )
    rhs_report = mean_ci(right, seeds=(seed,), diagnostics={"t": t}).scaled(scale)
    return lhs_report, rhs_report


# ----------------------------------------------------------------------
# Spine
# ----------------------------------------------------------------------
@dataclass(frozen=True, slots=True, eq=False)
class SpinePath:
    """The tagged cell: log-size path, event record and (optionally) direction."""

    log_x0: float
    drift: float
    horizon: float
    times: np.ndarray
    increments: np.ndarray
    generation_change: np.ndarray
    directions: np.ndarray | None
    start_direction: np.ndarray

    @property
    def generation_jump_times(self) -> np.ndarray:
        return self.times[self.generation_change]

    def inter_arrivals(self) -> np.ndarray:
        """Waiting times between successive generation changes, starting from 0."""
        return np.diff(self.generation_jump_times, prepend=0.0)

    def log_radius_at(self, t: float | np.ndarray) -> float | np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        if np.any((t_arr < 0) | (t_arr > self.horizon)):
            raise ValueError("t outside the simulated horizon.")
        cumulative = np.concatenate([[0.0], np.cumsum(self.increments)])
        k = np.searchsorted(self.times, t_arr, side="right")
        out = self.log_x0 - self.drift * t_arr + cumulative[k]
        return float(out) if out.ndim == 0 else out

    def direction_at(self, t: float) -> np.ndarray:
        if self.directions is None:
            raise ValueError("This spine was sampled without direction tracking.")
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.start_direction if k == 0 else self.directions[k - 1]

    def size_at(self, t: float) -> np.ndarray:
        return math.exp(self.log_radius_at(t)) * self.direction_at(t)

    def as_grid(self, steps: int) -> PathGrid:
        times = PathGrid.uniform_times(self.horizon, steps)
        return PathGrid(times, self.log_radius_at(times))


def _tilted_jump_directions(
    rng: RngState, spec: ToyDrivingSpec, omega: float, count: int
) -> np.ndarray:
    """Directions Phi relative to e_1, drawn with density proportional to |e_1 - beta Phi|**omega."""
    out = np.zeros((count, spec.n))
    filled = 0
    e1 = np.zeros(spec.n)
    e1[0] = 1.0
    ceiling = (1.0 + spec.beta) ** omega
    while filled < count:
        need = count - filled
        batch = max(2 * need, 64)
        phi = sample_uniform_sphere(rng, spec.n, batch)
        weight = np.linalg.norm(e1[None, :] - spec.beta * phi, axis=1) ** omega / ceiling
        accepted = phi[rng.generator.uniform(0.0, 1.0, batch) < weight][:need]
        out[filled : filled + accepted.shape[0]] = accepted
        filled += accepted.shape[0]
    return out


def _householder(target: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Applies the reflection that maps e_1 to ``target``."""
    v = -target.copy()
    v[0] += 1.0
    vv = float(np.dot(v, v))
    if vv < 1e-24:
        return vectors
    return vectors - 2.0 * np.outer(vectors @ v, v) / vv


def sample_spine(
    rng: RngState,
    spec: ToyDrivingSpec,
    x0: Sequence[float] | np.ndarray,
    omega: float,
    horizon: float,
    track_direction: bool = True,
) -> SpinePath:
    """Simulates the spine directly from its superimposition description.

    Within a generation the tagged cell drifts at ``-drift`` and jumps by
    ``log beta`` at the tilted rate ``lam * beta**omega``. Independently, at
    rate ``J(omega) = -psi(omega)`` the spine moves to the child born at a
    jump whose direction is drawn from the omega-tilted angle law; the
    log-size then moves by ``log|theta - beta Phi|``.
    """
    levy = spec.levy_system()
    check_root(levy, None, omega)
    psi_omega = levy.psi(omega)
    if not psi_omega < 0:
        raise ValueError(f"psi(omega) must be negative, got {psi_omega}.")
    start = _as_start(x0, spec.n)
    if not horizon > 0:
        raise ValueError("horizon must be positive.")

    within_rate = spec.lam * spec.beta**omega
    generation_rate = jump_integral(levy, omega)
    total_rate = within_rate + generation_rate
    count = int(rng.generator.poisson(total_rate * horizon))
    times = np.sort(rng.generator.uniform(0.0, horizon, count))
    generation_change = rng.generator.uniform(0.0, 1.0, count) < generation_rate / total_rate

    increments = np.full(count, math.log(spec.beta))
    k = int(generation_change.sum())
    tilted = _tilted_jump_directions(rng, spec, omega, k)
    e1 = np.zeros(spec.n)
    e1[0] = 1.0
    child_relative = e1[None, :] - spec.beta * tilted
    child_norm = np.linalg.norm(child_relative, axis=1)
    increments[generation_change] = np.log(child_norm)

    start_direction = start / np.linalg.norm(start)
    directions = None
    if track_direction:
        fresh = sample_uniform_sphere(rng, spec.n, count) if count else np.zeros((0, spec.n))
        child_dirs = child_relative / child_norm[:, None]
        directions = np.zeros((count, spec.n))
        current = start_direction
        g = 0
        for i in range(count):
            if generation_change[i]:
                current = _householder(current, child_dirs[g : g + 1])[0]
                g += 1
            else:
                current = fresh[i]
            directions[i] = current

    return SpinePath(
        log_x0=math.log(float(np.linalg.norm(start))),
        drift=spec.drift,
        horizon=float(horizon),
        times=times,
        increments=increments,
        generation_change=generation_change,
        directions=directions,
        start_direction=start_direction,
    )


def empirical_spine_exponent(path: SpinePath, window: float, q: float) -> float:
    """``(1/t) log mean exp(q (xi(s + t) - xi(s)))`` over disjoint windows of length t."""
    count = int(path.horizon // window)
    if count < 2:
        raise ValueError("horizon must contain at least two windows.")
    edges = window * np.arange(count + 1)
    steps = np.diff(path.log_radius_at(edges))
    peak = float(np.max(q * steps))
    return (peak + math.log(float(np.mean(np.exp(q * steps - peak))))) / window


@dataclass(frozen=True, slots=True, eq=False)
class SelectedSpine:
    """A spine drawn by weighted selection on a finite pool of trees."""

    tree_index: int
    label: Label
    sizes: tuple[np.ndarray, ...]

    @property
    def log_sizes(self) -> np.ndarray:
        return np.log([float(np.linalg.norm(s)) for s in self.sizes])


def select_spines(
    rng: RngState,
    spec: ToyDrivingSpec,
    x0: Sequence[float] | np.ndarray,
    omega: float,
    n_max: int,
    samples: int,
    pool: int = 256,
    size_floor: float = DEFAULT_SIZE_FLOOR,
    verify_root: bool = True,
) -> list[SelectedSpine]:
    """Spines of length ``n_max + 1`` by sampling-importance-resampling.

    A pool of trees is built; a tree is picked with probability
    proportional to its generation-``n_max + 1`` mass, then a cell of that
    generation proportionally to ``|x_u|**omega``. The spine is the
    ancestry of that cell.
    """
    if verify_root:
        levy = spec.levy_system()
        check_root(levy, None, omega)
        if not levy.psi(omega) < 0:
            raise ValueError("psi(omega) must be negative.")
    start = _as_start(x0, spec.n)
    if n_max < 0:
        raise ValueError("n_max must be non-negative.")
    if pool < 1 or samples < 1:
        raise ValueError("pool and samples must be positive.")

    trees: list[CellTree] = []
    tree_weights = np.zeros(pool)
    truncated = 0.0
    leaf_lists: list[list[CellNode]] = []
    leaf_weights: list[np.ndarray] = []
    for i in range(pool):
        tree = build_cell_system(rng, spec, start, n_max, size_floor)
        leaves = tree.generation(n_max + 1)
        weights = np.array([float(np.linalg.norm(node.initial_size)) ** omega for node in leaves])
        _, remainder = genealogical_martingale(tree, n_max, omega)
        trees.append(tree)
        leaf_lists.append(leaves)
        leaf_weights.append(weights)
        tree_weights[i] = weights.sum()
        truncated += remainder
    total = float(tree_weights.sum())
    if total <= 0:
        raise TruncationError("No tree in the pool reached the selection generation.")
    if truncated > TRUNCATION_LIMIT * total:
        raise TruncationError(
            f"Truncated mass {truncated:.3g} exceeds {TRUNCATION_LIMIT:.0%} of {total:.3g}."
        )

    picks = rng.generator.choice(pool, size=samples, p=tree_weights / total)
    selected: list[SelectedSpine] = []
    for i in picks:
        weights = leaf_weights[i]
        leaf = leaf_lists[i][int(rng.generator.choice(weights.size, p=weights / weights.sum()))]
        sizes = tuple(node.initial_size for node in trees[i].ancestry(leaf.label))
        selected.append(SelectedSpine(tree_index=int(i), label=leaf.label, sizes=sizes))
    return selected


def spine_by_selection(
    rng: RngState,
    spec: ToyDrivingSpec,
    x0: Sequence[float] | np.ndarray,
    omega: float,
    n_max: int,
    pool: int = 256,
    size_floor: float = DEFAULT_SIZE_FLOOR,
    verify_root: bool = True,
) -> SelectedSpine:
    """One spine by weighted selection; see :func:`select_spines`."""
    return select_spines(
        rng, spec, x0, omega, n_max, 1, pool=pool, size_floor=size_floor, verify_root=verify_root
    )[0]


def first_generation_log_increment(path: SpinePath) -> float:
    """log-size change from time 0 to just after the first generation change."""
    times = path.generation_jump_times
    if times.size == 0:
        raise ValueError("The spine has no generation change within its horizon.")
    return float(path.log_radius_at(times[0]) - path.log_x0)


# ----------------------------------------------------------------------
# Lamperti time change
# ----------------------------------------------------------------------
@dataclass(frozen=True, slots=True, eq=False)
class TimeChange:
    """``phi(t) = inf{s : int_0^s exp(alpha xi(u)) du > t}`` on a grid."""

    grid: np.ndarray
    integral: np.ndarray

    @property
    def horizon(self) -> float:
        return float(self.integral[-1])

    def __call__(self, t: float | np.ndarray) -> float | np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        if np.any((t_arr < 0) | (t_arr > self.horizon * (1 + 1e-12))):
            raise ValueError(f"t outside the clock's range [0, {self.horizon}].")
        out = np.interp(t_arr, self.integral, self.grid)
        return float(out) if out.ndim == 0 else out


def lamperti_clock(xi_path: PathGrid, alpha_ss: float) -> TimeChange:
    """Inverse of the additive functional ``int_0^s exp(alpha_ss xi(u)) du``.

    The integral is accumulated with the trapezoidal rule on the path's own
    grid; it is strictly increasing, so the inverse is a linear interpolation.
    """
    if xi_path.dim != 1:
        raise ValueError("lamperti_clock needs a one-dimensional log-size path.")
    rates = np.exp(alpha_ss * xi_path.values[:, 0])
    pieces = 0.5 * (rates[1:] + rates[:-1]) * np.diff(xi_path.times)
    integral = np.concatenate([[0.0], np.cumsum(pieces)])
    return TimeChange(grid=np.array(xi_path.times), integral=integral)


def lamperti_path(xi_path: PathGrid, alpha_ss: float, times: np.ndarray) -> np.ndarray:
    """Self-similar radius ``exp(xi(phi(t)))`` at the requested times."""
    clock = lamperti_clock(xi_path, alpha_ss)
    return np.exp(xi_path.at(clock(times))[..., 0])


# ----------------------------------------------------------------------
# Export
# ----------------------------------------------------------------------
def tree_records(tree: CellTree) -> list[dict]:
    return [
        {
            "label": list(node.label),
            "birth_time": node.birth_time,
            "initial_size": node.initial_size.tolist(),
            "generation": node.generation,
            "truncated": node.truncated,
        }
        for node in sorted(tree, key=lambda node: (node.generation, node.label))
    ]


def export_tree_ndjson(tree: CellTree, path) -> None:
    """One JSON object per node: label, birth time, initial size, generation, truncated."""
    write_ndjson(path, tree_records(tree))
