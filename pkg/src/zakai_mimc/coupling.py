"""Coupled sampling of mixed differences across space-time refinement levels.

One sample of the mixed difference at level pair (l1, l2) evaluates the loss
on up to four corner discretisations

    (l1, l2), (l1, l2-1), (l1-1, l2), (l1-1, l2-1)

all driven by the same Brownian path.  The noise is spatially uniform, so both
spatial levels consume identical draws; the coarse-time corners consume the
exact aggregates Z~_n = (Z_{4n} + Z_{4n+1} + Z_{4n+2} + Z_{4n+3}) / 2 of the
fine draws.  Streams are derived from (global_seed, l1, l2, sample_index), so
any sample is reproducible in isolation and samples are independent across
level pairs and indices.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import spde
from ._kernels import evolve_batch
from .errors import InvalidLevel
from .spde import Functional, GridSpec, ModelParams, Scheme

__all__ = [
    "LevelPair",
    "BaseMesh",
    "BrownianPath",
    "CoupledIncrement",
    "Direction",
    "corner_levels",
    "derive_rng",
    "sample_mixed_difference",
    "sample_first_difference",
    "mixed_difference_batch",
    "diagonal_difference_batch",
    "telescoping_check",
]


@functools.total_ordering
@dataclass(frozen=True)
class LevelPair:
    """Space-time refinement multi-index; ordered by (l1 + l2, l1)."""

    l1: int
    l2: int

    def __post_init__(self):
        if self.l1 < 0 or self.l2 < 0:
            raise InvalidLevel(f"negative level pair ({self.l1}, {self.l2})")

    def sort_key(self):
        return (self.l1 + self.l2, self.l1, self.l2)

    def __lt__(self, other: "LevelPair"):
        return self.sort_key() < other.sort_key()

    def __iter__(self):
        yield self.l1
        yield self.l2


@dataclass(frozen=True)
class BaseMesh:
    """Base mesh and domain shared by every refinement level."""

    x_min: float
    x_max: float
    h0: float
    k0: float

    def grid(self, params: ModelParams, l1: int, l2: int) -> GridSpec:
        return spde.build_grid(
            params, self.x_min, self.x_max, self.h0, self.k0, l1, l2
        )


class Direction:
    SPACE = "space"
    TIME = "time"


@dataclass(frozen=True)
class BrownianPath:
    """Normalized fine-timestep draws of one Brownian path plus its stream seed."""

    fine_normals: np.ndarray
    seed: int

    def coarsened(self) -> np.ndarray:
        """Draws of the 4x-coarser timestep: exact half-sum aggregates."""
        return coarsen_normals(self.fine_normals)


def coarsen_normals(z: np.ndarray) -> np.ndarray:
    """Aggregate fine draws to the next coarser time level (4 steps -> 1).

    W~_n = sum of four fine increments; with k_coarse = 4 k the normalized
    draw is Z~_n = (Z_{4n} + ... + Z_{4n+3}) / 2.
    """
    z = np.asarray(z)
    if z.shape[-1] % 4:
        raise ValueError("fine draw count must be divisible by 4")
    return 0.5 * z.reshape(z.shape[:-1] + (-1, 4)).sum(axis=-1)


def derive_rng(global_seed: int, pair: LevelPair, index: int) -> np.random.Generator:
    """Deterministic, collision-free stream for sample `index` at `pair`."""
    ss = np.random.SeedSequence(global_seed, spawn_key=(pair.l1, pair.l2, index))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class CoupledIncrement:
    """One coupled sample: the difference value, its corner losses, and work."""

    pair: LevelPair
    delta: float
    corners: tuple
    cost: float


def corner_levels(pair: LevelPair) -> list[tuple[int, int, int]]:
    """Signed corner levels (l1, l2, sign) of the mixed difference at `pair`.

    Degenerates to a first difference when one index is 0 and to the plain
    value at (0, 0).
    """
    l1, l2 = pair.l1, pair.l2
    if l1 > 0 and l2 > 0:
        return [(l1, l2, +1), (l1, l2 - 1, -1), (l1 - 1, l2, -1), (l1 - 1, l2 - 1, +1)]
    if l1 > 0:
        return [(l1, 0, +1), (l1 - 1, 0, -1)]
    if l2 > 0:
        return [(0, l2, +1), (0, l2 - 1, -1)]
    return [(0, 0, +1)]


def _corner_losses_batch(
    corners: list[tuple[int, int, int]],
    z_fine: np.ndarray,
    fine_l2: int,
    params: ModelParams,
    base: BaseMesh,
    scheme: Scheme,
    functional: Functional,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Evaluate every corner loss for a batch of shared paths.

    Returns (losses (B, n_corners), deltas (B,), cost per sample).
    """
    scheme = Scheme(scheme)
    functional = Functional(functional)
    B = z_fine.shape[0]
    losses = np.empty((B, len(corners)))
    deltas = np.zeros(B)
    cost = 0.0
    draws_cache = {fine_l2: z_fine}
    for ci, (l1, l2, sign) in enumerate(corners):
        if l2 not in draws_cache:
            src = max(k for k in draws_cache if k > l2)
            z = draws_cache[src]
            for _ in range(src - l2):
                z = coarsen_normals(z)
            draws_cache[l2] = z
        z = draws_cache[l2]
        grid = base.grid(params, l1, l2)
        op = spde.TridiagonalOperator.from_grid(grid, params)
        v0 = spde.initial_state(grid).values
        h, k = grid.h, grid.k
        c1 = np.sqrt(params.rho * k) / (2 * h)
        if scheme is Scheme.A:
            c2 = params.rho * k / (8 * h * h)
        else:
            c2 = params.rho * k / (2 * h * h)
        states = evolve_batch(
            z, v0, op.sub, op.diag, op.sup, c1, c2, wide=(scheme is Scheme.A)
        )
        i0 = grid.i_zero
        if i0 is None:
            raise spde.DomainMisaligned("loss needs a grid node at x = 0")
        tail = states[:, i0:].sum(axis=1)
        if functional is Functional.TRAPEZOIDAL:
            corner_loss = 1.0 - h * tail - 0.5 * h * states[:, i0 - 1]
        else:
            corner_loss = 1.0 - h * (tail + states[:, i0 - 1])
        losses[:, ci] = corner_loss
        deltas += sign * corner_loss
        cost += grid.interior_count * grid.n_steps
    return losses, deltas, cost


def mixed_difference_batch(
    pair: LevelPair,
    params: ModelParams,
    base: BaseMesh,
    scheme: Scheme,
    functional: Functional,
    global_seed: int,
    start_index: int,
    count: int,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Sample `count` coupled mixed differences with indices starting at `start_index`.

    Returns (deltas (count,), corner losses (count, n_corners), cost per sample).
    Memory-bounded: callers may chunk freely, results depend only on indices.
    """
    grid_fine = base.grid(params, pair.l1, pair.l2)
    n_fine = grid_fine.n_steps
    z = np.empty((count, n_fine))
    for i in range(count):
        rng = derive_rng(global_seed, pair, start_index + i)
        z[i] = rng.standard_normal(n_fine)
    corners = corner_levels(pair)
    losses, deltas, cost = _corner_losses_batch(
        corners, z, pair.l2, params, base, scheme, functional
    )
    return deltas, losses, cost


def sample_mixed_difference(
    pair: LevelPair,
    params: ModelParams,
    base: BaseMesh,
    scheme: Scheme,
    functional: Functional,
    rng_seed: int,
    index: int = 0,
) -> CoupledIncrement:
    """One coupled sample of the mixed difference at `pair`."""
    deltas, losses, cost = mixed_difference_batch(
        pair, params, base, scheme, functional, rng_seed, index, 1
    )
    return CoupledIncrement(
        pair=pair, delta=float(deltas[0]), corners=tuple(losses[0]), cost=cost
    )


def sample_first_difference(
    pair: LevelPair,
    direction: str,
    params: ModelParams,
    base: BaseMesh,
    scheme: Scheme,
    functional: Functional,
    rng_seed: int,
    index: int = 0,
) -> CoupledIncrement:
    """One coupled sample of a first difference along one refinement direction."""
    if direction == Direction.SPACE:
        if pair.l1 > 0:
            corners = [(pair.l1, pair.l2, +1), (pair.l1 - 1, pair.l2, -1)]
        else:
            corners = [(0, pair.l2, +1)]
    elif direction == Direction.TIME:
        if pair.l2 > 0:
            corners = [(pair.l1, pair.l2, +1), (pair.l1, pair.l2 - 1, -1)]
        else:
            corners = [(pair.l1, 0, +1)]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    grid_fine = base.grid(params, pair.l1, pair.l2)
    rng = derive_rng(rng_seed, pair, index)
    z = rng.standard_normal(grid_fine.n_steps)[None, :]
    losses, deltas, cost = _corner_losses_batch(
        corners, z, pair.l2, params, base, scheme, functional
    )
    return CoupledIncrement(
        pair=pair, delta=float(deltas[0]), corners=tuple(losses[0]), cost=cost
    )


def diagonal_difference_batch(
    level: int,
    params: ModelParams,
    base: BaseMesh,
    scheme: Scheme,
    functional: Functional,
    global_seed: int,
    start_index: int,
    count: int,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Multilevel (diagonal) difference L_(l,l) - L_(l-1,l-1) on a shared path."""
    pair = LevelPair(level, level)
    if level > 0:
        corners = [(level, level, +1), (level - 1, level - 1, -1)]
    else:
        corners = [(0, 0, +1)]
    grid_fine = base.grid(params, level, level)
    z = np.empty((count, grid_fine.n_steps))
    for i in range(count):
        rng = derive_rng(global_seed, pair, start_index + i)
        z[i] = rng.standard_normal(grid_fine.n_steps)
    losses, deltas, cost = _corner_losses_batch(
        corners, z, level, params, base, scheme, functional
    )
    return deltas, losses, cost


def telescoping_check(
    l1_max: int,
    l2_max: int,
    params: ModelParams,
    base: BaseMesh,
    scheme: Scheme = Scheme.A,
    functional: Functional = Functional.TRAPEZOIDAL,
    seed: int = 0,
) -> float:
    """|sum of all mixed differences on the rectangle - finest loss|, one shared path.

    Every corner loss is computed once from a single master path, so the sum
    telescopes to the finest corner up to floating-point cancellation.
    """
    pair_fine = LevelPair(l1_max, l2_max)
    grid_fine = base.grid(params, l1_max, l2_max)
    rng = derive_rng(seed, pair_fine, 0)
    z = rng.standard_normal(grid_fine.n_steps)

    draws = {l2_max: z}
    for l2 in range(l2_max - 1, -1, -1):
        draws[l2] = coarsen_normals(draws[l2 + 1])

    loss_table = {}
    for l1 in range(l1_max + 1):
        for l2 in range(l2_max + 1):
            grid = base.grid(params, l1, l2)
            state = spde.evolve(grid, params, draws[l2], scheme)
            loss_table[(l1, l2)] = spde.evaluate_loss(state, grid, functional)

    total = 0.0
    for l1 in range(l1_max + 1):
        for l2 in range(l2_max + 1):
            for a, b, sign in corner_levels(LevelPair(l1, l2)):
                total += sign * loss_table[(a, b)]
    return abs(total - loss_table[(l1_max, l2_max)])
