"""
Direct-summation Newtonian gravity and the kick-drift-kick leapfrog integrator.

All arrays are float64. Positions, velocities and accelerations are (N, 3)
arrays, masses an (N,) array.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from utils.common_utils import ArgumentError, NumericalDomainError, get_thread_count

logger = logging.getLogger(__name__)

DEFAULT_SOFTENING = 0.05
# Rows per worker task when the force kernel is split across threads.
MIN_ROWS_PER_TASK = 32


class PhysicsParams(BaseModel):
    """Integration parameters. Defaults are the reference profile."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = Field(1e-4, gt=0)
    G: float = Field(4.5e-6, gt=0)
    eps: float = Field(DEFAULT_SOFTENING, ge=0)
    steps: int = Field(1000, ge=1)


def _as_vectors(values, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim == 1 and array.size == 3:
        array = array.reshape(1, 3)
    if array.ndim != 2 or array.shape[1] != 3:
        raise ArgumentError(f"{name} must have shape (N, 3), got {array.shape}")
    return array


@dataclass(frozen=True)
class ParticleSet:
    """Positions, velocities and masses of N bodies at one instant."""
    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        positions = _as_vectors(self.positions, "positions")
        velocities = _as_vectors(self.velocities, "velocities")
        masses = np.array(self.masses, dtype=np.float64).reshape(-1)
        n = positions.shape[0]
        if n < 1:
            raise ArgumentError("a particle set needs at least one body")
        if velocities.shape[0] != n or masses.shape[0] != n:
            raise ArgumentError(
                f"length mismatch: {n} positions, {velocities.shape[0]} velocities, {masses.shape[0]} masses"
            )
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(velocities)) and np.all(np.isfinite(masses))):
            raise ArgumentError("particle set contains non-finite values")
        if np.any(masses <= 0):
            raise ArgumentError("masses must be strictly positive")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)
        object.__setattr__(self, "masses", masses)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def with_velocities(self, velocities: np.ndarray) -> "ParticleSet":
        return ParticleSet(self.positions, velocities, self.masses)


@dataclass(frozen=True)
class Trace:
    """
    Frames recorded after each leapfrog step.

    positions, velocities and accelerations have shape (T, N, 3). The initial
    condition and its accelerations are kept separately and are not frames.
    """
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    masses: np.ndarray
    initial: ParticleSet
    initial_accelerations: np.ndarray
    step_seconds: list[float] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    def frame(self, t: int) -> ParticleSet:
        return ParticleSet(self.positions[t], self.velocities[t], self.masses)


def _acceleration_rows(positions: np.ndarray, masses: np.ndarray, G: float, eps: float,
                       start: int, stop: int) -> np.ndarray:
    # diff[a, j] = r_j - r_i for i = start + a
    diff = positions[np.newaxis, :, :] - positions[start:stop, np.newaxis, :]
    dist2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    rows = np.arange(stop - start)
    self_cols = np.arange(start, stop)
    if eps == 0.0:
        dist2[rows, self_cols] = 1.0
        if np.any(dist2 == 0.0):
            raise NumericalDomainError("overlapping particles with zero softening")
    else:
        dist2 = dist2 + eps * eps
    weights = masses[np.newaxis, :] / (dist2 * np.sqrt(dist2))
    weights[rows, self_cols] = 0.0
    # Per-component contiguous row reductions: the summation order of a row
    # does not depend on how many rows share the block.
    result = np.empty((stop - start, 3))
    for c in range(3):
        result[:, c] = (weights * diff[..., c]).sum(axis=1)
    return G * result


def pairwise_accelerations(positions, masses, G: float, eps: float, threads: int | None = None) -> np.ndarray:
    """
    Softened direct-summation accelerations, one row per particle.

    a_i = G * sum_{j != i} m_j (r_j - r_i) / (|r_j - r_i|^2 + eps^2)^{3/2}

    Args:
        positions: (N, 3) positions.
        masses: (N,) masses.
        G: Gravitational constant.
        eps: Softening length, >= 0.
        threads: Worker cap; defaults to the global cap. Each row is reduced
                 in particle order whatever the worker count.

    Returns:
        (N, 3) accelerations.

    Raises:
        ArgumentError: On empty or mismatched inputs, or negative eps.
        NumericalDomainError: If two particles overlap with eps = 0 or the result is not finite.
    """
    positions = _as_vectors(positions, "positions")
    masses = np.asarray(masses, dtype=np.float64).reshape(-1)
    n = positions.shape[0]
    if n == 0:
        raise ArgumentError("positions must not be empty")
    if masses.shape[0] != n:
        raise ArgumentError(f"length mismatch: {n} positions vs {masses.shape[0]} masses")
    if eps < 0:
        raise ArgumentError(f"softening must be non-negative, got {eps}")

    workers = threads if threads is not None else get_thread_count()
    if workers <= 1 or n < 2 * MIN_ROWS_PER_TASK:
        result = _acceleration_rows(positions, masses, G, eps, 0, n)
    else:
        block = max(MIN_ROWS_PER_TASK, -(-n // workers))
        bounds = [(start, min(start + block, n)) for start in range(0, n, block)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _acceleration_rows(positions, masses, G, eps, b[0], b[1]), bounds))
        result = np.concatenate(parts, axis=0)

    if not np.all(np.isfinite(result)):
        raise NumericalDomainError("non-finite acceleration")
    return result


def half_kick(velocities: np.ndarray, accelerations: np.ndarray, dt: float) -> np.ndarray:
    return velocities + accelerations * (dt / 2.0)


def drift(positions: np.ndarray, velocities: np.ndarray, dt: float) -> np.ndarray:
    return positions + velocities * dt


def leapfrog_step(state: ParticleSet, accel, params: PhysicsParams) -> tuple[ParticleSet, np.ndarray]:
    """
    One kick-drift-kick step.

    `accel` must be the acceleration of `state.positions`; the returned
    accelerations belong to the new positions and are passed to the next step.
    """
    accel = _as_vectors(accel, "accel")
    if accel.shape != state.positions.shape:
        raise ArgumentError(f"accel shape {accel.shape} does not match state shape {state.positions.shape}")
    v_half = half_kick(state.velocities, accel, params.dt)
    positions = drift(state.positions, v_half, params.dt)
    new_accel = pairwise_accelerations(positions, state.masses, params.G, params.eps)
    velocities = half_kick(v_half, new_accel, params.dt)
    return ParticleSet(positions, velocities, state.masses), new_accel


def simulate(initial: ParticleSet, params: PhysicsParams, steps: int | None = None) -> Trace:
    """
    Runs `steps` (default params.steps) leapfrog steps and records (R, V, A) after each.

    Accelerations are evaluated once before the loop and once per step.

    Raises:
        ArgumentError: If steps < 1.
        NumericalDomainError: Propagated from the force kernel.
    """
    total = params.steps if steps is None else steps
    if total < 1:
        raise ArgumentError(f"steps must be >= 1, got {total}")

    n = initial.n
    positions = np.empty((total, n, 3))
    velocities = np.empty((total, n, 3))
    accelerations = np.empty((total, n, 3))

    initial_accel = pairwise_accelerations(initial.positions, initial.masses, params.G, params.eps)
    state, accel = initial, initial_accel
    for t in range(total):
        state, accel = leapfrog_step(state, accel, params)
        positions[t] = state.positions
        velocities[t] = state.velocities
        accelerations[t] = accel

    logger.debug(f"Simulated {total} steps for {n} bodies")
    return Trace(positions, velocities, accelerations, initial.masses.copy(), initial, initial_accel)


def total_energy(state: ParticleSet, G: float, eps: float) -> float:
    """Kinetic energy plus the Plummer-softened pair potential."""
    kinetic = 0.5 * float(np.sum(state.masses * np.sum(state.velocities * state.velocities, axis=1)))
    n = state.n
    if n < 2:
        return kinetic
    i, j = np.triu_indices(n, k=1)
    diff = state.positions[j] - state.positions[i]
    dist2 = np.sum(diff * diff, axis=1) + eps * eps
    if np.any(dist2 == 0.0):
        raise NumericalDomainError("overlapping particles with zero softening")
    potential = -G * float(np.sum(state.masses[i] * state.masses[j] / np.sqrt(dist2)))
    return kinetic + potential


def total_momentum(state: ParticleSet) -> np.ndarray:
    """Sum of m_i v_i."""
    return np.sum(state.masses[:, np.newaxis] * state.velocities, axis=0)
