"""
Seeded initial-condition generators.

Every generator draws from numpy's PCG64 bit generator seeded with the given
64-bit integer, so its output is a pure function of (arguments, seed).
"""

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from simulation.physics_core import DEFAULT_SOFTENING, ParticleSet
from utils.common_utils import ArgumentError

logger = logging.getLogger(__name__)

# Azimuthal offset amplitude (radians) of the spiral-arm perturbation.
ARM_AMPLITUDE = 0.3


class GalaxyParams(BaseModel):
    """Disc-galaxy parameters. Defaults are the reference profile."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    total_mass: float = Field(1.0, gt=0)
    radial_scale: float = Field(3.0, gt=0)
    vertical_scale: float = Field(0.3, gt=0)
    bh_mass_fraction: float = Field(0.01, gt=0, lt=1)
    arms: int = Field(2, ge=1)
    G: float = Field(4.5e-6, gt=0)
    # Softening used by the circular-speed assignment.
    eps: float = Field(DEFAULT_SOFTENING, ge=0)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def _sample_disc(n: int, params: GalaxyParams, seed: int, arm_amplitude: float) -> ParticleSet:
    if n < 2:
        raise ArgumentError(f"a disc needs n >= 2 (black hole plus stars), got {n}")
    rng = _rng(seed)
    stars = n - 1
    bh_mass = params.bh_mass_fraction * params.total_mass
    star_mass = (params.total_mass - bh_mass) / stars

    # Surface density exp(-R/h) => p(R) ~ R exp(-R/h), a Gamma(2, h) law.
    radii = rng.gamma(2.0, params.radial_scale, size=stars)
    radii = np.maximum(radii, np.finfo(np.float64).tiny)
    heights = rng.normal(0.0, params.vertical_scale, size=stars)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=stars)
    if arm_amplitude:
        theta = theta + arm_amplitude * np.cos(params.arms * (theta - np.log(radii / params.radial_scale)))

    # Enclosed mass: black hole plus stars strictly inside each radius.
    order = np.argsort(radii, kind="stable")
    sorted_radii = radii[order]
    interior = np.searchsorted(sorted_radii, radii, side="left")
    enclosed = bh_mass + star_mass * interior
    speed = np.sqrt(params.G * enclosed / np.sqrt(radii * radii + params.eps * params.eps))

    positions = np.zeros((n, 3))
    velocities = np.zeros((n, 3))
    masses = np.empty(n)
    positions[1:, 0] = radii * np.cos(theta)
    positions[1:, 1] = radii * np.sin(theta)
    positions[1:, 2] = heights
    velocities[1:, 0] = -speed * np.sin(theta)
    velocities[1:, 1] = speed * np.cos(theta)
    masses[0] = bh_mass
    masses[1:] = star_mass
    return ParticleSet(positions, velocities, masses)


def spiral_galaxy(n: int, params: GalaxyParams | None = None, seed: int = 0) -> ParticleSet:
    """
    Exponential disc with a central black hole (particle 0) and `arms` spiral arms.

    Raises:
        ArgumentError: If n < 2.
    """
    params = params or GalaxyParams()
    galaxy = _sample_disc(n, params, seed, ARM_AMPLITUDE)
    logger.debug(f"Generated spiral galaxy n={n} seed={seed}")
    return galaxy


def disc_3d(n: int, params: GalaxyParams | None = None, seed: int = 0) -> ParticleSet:
    """Axisymmetric version of spiral_galaxy (no arm perturbation)."""
    params = params or GalaxyParams()
    return _sample_disc(n, params, seed, 0.0)


def random_cloud(n: int, half_width: float = 1.0, total_mass: float = 1.0, seed: int = 0) -> ParticleSet:
    """Equal-mass bodies at rest, uniform in the cube [-half_width, half_width]^3."""
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    if half_width <= 0 or total_mass <= 0:
        raise ArgumentError("half_width and total_mass must be positive")
    rng = _rng(seed)
    positions = rng.uniform(-half_width, half_width, size=(n, 3))
    return ParticleSet(positions, np.zeros((n, 3)), np.full(n, total_mass / n))


def multi_disc(count: int, n_per_disc: int, params: GalaxyParams | None = None,
               separation: float = 20.0, seed: int = 0) -> ParticleSet:
    """
    `count` discs from disc_3d centred on the x axis, `separation` apart, with zero bulk velocity.

    Raises:
        ArgumentError: If count < 2 or separation <= 0.
    """
    if count < 2:
        raise ArgumentError(f"multi_disc needs count >= 2, got {count}")
    if separation <= 0:
        raise ArgumentError(f"separation must be positive, got {separation}")
    params = params or GalaxyParams()
    child_seeds = np.random.SeedSequence(int(seed)).generate_state(count, dtype=np.uint64)

    positions, velocities, masses = [], [], []
    for index, child_seed in enumerate(child_seeds):
        disc = disc_3d(n_per_disc, params, int(child_seed))
        offset = np.array([(index - (count - 1) / 2.0) * separation, 0.0, 0.0])
        positions.append(disc.positions + offset)
        velocities.append(disc.velocities)
        masses.append(disc.masses)
    return ParticleSet(np.concatenate(positions), np.concatenate(velocities), np.concatenate(masses))


SCENARIOS = ("spiral", "disc", "cloud", "multi-disc")


def generate_scene(name: str, n: int, params: GalaxyParams | None = None, seed: int = 0,
                   disc_count: int = 2, separation: float = 20.0) -> ParticleSet:
    """
    Builds the initial condition of a named scenario with about n bodies.

    "multi-disc" splits n evenly over `disc_count` discs (n // disc_count bodies each).

    Raises:
        ArgumentError: On an unknown scenario name or too few bodies.
    """
    params = params or GalaxyParams()
    if name == "spiral":
        return spiral_galaxy(n, params, seed)
    if name == "disc":
        return disc_3d(n, params, seed)
    if name == "cloud":
        return random_cloud(n, total_mass=params.total_mass, seed=seed)
    if name == "multi-disc":
        return multi_disc(disc_count, n // disc_count, params, separation, seed)
    raise ArgumentError(f"unknown scenario {name!r}, expected one of {', '.join(SCENARIOS)}")
