"""simulate: run the direct-summation leapfrog for one scene and store the trace."""

import logging

import numpy as np

from simulation.physics_core import simulate, total_energy, total_momentum
from simulation.scenarios import generate_scene
from storage.dataset_store import record_simulation, save_dataset, write_trajectory_csv

logger = logging.getLogger(__name__)

HELP = "Simulate one scene and store its trace as a one-scene dataset file."


def add_arguments(parser):
    parser.add_argument("--out", required=True, help="dataset file (.nbds) receiving the trace")
    parser.add_argument("--csv", help="optional trajectory CSV (step,particle,x,y,z,vx,vy,vz,ax,ay,az)")


def run_handler(config, args) -> int:
    physics = config.physics_params()
    initial = generate_scene(config.scenario, config.n, config.galaxy_params(), config.seed,
                             config.disc_count, config.separation)
    logger.info(f"Simulating {config.scenario} scene with {initial.n} bodies for {physics.steps} steps "
                f"(seed={config.seed})")
    trace = simulate(initial, physics)

    final = trace.frame(trace.frame_count - 1)
    energy_start = total_energy(initial, physics.G, physics.eps)
    energy_end = total_energy(final, physics.G, physics.eps)
    energy_drift = abs(energy_end - energy_start) / max(abs(energy_start), np.finfo(np.float64).tiny)
    momentum_scale = float(np.sum(initial.masses * np.linalg.norm(initial.velocities, axis=1))) or 1.0
    momentum_drift = float(np.linalg.norm(total_momentum(final) - total_momentum(initial))) / momentum_scale
    logger.info(f"Relative energy drift {energy_drift:.3e}, momentum drift {momentum_drift:.3e}",
                extra={"energy_drift": energy_drift, "momentum_drift": momentum_drift})

    scene = record_simulation(trace, 0, physics)
    save_dataset([scene], args.out, physics)
    if args.csv:
        write_trajectory_csv(scene, args.csv)
    return 0
