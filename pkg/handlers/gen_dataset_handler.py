"""gen-dataset: simulate scenes_per_size scenes for every entry of scene_sizes."""

import logging

import numpy as np

from simulation.physics_core import simulate
from simulation.scenarios import generate_scene
from storage.dataset_store import record_simulation, save_dataset

logger = logging.getLogger(__name__)

HELP = "Generate a labelled dataset file of simulated scenes."


def add_arguments(parser):
    parser.add_argument("--out", required=True, help="dataset file (.nbds) to write")


def run_handler(config, args) -> int:
    physics = config.physics_params()
    galaxy = config.galaxy_params()
    total = len(config.scene_sizes) * config.scenes_per_size
    seeds = np.random.SeedSequence(config.seed).generate_state(total, dtype=np.uint64)

    scenes = []
    for index, n in enumerate(size for size in config.scene_sizes for _ in range(config.scenes_per_size)):
        scene_seed = int(seeds[index])
        initial = generate_scene(config.scenario, n, galaxy, scene_seed, config.disc_count, config.separation)
        trace = simulate(initial, physics)
        scenes.append(record_simulation(trace, 0, physics))
        logger.info(f"Scene {index + 1}/{total}: {initial.n} bodies, {trace.frame_count} frames",
                    extra={"scene": index, "n": initial.n})

    dataset = save_dataset(scenes, args.out, physics)
    logger.info(f"Dataset {dataset.path} holds {dataset.scene_count} scenes")
    return 0
