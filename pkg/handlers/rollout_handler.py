"""rollout: closed-loop surrogate simulation against ground truth for fresh scenes."""

import logging

from analyzers.rollout_analyzer import RolloutAnalyzer, SurrogateModel, write_cumulative_csv, write_errors_csv
from simulation.physics_core import PhysicsParams
from simulation.scenarios import generate_scene
from storage.checkpoint_store import load_checkpoint

logger = logging.getLogger(__name__)

HELP = "Roll out a checkpoint on generated scenes and report per-step errors."


def add_arguments(parser):
    parser.add_argument("--model", required=True, help="checkpoint file (.nbdm)")
    parser.add_argument("--scene-seed", type=int, action="append",
                        help="seed of a generated scene (repeatable; default: the seed key)")
    parser.add_argument("--csv", help="per-step errors: step,mse_pos,mse_vel,mse_acc[,scene]")
    parser.add_argument("--cumulative-csv", help="running sums of the per-step errors")


def run_handler(config, args) -> int:
    checkpoint = load_checkpoint(args.model)
    trained = checkpoint.physics
    physics = PhysicsParams(dt=trained.dt, G=trained.G, eps=trained.eps, steps=config.steps)
    galaxy = config.galaxy_params().model_copy(update={"G": trained.G, "eps": trained.eps})

    seeds = args.scene_seed or [config.seed]
    scenes = {
        f"seed-{seed}": generate_scene(config.scenario, config.n, galaxy, seed, config.disc_count, config.separation)
        for seed in seeds
    }
    analyzer = RolloutAnalyzer(SurrogateModel(checkpoint.params, checkpoint.graph_config), physics)
    report = analyzer.analyze(scenes)

    final = report.averaged_cumulative[-1]
    logger.info(f"Cumulative errors over {len(scenes)} scene(s): position {final[0]:.3e}, "
                f"velocity {final[1]:.3e}, acceleration {final[2]:.3e}")
    if args.csv:
        write_errors_csv(report, args.csv)
    if args.cumulative_csv:
        write_cumulative_csv(report, args.cumulative_csv)
    return 0
