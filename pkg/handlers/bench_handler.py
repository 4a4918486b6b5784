"""bench: wall-clock speedup of the surrogate over direct summation per body count."""

import logging

from analyzers.rollout_analyzer import SurrogateModel, benchmark_speedup, fit_loglog_slope, write_benchmark_csv
from simulation.physics_core import PhysicsParams
from simulation.scenarios import generate_scene
from storage.checkpoint_store import load_checkpoint

logger = logging.getLogger(__name__)

HELP = "Time simulate against the surrogate rollout for every scene size."


def add_arguments(parser):
    parser.add_argument("--model", required=True, help="checkpoint file (.nbdm)")
    parser.add_argument("--csv", help="scene,n,t_classical_s,t_surrogate_s,speedup")
    parser.add_argument("--fit", action="store_true", help="log the log-log slope of both timings against N")


def run_handler(config, args) -> int:
    checkpoint = load_checkpoint(args.model)
    trained = checkpoint.physics
    physics = PhysicsParams(dt=trained.dt, G=trained.G, eps=trained.eps, steps=config.steps)
    galaxy = config.galaxy_params().model_copy(update={"G": trained.G, "eps": trained.eps})
    scenes = {
        f"n-{n}": generate_scene(config.scenario, n, galaxy, config.seed, config.disc_count, config.separation)
        for n in config.scene_sizes
    }

    model = SurrogateModel(checkpoint.params, checkpoint.graph_config)
    rows = benchmark_speedup(model, scenes, physics, config.repetitions, threads=args.threads or 1)
    if args.csv:
        write_benchmark_csv(rows, args.csv)
    if args.fit and len(rows) >= 2:
        ns = [row.n for row in rows]
        classical = fit_loglog_slope(ns, [row.t_classical for row in rows])
        surrogate = fit_loglog_slope(ns, [row.t_surrogate for row in rows])
        logger.info(f"Log-log slope: classical {classical:.2f}, surrogate {surrogate:.2f}",
                    extra={"classical_slope": classical, "surrogate_slope": surrogate})
    return 0
