"""eval: per-scene and per-frame test loss of a checkpoint on a dataset."""

import csv
import io
import logging

from learning.trainer import evaluate_loss, stepwise_losses
from storage.checkpoint_store import load_checkpoint
from storage.dataset_store import frame_graphs, load_dataset
from utils.common_utils import UsageError, atomic_write_bytes

logger = logging.getLogger(__name__)

HELP = "Evaluate a checkpoint on the scenes of a dataset file (loss grouped by scene)."


def add_arguments(parser):
    parser.add_argument("--model", required=True, help="checkpoint file (.nbdm)")
    parser.add_argument("--data", required=True, help="dataset file (.nbds)")
    parser.add_argument("--scene", type=int, action="append", help="scene index to evaluate (repeatable; default all)")
    parser.add_argument("--csv", help="write the per-frame losses as scene,step,mse")


def run_handler(config, args) -> int:
    checkpoint = load_checkpoint(args.model)
    scenes = load_dataset(args.data, checkpoint.history_depth)
    if not scenes:
        raise UsageError(f"{args.data} holds no scenes to evaluate")
    physics = scenes[0].physics
    if (physics.G, physics.eps, physics.dt) != (checkpoint.physics.G, checkpoint.physics.eps, checkpoint.physics.dt):
        logger.warning("Dataset physics differ from the checkpoint's training physics")

    indices = args.scene if args.scene else list(range(len(scenes)))
    for index in indices:
        if not 0 <= index < len(scenes):
            raise UsageError(f"scene index {index} is out of range (dataset holds {len(scenes)} scenes)")
    scene_graphs = {f"scene-{index}": frame_graphs(scenes[index], checkpoint.graph_config) for index in indices}

    for scene, loss in evaluate_loss(checkpoint.params, scene_graphs).items():
        logger.info(f"Scene {scene}: mean MSE {loss:.6e}", extra={"scene": scene, "loss": loss})

    if args.csv:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["scene", "step", "mse"])
        for scene, series in stepwise_losses(checkpoint.params, scene_graphs).items():
            writer.writerows([scene, step, loss] for step, loss in enumerate(series, start=1))
        atomic_write_bytes(args.csv, buffer.getvalue().encode("utf-8"))
    return 0
