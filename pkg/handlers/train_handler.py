"""train: fit the surrogate on the training scenes of a dataset and save a checkpoint."""

import logging

from learning.trainer import train
from storage.checkpoint_store import save_checkpoint
from storage.dataset_store import frame_graphs, load_dataset, split_train_test
from utils.common_utils import ArgumentError, atomic_write_bytes

logger = logging.getLogger(__name__)

HELP = "Train the GNN surrogate on a dataset file and write a checkpoint."


def add_arguments(parser):
    parser.add_argument("--data", required=True, help="dataset file (.nbds)")
    parser.add_argument("--out", required=True, help="checkpoint file (.nbdm) to write")
    parser.add_argument("--history-csv", help="write the epoch,mean_loss,seconds log to this CSV")


def run_handler(config, args) -> int:
    scenes = load_dataset(args.data, config.history_depth)
    if not scenes:
        raise ArgumentError(f"{args.data} holds no scenes to train on")
    physics = scenes[0].physics
    graph_config = config.graph_config()
    train_config = config.train_config(args.threads)

    if len(scenes) >= 2:
        train_ids, test_ids = split_train_test(
            list(range(len(scenes))), train_config.train_fraction, train_config.seed
        )
    else:
        logger.warning("Dataset holds a single scene; training on it without a held-out scene")
        train_ids, test_ids = [0], []
    logger.info(f"Training scenes {train_ids}, held-out scenes {test_ids}")

    graphs = [graph for index in train_ids for graph in frame_graphs(scenes[index], graph_config)]
    test_scenes = {f"scene-{index}": frame_graphs(scenes[index], graph_config) for index in test_ids}
    params, history = train(graphs, train_config, config.architecture(), test_scenes)

    save_checkpoint(args.out, params, graph_config, physics)
    if args.history_csv:
        atomic_write_bytes(args.history_csv, ("\n".join(history.csv_lines()) + "\n").encode("utf-8"))
    logger.info(f"Final training loss {history.epoch_losses[-1]:.6e} after {history.steps} optimizer steps")
    return 0
