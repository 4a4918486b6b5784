"""export-csv: one scene of a dataset file as a trajectory CSV."""

import logging

from storage.dataset_store import load_dataset, write_trajectory_csv
from utils.common_utils import UsageError

logger = logging.getLogger(__name__)

HELP = "Export one scene of a dataset file as step,particle,x,y,z,vx,vy,vz,ax,ay,az."


def add_arguments(parser):
    parser.add_argument("--data", required=True, help="dataset file (.nbds)")
    parser.add_argument("--scene", type=int, default=0, help="scene index (default 0)")
    parser.add_argument("--out", required=True, help="CSV file to write")


def run_handler(config, args) -> int:
    scenes = load_dataset(args.data)
    if not 0 <= args.scene < len(scenes):
        raise UsageError(f"scene index {args.scene} is out of range (dataset holds {len(scenes)} scenes)")
    write_trajectory_csv(scenes[args.scene], args.out)
    return 0
