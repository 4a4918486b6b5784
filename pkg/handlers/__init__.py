# This file makes the 'handlers' directory a Python package.

# A mapping of subcommand to handler module name.
# handlers/__main__.py imports each module, lets it add its own arguments
# with add_arguments(parser) and runs it through run_handler(config, args).
COMMAND_HANDLER_MAP = {
    "simulate": "handlers.simulate_handler",
    "gen-dataset": "handlers.gen_dataset_handler",
    "train": "handlers.train_handler",
    "eval": "handlers.eval_handler",
    "rollout": "handlers.rollout_handler",
    "bench": "handlers.bench_handler",
    "export-csv": "handlers.export_csv_handler",
}
