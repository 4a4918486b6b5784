import argparse
import importlib
import logging
import sys

from pydantic import ValidationError

from config.app_config import RunConfig, build_run_config, describe_keys, load_config_file
from utils.common_utils import (
    ArgumentError,
    ConfigurationError,
    FormatError,
    GravnetError,
    NumericalDomainError,
    UsageError,
    setup_logging,
    thread_count_override,
)

from . import COMMAND_HANDLER_MAP

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
KEY_PREFIX = "key_"


class CommandParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        error = UsageError(f"{self.prog}: error: {message}")
        error.help_text = self.format_help()
        raise error


def _epilog() -> str:
    return "config keys (default [provenance] description):\n" + "\n".join(describe_keys())


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    run = parser.add_argument_group("run options")
    run.add_argument("--config", help="config file of `key = value` lines")
    run.add_argument("--profile", help="named profile applied before the config file (reference, desk)")
    run.add_argument("--threads", type=int, help="worker cap (default: GRAVNET_THREADS or 1)")
    run.add_argument("--log-level", default="INFO", help="logging level (default: INFO)")
    run.add_argument("--json-logs", action="store_true", help="emit log records as JSON")
    run.add_argument("--log-file", help="also write JSON log records to this file")

    keys = parser.add_argument_group("config keys", "override values from --profile and --config")
    for name in RunConfig.model_fields:
        keys.add_argument(f"--{name.replace('_', '-')}", dest=f"{KEY_PREFIX}{name}", metavar="VALUE")


def build_parser() -> CommandParser:
    parser = CommandParser(
        prog="python -m handlers",
        description="N-body simulation, GNN surrogate training and rollout evaluation.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        allow_abbrev=False,
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND",
                                       parser_class=CommandParser)
    for command, module_name in COMMAND_HANDLER_MAP.items():
        handler_module = importlib.import_module(module_name)
        if not hasattr(handler_module, "run_handler"):
            raise ConfigurationError(f"Handler module {module_name} does not have a 'run_handler' function.")
        sub = subparsers.add_parser(
            command,
            help=handler_module.HELP,
            description=handler_module.HELP,
            epilog=_epilog(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
            allow_abbrev=False,
        )
        _add_common_arguments(sub)
        handler_module.add_arguments(sub)
        sub.set_defaults(handler=handler_module)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    values = {}
    for name in RunConfig.model_fields:
        value = getattr(args, f"{KEY_PREFIX}{name}", None)
        if value is not None:
            values[name] = value
    return values


def run_command(argv: list[str] | None = None) -> int:
    """
    Parses argv, builds the RunConfig and runs one subcommand.

    Returns:
        0 on success, 1 on usage or configuration errors, 2 on data, format or numerical errors.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(getattr(e, "help_text", parser.format_help()), file=sys.stderr)
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE

    setup_logging(args.log_level, args.json_logs, args.log_file)
    logger.info(f"Dispatcher invoked for command: {args.command}")

    try:
        file_values = load_config_file(args.config) if args.config else {}
        config = build_run_config(file_values, _overrides(args), args.profile)
        with thread_count_override(args.threads):
            status = args.handler.run_handler(config, args)
    except (UsageError, ValidationError, ArgumentError, ConfigurationError) as e:
        logger.error(f"{args.command}: {e}")
        print(parser.format_usage(), file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, NumericalDomainError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_DATA
    except GravnetError as e:
        logger.error(f"{args.command}: {e}", exc_info=True)
        return EXIT_DATA

    logger.info(f"Command {args.command} finished")
    return EXIT_OK if status is None else status


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    # Example: python -m handlers simulate --scenario spiral --n 25 --steps 100 --out scene.nbds
    main()
