import argparse
import logging
import sys

from micon import __version__
from micon.cli.data_commands import cmd_gen_data, cmd_nominate
from micon.cli.eval_commands import cmd_evaluate, cmd_report
from micon.cli.train_commands import cmd_train

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


def _common_flags() -> argparse.ArgumentParser:
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--config", required=True, help="TOML run configuration")
    flags.add_argument("--deterministic", action="store_true", help="Assemble batches in-line (no worker thread)")
    flags.add_argument("--seed", type=int, default=None, help="Replace the configured seed list with this seed")
    flags.add_argument("--out", default=None, help="Run directory (overrides output_dir)")
    flags.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    return flags


def create_parser() -> argparse.ArgumentParser:
    """Parser factory for the ``micon`` command family."""
    parser = argparse.ArgumentParser(
        prog="micon",
        description="Contrastive morphological profiling with counterfactual compound representations",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    commands.add_parser("gen-data", parents=[common], help="Generate or ingest the dataset").set_defaults(
        handler=cmd_gen_data
    )
    commands.add_parser("train", parents=[common], help="Train the configured methods per seed").set_defaults(
        handler=cmd_train
    )
    commands.add_parser("evaluate", parents=[common], help="Constrained compound-replicate retrieval").set_defaults(
        handler=cmd_evaluate
    )
    commands.add_parser("nominate", parents=[common], help="Nominate strong compounds").set_defaults(
        handler=cmd_nominate
    )
    report = commands.add_parser("report", parents=[common], help="Comparison table over one or more runs")
    report.add_argument("runs", nargs="*", help="Run directories (default: report.runs, then output_dir)")
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = create_parser().parse_args(argv)
    configure_logging(args.verbose)
    logger.debug("micon %s: %s", __version__, args.command)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
