import argparse
import logging
import sys

from cli.commands import cmd_attack_prob, cmd_prune, cmd_run, cmd_sweep, cmd_verify, default_grid
from config import DEFAULT_OUTPUT_DIR, LOG_LEVEL

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="bflc", description="BFLC protocol simulator")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="logging level (default from BFLC_LOG_LEVEL)")
    subcommands = parser.add_subparsers(dest="subcommand", required=True)

    # Register subcommands
    run = subcommands.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True, help="experiment config file (JSON)")
    run.add_argument("--out", default=DEFAULT_OUTPUT_DIR, help="output directory for CSVs and chain files")
    run.set_defaults(handler=cmd_run)

    attack = subcommands.add_parser("attack-prob", help="exact attack success probability")
    attack.add_argument("--nodes", type=int, required=True, help="participating nodes A")
    attack.add_argument("--committee-frac", type=float, required=True, help="committee fraction p")
    attack.add_argument("--malicious-frac", type=float, required=True, help="malicious fraction q")
    attack.set_defaults(handler=cmd_attack_prob)

    sweep = subcommands.add_parser("sweep", help="attack success probability over a p x q grid")
    sweep.add_argument("--nodes", type=int, default=1000, help="participating nodes A (default 1000)")
    sweep.add_argument("--p-grid", type=float, nargs="+", default=default_grid(), help="committee fractions")
    sweep.add_argument("--q-grid", type=float, nargs="+", default=default_grid(), help="malicious fractions")
    sweep.add_argument("--out", required=True, help="output CSV path")
    sweep.set_defaults(handler=cmd_sweep)

    verify = subcommands.add_parser("verify", help="verify a chain file")
    verify.add_argument("--chain", required=True, help="chain file (JSON lines)")
    verify.set_defaults(handler=cmd_verify)

    prune = subcommands.add_parser("prune", help="drop historical block payloads from a chain file")
    prune.add_argument("--chain", required=True, help="chain file (JSON lines)")
    prune.add_argument("--keep-from", type=int, required=True, help="first round whose payloads are kept")
    prune.add_argument("--out", default=None, help="output path (default: overwrite the input)")
    prune.set_defaults(handler=cmd_prune)

    return parser


def main(argv=None) -> int:
    """Parse arguments and dispatch to the subcommand handler."""
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
    )

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 1
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        raise


if __name__ == '__main__':
    sys.exit(main())
