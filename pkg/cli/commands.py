import argparse
import logging
import sys

import numpy as np

from services.adversary import AttackAnalysisQuery, attack_success_prob, sweep_success_prob, write_sweep_csv
from services.experiment import load_experiment_config
from services.harness import run_experiment, summary
from storage.chain_store import ChainStore
from utils.errors import BFLCError, ChainFormatError, ConfigError, ExperimentFailure, InvalidArgument
from utils.helpers import format_probability

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_EXPERIMENT_FAILURE = 2


def _error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def cmd_run(args: argparse.Namespace) -> int:
    """Run an experiment from a JSON config and write its CSVs and chain file."""
    try:
        cfg = load_experiment_config(args.config)
    except ConfigError as e:
        return _error(f"{args.config}: {e}")
    except OSError as e:
        return _error(f"cannot read config: {e}")

    try:
        results = run_experiment(cfg, args.out)
    except ExperimentFailure as e:
        logger.error(f"Experiment failed: {e}")
        print(f"experiment failed: {e}", file=sys.stderr)
        return EXIT_EXPERIMENT_FAILURE
    except (BFLCError, OSError) as e:
        return _error(str(e))

    for name, accuracy in summary(results).items():
        logger.info(f"{name}: final accuracy {accuracy:.4f}")
    return EXIT_OK


def cmd_attack_prob(args: argparse.Namespace) -> int:
    """Print the exact attack success probability for (A, p, q)."""
    try:
        probability = attack_success_prob(AttackAnalysisQuery(args.nodes, args.committee_frac, args.malicious_frac))
    except InvalidArgument as e:
        return _error(str(e))
    print(format_probability(probability))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Write the p x q attack-probability surface as CSV."""
    try:
        matrix = sweep_success_prob(args.nodes, args.p_grid, args.q_grid)
        write_sweep_csv(args.out, args.p_grid, args.q_grid, matrix)
    except InvalidArgument as e:
        return _error(str(e))
    except OSError as e:
        return _error(f"cannot write sweep: {e}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    """Verify a chain file; prints the first bad block index on failure."""
    try:
        chain = ChainStore(args.chain).load()
    except (ChainFormatError, OSError) as e:
        return _error(f"{args.chain}: {e}")

    result = chain.verify()
    if result.valid:
        print(f"valid: {len(chain)} blocks, round {chain.current_round}")
        return EXIT_OK
    print(f"invalid: first bad index {result.first_bad_index} ({result.reason})")
    return EXIT_USAGE


def cmd_prune(args: argparse.Namespace) -> int:
    """Drop payloads before a round and write the pruned chain file."""
    try:
        store = ChainStore(args.chain)
        chain = store.load()
        chain.prune(args.keep_from)
        ChainStore(args.out or args.chain).save(chain)
    except (ChainFormatError, InvalidArgument, OSError) as e:
        return _error(f"{args.chain}: {e}")
    print(f"pruned before round {chain.pruned_before}")
    return EXIT_OK


def default_grid() -> list:
    return [round(v, 2) for v in np.arange(0.05, 0.951, 0.05)]
