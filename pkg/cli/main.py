import argparse
import logging
import sys
from typing import List, Optional

from cli.commands import COMMANDS, EXIT_CODES, RunConfig
from engine.generators import GENERATORS
from shared.errors import (
    AdmissibilityError, DecompositionError, GridError, InputError, InvariantError, MeasureError,
)
from shared.utils.config_loader import cli_cfg

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """Reports bad command lines as InputError so they map to the input-error exit code."""

    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Seed for every generated measure and test vector (default: 0).")
    common.add_argument("--K", type=int, default=None, help="Grid depth (default: config/grid.yaml).")
    common.add_argument("--r", type=int, default=None, help="Goodness exponent r.")
    common.add_argument("--eps", type=float, default=None, help="Goodness exponent eps in (0, 1/2).")
    common.add_argument("--c0", type=float, default=None, help="Energy stopping knob (default: config/calibration.yaml).")
    common.add_argument("--threshold", type=float, default=None,
                        help="Stop the size lemma recursion below this size (default: ratio times the initial size).")
    common.add_argument("--window-eps", type=float, default=None, dest="window_eps", help="Inner truncation radius.")
    common.add_argument("--window-delta", type=float, default=None, dest="window_delta", help="Outer truncation radius.")
    common.add_argument("-o", "--output", type=str, default=None, help="Output path (stdout when omitted).")
    common.add_argument("--format", choices=["json", "csv"], default="json", help="Report format for batch output.")
    common.add_argument("--workers", type=int, default=None, help="Batch instances run in parallel on this many threads.")
    common.add_argument("-v", "--verbose", action="store_true", help="Log per-interval detail.")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = ArgumentParser(prog="twoweight", description="Two-weight Hilbert transform numerics.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="Generate measure pairs.")
    gen.add_argument("--kind", choices=sorted(GENERATORS), default=None)
    gen.add_argument("--count", type=int, default=None, help="Write a mixed corpus of this many pairs to --output.")
    gen.add_argument("--atoms", type=int, default=None)
    gen.add_argument("--depth", type=int, default=None, help="Cantor construction depth.")
    gen.add_argument("--spikes", type=int, default=None)
    gen.add_argument("--spike-mass", type=float, default=None, dest="spike_mass")
    gen.add_argument("--mass-low", type=float, default=None, dest="mass_low")
    gen.add_argument("--mass-high", type=float, default=None, dest="mass_high")

    constants = sub.add_parser("constants", parents=[common], help="A2, testing constants, norm and H.")
    constants.add_argument("measures", nargs="+")

    decompose = sub.add_parser("decompose", parents=[common], help="Run the size lemma recursion over Q0.")
    decompose.add_argument("measures")
    decompose.add_argument("--dot", type=str, default=None, help="Write the root L collection as a DOT graph.")

    forms = sub.add_parser("forms", parents=[common], help="Evaluate the stopping forms on seeded f and g.")
    forms.add_argument("measures")

    verify = sub.add_parser("verify", parents=[common], help="Run the invariant suite.")
    verify.add_argument("measures", nargs="*", help="Measure files; a seeded corpus when omitted.")
    verify.add_argument("--corpus-size", type=int, default=None, dest="corpus_size")
    verify.add_argument("--atoms", type=int, default=None, help="Atoms per measure in the seeded corpus.")
    verify.add_argument("--only", nargs="*", default=None, help="Check id prefixes, e.g. haar forms.equal_bound.")
    verify.add_argument("--random-vectors", type=int, default=None, dest="random_vectors")

    report = sub.add_parser("report", parents=[common], help="One batch row per instance.")
    report.add_argument("measures", nargs="+")

    calibrate = sub.add_parser("calibrate", parents=[common], help="Measure the caps and write a calibration file.")
    calibrate.add_argument("--corpus-size", type=int, default=None, dest="corpus_size")
    calibrate.add_argument("--atoms", type=int, default=None, help="Atoms per measure in the seeded corpus.")
    calibrate.add_argument("--safety", type=float, default=None, help="Multiplier on the measured maxima.")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.DEBUG if verbose else getattr(logging, cli_cfg['log_level']),
                        format='[%(asctime)s] %(levelname)s: %(message)s')
    try:
        args = build_parser().parse_args(argv)
        run = RunConfig.from_config(args)
        return COMMANDS[args.command](run, args)
    except (InputError, MeasureError, GridError) as e:
        logger.error(f"input error: {e}")
        return EXIT_CODES['input_error']
    except (InvariantError, AdmissibilityError, DecompositionError) as e:
        logger.error(f"invariant failure: {e}")
        return EXIT_CODES['invariant_failure']


if __name__ == "__main__":
    sys.exit(main())
