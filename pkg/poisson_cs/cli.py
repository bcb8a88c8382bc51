import argparse
import logging
import sys
from dataclasses import replace

from poisson_cs import __version__
from poisson_cs.algo.stats.sqjsd_stats import EpsilonMode
from poisson_cs.analyzers.experiment_analyzers import SWEEP_KINDS, ExperimentAnalyzer, ExperimentKind, \
    ExperimentSpec, LambdaMode, SolverName
from poisson_cs.exceptions import NotConverged, PoissonCSError


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID_INPUT = 1
EXIT_NOT_CONVERGED = 2


def _add_common_arguments(parser):
    parser.add_argument("--config", type=str, default=None, help="JSON file with ExperimentSpec fields")
    parser.add_argument("--out", type=str, default="results", help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Master seed")
    parser.add_argument("--trials", type=int, default=None, help="Trials per grid cell")
    parser.add_argument("--paper-scale", action="store_true", help="Restore the full experiment grids")
    parser.add_argument("--workers", type=int, default=None, help="Parallel workers (-1 uses every core)")
    parser.add_argument("--solver", choices=[solver.value for solver in SolverName], default=None)
    parser.add_argument("--lambda-mode", choices=[mode.value for mode in LambdaMode], default=None)
    parser.add_argument("--lambda-value", type=float, default=None, help="Lambda for the fixed mode")
    parser.add_argument("--epsilon-mode", choices=[mode.value for mode in EpsilonMode], default=None)
    parser.add_argument("--enforce-intensity", action="store_true", help="Rescale estimates to the true intensity")
    parser.add_argument("--save-matrices", action="store_true", help="Write every sensing matrix under <out>/matrices")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")


def build_parser():
    parser = argparse.ArgumentParser(prog="poisson-cs",
                                     description="Poisson compressed sensing experiments with the SQJSD")
    parser.add_argument("--version", action="version", version="%(prog)s {0}".format(__version__))

    subparsers = parser.add_subparsers(dest="command", required=True)

    sweep_parser = subparsers.add_parser("sweep", help="Reconstruction error sweeps")
    sweep_parser.add_argument("--kind", required=True, choices=sorted(kind.value for kind in SWEEP_KINDS))
    _add_common_arguments(sweep_parser)

    stats_parser = subparsers.add_parser("verify-stats", help="Monte-Carlo checks of the SQJSD statistics")
    _add_common_arguments(stats_parser)

    image_parser = subparsers.add_parser("image", help="Patch-based image reconstruction")
    image_parser.add_argument("--input", required=True, help="Grayscale PGM image")
    _add_common_arguments(image_parser)

    return parser


def build_spec(args):
    """
    Builds the ExperimentSpec of a parsed command line: config file values first, then the
    paper-scale settings, then explicit flags.
    """

    if args.command == "sweep":
        kind = ExperimentKind(args.kind)
    elif args.command == "verify-stats":
        kind = ExperimentKind.VERIFY_STATS
    else:
        kind = ExperimentKind.IMAGE_RECON

    if args.config is not None:
        spec = ExperimentSpec.from_json(args.config, kind=kind)
    else:
        spec = ExperimentSpec(kind=kind)

    if args.paper_scale:
        spec = spec.with_paper_scale()

    flags = {
        "master_seed": args.seed,
        "trials": args.trials,
        "workers": args.workers,
        "solver": args.solver,
        "lambda_mode": args.lambda_mode,
        "lambda_value": args.lambda_value,
        "epsilon_mode": args.epsilon_mode,
        "enforce_intensity": True if args.enforce_intensity else None,
        "save_matrices": True if args.save_matrices else None,
    }

    return replace(spec, **{key: value for key, value in flags.items() if value is not None})


def configure_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG

    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    try:
        spec = build_spec(args)
        analyzer = ExperimentAnalyzer(spec)
        manifest = analyzer.run(getattr(args, "input", None))
    except (PoissonCSError, OSError, ValueError) as error:
        logger.error("%s", error)
        print("error: {0}".format(error), file=sys.stderr)
        return EXIT_INVALID_INPUT

    for path in analyzer.save_results(args.out):
        print(path)

    if manifest.invalid_input is not None:
        print("error: {0}".format(manifest.invalid_input), file=sys.stderr)
        return EXIT_INVALID_INPUT

    try:
        analyzer.raise_for_failures()
    except NotConverged as error:
        print("warning: {0}".format(error), file=sys.stderr)
        return EXIT_NOT_CONVERGED

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
