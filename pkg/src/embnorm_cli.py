"""CLI for embnorm."""

import argparse
import logging
from pathlib import Path
import sys

from common import ConfigError, EmbnormError
import config as config_lib
import embnorm
import normalizer


LOGGER = logging.getLogger("embnorm")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def common_arguments() -> argparse.ArgumentParser:
    parser = ArgumentParser(add_help=False)
    parser.add_argument(
        "--log-file",
        action="store_true",
        help="Create a log file (embnorm.log) in the working directory.",
    )
    parser.add_argument(
        "--stdout-log-level",
        default="INFO",
        choices=logging._nameToLevel.keys(),  # pylint: disable=protected-access
        help="Log level of the console output.",
    )
    parser.add_argument(
        "--no-progress-bars",
        action="store_true",
        help="Disable the progress bars. Useful for tests.",
    )
    config_lib.add_config_arguments(parser)
    return parser


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="embnorm")
    subparsers = parser.add_subparsers(
        dest="subcommand", required=True, parser_class=ArgumentParser
    )
    parents = [common_arguments()]

    subparsers.add_parser(
        "gen", parents=parents, help="Generate synthetic embeddings and trials."
    )

    fit_norm = subparsers.add_parser(
        "fit-norm", parents=parents, help="Train a normalization model."
    )
    fit_norm.add_argument(
        "--kind",
        required=True,
        choices=normalizer.get_available_normalizers(),
        help="The normalizer.",
    )
    fit_norm.add_argument("embeddings", type=Path, help="Training embeddings.")
    fit_norm.add_argument("output", type=Path, help="Model file to write.")

    apply_norm = subparsers.add_parser(
        "apply-norm", parents=parents, help="Normalize embeddings."
    )
    apply_norm.add_argument("model", type=Path, help="Normalization model.")
    apply_norm.add_argument("embeddings", type=Path, help="Embeddings to normalize.")
    apply_norm.add_argument("output", type=Path, help="Embedding file to write.")

    fit_plda = subparsers.add_parser(
        "fit-plda", parents=parents, help="Train a PLDA model."
    )
    fit_plda.add_argument("embeddings", type=Path, help="Labeled embeddings.")
    fit_plda.add_argument("output", type=Path, help="Model file to write.")

    adapt = subparsers.add_parser(
        "adapt", parents=parents, help="Adapt a model to out-of-domain data."
    )
    adapt.add_argument(
        "--mode",
        required=True,
        choices=("plda-ret", "plda-uat", "norm-adapt"),
        help="PLDA retraining, unsupervised PLDA adaptation or normalizer "
        "re-training.",
    )
    adapt.add_argument(
        "--model", type=Path, help="The model to adapt (PLDA or normalizer)."
    )
    adapt.add_argument("embeddings", type=Path, help="Adaptation embeddings.")
    adapt.add_argument("output", type=Path, help="Model file to write.")

    score = subparsers.add_parser("score", parents=parents, help="Score trials.")
    score.add_argument("--plda", type=Path, required=True, help="PLDA model.")
    score.add_argument(
        "--normalizer", type=Path, help="Normalization model. Default: raw vectors."
    )
    score.add_argument(
        "--enrollment",
        type=Path,
        help='Multi-session enrollment lines "model_id utt1 utt2 ...".',
    )
    score.add_argument("embeddings", type=Path, help="Embeddings of all trial ids.")
    score.add_argument("trials", type=Path, help="Trial list.")
    score.add_argument("output", type=Path, help="Score file to write.")

    eval_ = subparsers.add_parser(
        "eval", parents=parents, help="EER and DET points of a score file."
    )
    eval_.add_argument("scores", type=Path, help="Score file.")
    eval_.add_argument("--trials", type=Path, help="Labeled trial list.")
    eval_.add_argument(
        "--report-dir", type=Path, help="Folder for metrics.csv and det.csv."
    )

    diagnose = subparsers.add_parser(
        "diagnose", parents=parents, help="Skewness and kurtosis of embeddings."
    )
    diagnose.add_argument("embeddings", type=Path, help="Embeddings.")
    diagnose.add_argument(
        "--normalizer", type=Path, help="Normalize before the diagnostics."
    )
    diagnose.add_argument("--report-dir", type=Path, help="Folder for the CSV reports.")

    subparsers.add_parser(
        "experiment",
        parents=parents,
        help="Run all systems and adaptations over the configured seeds.",
    )
    return parser


def run_subcommand(argv: list[str]) -> int:
    """Exit status: 0 success, 1 usage or configuration error, 2 data error."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code is None else int(exc.code)

    embnorm.setup_logging(args.log_file, args.stdout_log_level)
    try:
        config = config_lib.resolve_config(args)
        embnorm.embnorm(args.subcommand, args, config)
    except ConfigError as exc:
        LOGGER.error(str(exc))
        return EXIT_USAGE
    except EmbnormError as exc:
        LOGGER.error(str(exc))
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
