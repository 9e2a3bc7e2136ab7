"""Embedding normalization and PLDA back-end for speaker verification."""

import logging
from pathlib import Path

from rich import print  # pylint: disable=redefined-builtin
from rich.logging import RichHandler
from rich.table import Table

from common import InvalidInputError
import config as config_lib
import dataio
import evalkit
import experiment
import normalizer
import plda


LOGGER = logging.getLogger("embnorm")


def setup_logging(log_to_file: bool, stdout_log_level: str):
    LOGGER.handlers.clear()

    # setup the root logger, but don't propagate. We will log use our own
    # log handler. See: https://stackoverflow.com/a/71365918/7410886
    logging.basicConfig(level=logging.DEBUG)
    LOGGER.propagate = False
    LOGGER.setLevel(logging.DEBUG)

    if log_to_file:
        # log to file
        file_handler_formatter = logging.Formatter(
            "%(asctime)s [%(levelname)-5.5s]  %(message)s"
        )
        file_handler = logging.FileHandler("embnorm.log", mode="w")
        file_handler.setFormatter(file_handler_formatter)
        file_handler.setLevel(logging.DEBUG)
        LOGGER.addHandler(file_handler)

    # log to stdout
    console_handler_formatter = logging.Formatter("%(message)s")
    console_handler = RichHandler(markup=False, show_path=False)
    console_handler.setFormatter(console_handler_formatter)
    console_handler.setLevel(stdout_log_level)
    LOGGER.addHandler(console_handler)


def get_embnorm_version():
    version_file = Path(__file__).parent / ".version"
    return (
        version_file.read_text().lstrip("v").rstrip()
        if version_file.is_file()
        else "dev"
    )


def read_embeddings(path: Path) -> dataio.EmbeddingSet:
    return dataio.read_embeddings(path, dataio.guess_format(path))


def write_embeddings(embeddings: dataio.EmbeddingSet, path: Path):
    dataio.write_embeddings(embeddings, path, dataio.guess_format(path))


def normalizer_kind(model) -> str:
    """The normalizer plugin that adapts a loaded model."""
    match model.kind:
        case "identity":
            return "none"
        case "vae":
            return "cvae" if model.cohesive_weight > 0 else "vae"
        case "pca" | "lda":
            return model.kind
        case _:
            raise InvalidInputError(f"{model.kind} model is not a normalizer")


def load_normalizer(path: Path | None, length_norm: bool):
    if path is None:
        return None
    model = dataio.load_model(path)
    if model.kind == "plda":
        raise InvalidInputError(f"{path} holds a PLDA model, not a normalizer")
    return normalizer.with_length_norm(model, length_norm)


###########################################################
# subcommands
###########################################################


def gen(_args, config: config_lib.PipelineConfig):
    """Synthetic IND train/test and OOD adaptation/test sets plus trial lists."""
    output_dir = Path(config.output_dir)
    data = experiment.generate_replica(config, config.seed)
    suffix = ".evf" if config.embedding_format == "binary" else ".csv"
    for name in ("ind_train", "ind_test", "ood_adapt", "ood_test"):
        dataio.write_embeddings(
            getattr(data, name), output_dir / f"{name}{suffix}", config.embedding_format
        )
    dataio.write_trials(data.ind_trials, output_dir / "ind_test.trials")
    dataio.write_trials(data.ood_trials, output_dir / "ood_test.trials")
    config_lib.write_resolved(config, output_dir)
    LOGGER.info(f"Synthetic data written to {output_dir}")


def fit_norm(args, config: config_lib.PipelineConfig):
    embeddings = read_embeddings(args.embeddings)
    norm = normalizer.get_normalizer(args.kind, config)
    LOGGER.info(f"Fitting {norm.system_name} on {len(embeddings)} embeddings")
    model = norm.fit(embeddings)
    dataio.save_model(model, args.output)
    if model.kind == "vae":
        loss_log = args.output.with_suffix(".loss.csv")
        dataio.write_loss_log(model.loss_history, loss_log)
        LOGGER.info(f"Training loss written to {loss_log}")
    config_lib.write_resolved(config, args.output.parent)


def apply_norm(args, config: config_lib.PipelineConfig):
    model = load_normalizer(args.model, config.length_norm)
    embeddings = read_embeddings(args.embeddings)
    write_embeddings(model.transform(embeddings), args.output)
    LOGGER.info(f"Normalized {len(embeddings)} embeddings to {args.output}")


def fit_plda(args, config: config_lib.PipelineConfig):
    embeddings = read_embeddings(args.embeddings)
    LOGGER.info(
        f"Fitting PLDA on {len(embeddings)} embeddings of "
        f"{len(embeddings.speakers)} speakers"
    )
    dataio.save_model(plda.fit_plda(embeddings, config.plda_iterations), args.output)
    config_lib.write_resolved(config, args.output.parent)


def adapt(args, config: config_lib.PipelineConfig):
    adaptation_set = read_embeddings(args.embeddings)
    if args.mode != "plda-ret" and args.model is None:
        raise InvalidInputError(f"Adaptation mode {args.mode} needs --model")
    LOGGER.info(f"Adapting by {args.mode} on {len(adaptation_set)} embeddings")
    match args.mode:
        case "plda-ret":
            model = plda.retrain(adaptation_set, config.plda_iterations)
        case "plda-uat":
            original = dataio.load_model(args.model)
            if original.kind != "plda":
                raise InvalidInputError(f"{original.kind} model is not a PLDA model")
            model = plda.adapt_uat(
                original,
                adaptation_set.without_labels(),
                config.alpha_within,
                config.alpha_between,
            )
        case _:  # norm-adapt
            original = dataio.load_model(args.model)
            norm = normalizer.get_normalizer(normalizer_kind(original), config)
            model = norm.adapt(original, adaptation_set)
    dataio.save_model(model, args.output)
    config_lib.write_resolved(config, args.output.parent)


def score(args, config: config_lib.PipelineConfig):
    plda_model = dataio.load_model(args.plda)
    if plda_model.kind != "plda":
        raise InvalidInputError(f"{plda_model.kind} model is not a PLDA model")
    enrollment = None
    if args.enrollment is not None:
        enrollment = dataio.read_enrollments(args.enrollment)
    report = evalkit.score_trials(
        load_normalizer(args.normalizer, config.length_norm),
        plda_model,
        read_embeddings(args.embeddings),
        dataio.read_trials(args.trials),
        enrollment,
    )
    dataio.write_scores(report.scores, args.output)
    LOGGER.info(f"Scored {len(report.scores)} trials to {args.output}")
    if report.eer is not None:
        print(f"EER {report.eer}")


def eval_scores(args, _config):
    scores = dataio.read_scores(args.scores)
    if args.trials is not None:
        labels = {
            (trial.enroll_utterance_id, trial.test_utterance_id): trial.is_target
            for trial in dataio.read_trials(args.trials)
        }
        scores = [
            dataio.Score(
                s.enroll_utterance_id,
                s.test_utterance_id,
                s.score,
                labels.get((s.enroll_utterance_id, s.test_utterance_id), s.is_target),
            )
            for s in scores
        ]
    report = evalkit.report_from_scores(scores)
    if report.eer is None:
        raise InvalidInputError(
            "EER needs target and nontarget labels, from the score file or --trials"
        )
    print(f"EER {report.eer}")
    print(f"Threshold {report.eer_threshold}")
    if args.report_dir is not None:
        dataio.write_metrics(report.metrics(), args.report_dir / "metrics.csv")
        dataio.write_det(report.det_points, args.report_dir / "det.csv")
        LOGGER.info(f"Metrics and DET points written to {args.report_dir}")


def diagnose(args, config: config_lib.PipelineConfig):
    embeddings = read_embeddings(args.embeddings)
    model = load_normalizer(args.normalizer, config.length_norm)
    report = evalkit.gaussianity_report(evalkit.apply_normalizer(model, embeddings))

    table = Table(title="Gaussianity")
    table.add_column("Statistic")
    table.add_column("Value", justify="right")
    for name, value in report.metrics().items():
        table.add_row(name, f"{value:.4f}")
    print(table)

    if args.report_dir is not None:
        dataio.write_metrics(report.metrics(), args.report_dir / "gaussianity.csv")
        dataio.write_csv(
            args.report_dir / "gaussianity_dimensions.csv",
            ["dimension", "skewness", "excess_kurtosis", "degenerate"],
            [
                [dim, float(skew), float(kurt), int(flag)]
                for dim, (skew, kurt, flag) in enumerate(
                    zip(report.skewness, report.excess_kurtosis, report.degenerate)
                )
            ],
        )
        LOGGER.info(f"Gaussianity report written to {args.report_dir}")


def run_experiment(_args, config: config_lib.PipelineConfig):
    experiment.run_experiment(config)


SUBCOMMANDS = {
    "gen": gen,
    "fit-norm": fit_norm,
    "apply-norm": apply_norm,
    "fit-plda": fit_plda,
    "adapt": adapt,
    "score": score,
    "eval": eval_scores,
    "diagnose": diagnose,
    "experiment": run_experiment,
}


def embnorm(subcommand: str, args, config: config_lib.PipelineConfig):
    LOGGER.info(f"embnorm {get_embnorm_version()}: {subcommand}")
    SUBCOMMANDS[subcommand](args, config)
    LOGGER.info(f"Finished {subcommand}")
