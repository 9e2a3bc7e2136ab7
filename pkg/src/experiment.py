"""
Experiment runner: train every normalizer on in-domain data, evaluate in and
out of domain, adapt, and summarize EER and Gaussianity over seeds.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Any

import numpy as np
from rich.console import Console
from rich.table import Table

from common import InvalidInputError, MarkdownTable, create_progress_bar
import config as config_lib
import dataio
import evalkit
import normalizer
import plda
import synthgen


LOGGER = logging.getLogger("embnorm")

IND_ROW = "IND"
ROW_NAMES = {
    "none": "PLDA",
    "plda-ret": "PLDA-RET",
    "plda-uat": "PLDA-UAT",
    "norm-adapt": "Norm-Adapt",
    "norm-adapt+plda-ret": "Norm-Adapt+PLDA-RET",
}
GAUSSIANITY_ROWS = ("Raw", "Normalized", "Adapted")


@dataclasses.dataclass
class ReplicaData:
    """The synthetic sets of one seed."""

    seed: int
    ind_train: dataio.EmbeddingSet
    ind_test: dataio.EmbeddingSet
    ood_adapt: dataio.EmbeddingSet
    ood_test: dataio.EmbeddingSet
    ind_trials: list[dataio.Trial]
    ood_trials: list[dataio.Trial]


@dataclasses.dataclass
class ExperimentResult:
    seeds: list[int]
    systems: list[str]
    # (row, system) -> EER per seed
    eers: dict[tuple[str, str], list[float]] = dataclasses.field(default_factory=dict)
    # (row, system, statistic) -> value per seed
    gaussianity: dict[tuple[str, str, str], list[float]] = dataclasses.field(
        default_factory=dict
    )

    @property
    def eer_rows(self) -> list[str]:
        rows = [IND_ROW] + list(ROW_NAMES.values())
        return [row for row in rows if any((row, s) in self.eers for s in self.systems)]

    def median_eer(self, row: str, system: str) -> float:
        return float(np.median(self.eers[(row, system)]))


def summarize(values: list[float]) -> tuple[float, float, float]:
    """
    Median and interquartile range.

    >>> summarize([1.0, 2.0, 3.0, 4.0, 5.0])
    (3.0, 2.0, 4.0)
    """
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return float(median), float(q1), float(q3)


###########################################################
# data
###########################################################


def domain_spec(config, n_speakers: int, seed: int, prefix: str, shift=None):
    return synthgen.DomainSpec(
        dim=config.dim,
        n_speakers=n_speakers,
        utts_per_speaker=config.utts_per_speaker,
        between_scale=config.between_scale,
        speaker_rank=config.speaker_rank,
        within_scale=config.within_scale,
        warp_strength=config.warp_strength,
        shift=synthgen.DomainShift() if shift is None else shift,
        heavy_tail_dof=config.heavy_tail_dof,
        seed=seed,
        speaker_prefix=prefix,
    )


def generate_replica(config, seed: int) -> ReplicaData:
    """In-domain train and test sets and a shifted out-of-domain set."""
    ind_train = synthgen.generate_domain(
        domain_spec(config, config.ind_speakers, 3 * seed, "ind-")
    )
    ind_test = synthgen.generate_domain(
        domain_spec(config, config.ind_test_speakers, 3 * seed + 1, "indtest-")
    )
    shift = synthgen.DomainShift.random(config.dim, 3 * seed + 2, config.shift_strength)
    ood = synthgen.generate_domain(
        domain_spec(config, config.ood_speakers, 3 * seed + 2, "ood-", shift)
    )
    ood_adapt, ood_test = synthgen.split_by_speaker(
        ood,
        synthgen.SplitSpec(config.adaptation_speakers, config.test_speakers),
        seed,
    )
    return ReplicaData(
        seed=seed,
        ind_train=ind_train,
        ind_test=ind_test,
        ood_adapt=ood_adapt,
        ood_test=ood_test,
        ind_trials=synthgen.make_trials(
            ind_test, config.n_target, config.n_nontarget, seed
        ),
        ood_trials=synthgen.make_trials(
            ood_test, config.n_target, config.n_nontarget, seed
        ),
    )


def check_disjoint(train: dataio.EmbeddingSet, test: dataio.EmbeddingSet):
    overlap = set(train.speakers) & set(test.speakers)
    if overlap:
        raise InvalidInputError(
            f"Training and test data share speakers: {sorted(overlap)[:5]}"
        )


###########################################################
# one system
###########################################################


def _eer(model, plda_model, embeddings, trials) -> float:
    report = evalkit.score_trials(model, plda_model, embeddings, trials)
    if report.eer is None:
        raise InvalidInputError("Trials need target and nontarget labels")
    return report.eer


def run_system(config, kind: str, data: ReplicaData) -> dict:
    """EER per row and Gaussianity of the OOD test vectors for one system."""
    for train_set in (data.ind_train, data.ood_adapt):
        check_disjoint(train_set, data.ood_test)
    check_disjoint(data.ind_train, data.ind_test)

    norm = normalizer.get_normalizer(kind, config)
    base_model = norm.fit(data.ind_train)
    model = normalizer.with_length_norm(base_model, config.length_norm)
    ind_plda = plda.fit_plda(model.transform(data.ind_train), config.plda_iterations)

    eers = {IND_ROW: _eer(model, ind_plda, data.ind_test, data.ind_trials)}
    adaptations = config.adaptations
    if "none" in adaptations:
        eers[ROW_NAMES["none"]] = _eer(model, ind_plda, data.ood_test, data.ood_trials)
    if "plda-ret" in adaptations:
        retrained = plda.retrain(
            model.transform(data.ood_adapt), config.plda_iterations
        )
        eers[ROW_NAMES["plda-ret"]] = _eer(
            model, retrained, data.ood_test, data.ood_trials
        )
    if "plda-uat" in adaptations:
        adapted_plda = plda.adapt_uat(
            ind_plda,
            model.transform(data.ood_adapt).without_labels(),
            config.alpha_within,
            config.alpha_between,
        )
        eers[ROW_NAMES["plda-uat"]] = _eer(
            model, adapted_plda, data.ood_test, data.ood_trials
        )

    adapted_model: Any = None
    if {"norm-adapt", "norm-adapt+plda-ret"} & set(adaptations):
        adapted_model = normalizer.with_length_norm(
            norm.adapt(base_model, data.ood_adapt), config.length_norm
        )
    if "norm-adapt" in adaptations:
        refit = plda.fit_plda(
            adapted_model.transform(data.ind_train), config.plda_iterations
        )
        eers[ROW_NAMES["norm-adapt"]] = _eer(
            adapted_model, refit, data.ood_test, data.ood_trials
        )
    if "norm-adapt+plda-ret" in adaptations:
        retrained = plda.retrain(
            adapted_model.transform(data.ood_adapt), config.plda_iterations
        )
        eers[ROW_NAMES["norm-adapt+plda-ret"]] = _eer(
            adapted_model, retrained, data.ood_test, data.ood_trials
        )

    reports = {
        "Raw": evalkit.gaussianity_report(data.ood_test),
        "Normalized": evalkit.gaussianity_report(model.transform(data.ood_test)),
    }
    if adapted_model is not None:
        reports["Adapted"] = evalkit.gaussianity_report(
            adapted_model.transform(data.ood_test)
        )
    return {"eers": eers, "gaussianity": reports}


###########################################################
# reports
###########################################################


def _cell(values: list[float], scale: float = 1.0) -> str:
    median, q1, q3 = summarize(values)
    return f"{scale * median:.2f} ({scale * (q3 - q1):.2f})"


def results_rows(result: ExperimentResult) -> list[list]:
    seeds = " ".join(map(str, result.seeds))
    rows = []
    for (row, system), values in result.eers.items():
        median, q1, q3 = summarize(values)
        rows.append(["eer", row, system, median, q1, q3, q3 - q1, seeds])
    for (row, system, statistic), values in result.gaussianity.items():
        median, q1, q3 = summarize(values)
        rows.append([statistic, row, system, median, q1, q3, q3 - q1, seeds])
    return rows


def replica_rows(result: ExperimentResult) -> list[list]:
    rows = []
    for (row, system), values in result.eers.items():
        rows.extend(
            ["eer", row, system, seed, value]
            for seed, value in zip(result.seeds, values)
        )
    for (row, system, statistic), values in result.gaussianity.items():
        rows.extend(
            [statistic, row, system, seed, value]
            for seed, value in zip(result.seeds, values)
        )
    return rows


def markdown_report(result: ExperimentResult) -> str:
    names = [normalizer.SYSTEM_NAMES.get(s, s) for s in result.systems]
    eer_table = MarkdownTable(
        [["System"] + names],
        [
            [row] + [_cell(result.eers[(row, s)], 100.0) for s in result.systems]
            for row in result.eer_rows
        ],
        caption="EER (%), median (IQR) over seeds " + ", ".join(map(str, result.seeds)),
    )
    gaussianity_rows = []
    for row in GAUSSIANITY_ROWS:
        for statistic in ("abs_skewness", "abs_kurtosis"):
            if (row, result.systems[0], statistic) not in result.gaussianity:
                continue
            gaussianity_rows.append(
                [f"{row} {statistic}"]
                + [
                    _cell(result.gaussianity[(row, s, statistic)])
                    for s in result.systems
                ]
            )
    gaussianity_table = MarkdownTable(
        [["OOD test vectors"] + names],
        gaussianity_rows,
        caption="Mean absolute skewness and excess kurtosis, median (IQR)",
    )
    return eer_table.create_md() + "\n\n" + gaussianity_table.create_md() + "\n"


def print_summary(result: ExperimentResult):
    table = Table(title="EER (%), median over seeds")
    table.add_column("System")
    for system in result.systems:
        table.add_column(normalizer.SYSTEM_NAMES.get(system, system), justify="right")
    for row in result.eer_rows:
        table.add_row(
            row,
            *[f"{100 * result.median_eer(row, s):.2f}" for s in result.systems],
        )
    Console().print(table)


def write_reports(result: ExperimentResult, output_dir: Path):
    header = ["table", "row", "system", "median", "q1", "q3", "iqr", "seeds"]
    dataio.write_csv(output_dir / "results.csv", header, results_rows(result))
    dataio.write_csv(
        output_dir / "replicas.csv",
        ["table", "row", "system", "seed", "value"],
        replica_rows(result),
    )
    dataio.write_text(output_dir / "results.md", markdown_report(result))


###########################################################
# driver
###########################################################


def run_experiment(config, output_dir: Path | None = None) -> ExperimentResult:
    output_dir = Path(config.output_dir) if output_dir is None else output_dir
    config_lib.write_resolved(config, output_dir)
    if len(config.seeds) < 5:
        LOGGER.warning(
            f"Only {len(config.seeds)} seed(s): desk-scale EERs are noisy, "
            "medians over at least 5 seeds are recommended"
        )
    systems = list(config.normalizers)
    result = ExperimentResult(list(config.seeds), systems)
    progress_bar = create_progress_bar(
        len(config.seeds) * len(systems), "Systems", config.no_progress_bars
    )
    for seed in config.seeds:
        seed_config = dataclasses.replace(config, seed=seed)
        data = generate_replica(seed_config, seed)
        for system in systems:
            LOGGER.info(
                f"Seed {seed}: {normalizer.SYSTEM_NAMES.get(system, system)}"
            )
            cell = run_system(seed_config, system, data)
            for row, eer in cell["eers"].items():
                result.eers.setdefault((row, system), []).append(eer)
            for row, report in cell["gaussianity"].items():
                for statistic, value in report.metrics().items():
                    result.gaussianity.setdefault((row, system, statistic), []).append(
                        value
                    )
            progress_bar.update()
    progress_bar.close()

    write_reports(result, output_dir)
    print_summary(result)
    LOGGER.info(f"Results written to {output_dir}")
    return result
