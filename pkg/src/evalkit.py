"""Trial scoring, EER and DET points, Gaussianity diagnostics."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from common import InvalidInputError
import dataio
import numstats
import plda


LOGGER = logging.getLogger("embnorm")


@dataclasses.dataclass(frozen=True)
class DetPoint:
    threshold: float
    # false accept rate
    far: float
    # miss rate
    frr: float


@dataclasses.dataclass(frozen=True)
class ScoreReport:
    scores: list[dataio.Score]
    # None if the trials carry no labels
    eer: float | None = None
    eer_threshold: float | None = None
    det_points: list[DetPoint] = dataclasses.field(default_factory=list)

    @property
    def target_scores(self) -> list[float]:
        return [score.score for score in self.scores if score.is_target is True]

    @property
    def nontarget_scores(self) -> list[float]:
        return [score.score for score in self.scores if score.is_target is False]

    def metrics(self) -> dict[str, float | int | str]:
        return {
            "trials": len(self.scores),
            "targets": len(self.target_scores),
            "nontargets": len(self.nontarget_scores),
            "eer": "" if self.eer is None else self.eer,
            "eer_threshold": "" if self.eer_threshold is None else self.eer_threshold,
        }


###########################################################
# error rates
###########################################################


def det_curve(target_scores, nontarget_scores) -> list[DetPoint]:
    """
    Operating points at every distinct score, plus one threshold above the
    maximum where everything is rejected. Accept means score >= threshold.
    """
    targets = np.sort(np.asarray(target_scores, dtype=np.float64))
    nontargets = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    if not len(targets) or not len(nontargets):
        raise InvalidInputError("Need both target and nontarget scores")
    if not np.all(np.isfinite(targets)) or not np.all(np.isfinite(nontargets)):
        raise InvalidInputError("Scores must be finite")
    distinct = np.unique(np.concatenate([targets, nontargets]))
    thresholds = np.append(distinct, np.nextafter(distinct[-1], np.inf))
    accepted = len(nontargets) - np.searchsorted(nontargets, thresholds, side="left")
    far = accepted / len(nontargets)
    frr = np.searchsorted(targets, thresholds, side="left") / len(targets)
    return [
        DetPoint(float(threshold), float(fa), float(miss))
        for threshold, fa, miss in zip(thresholds, far, frr)
    ]


def compute_eer(target_scores, nontarget_scores) -> tuple[float, float]:
    """
    Equal error rate and its threshold. Between the two operating points that
    straddle the FAR/FRR crossing, both rates are interpolated linearly.

    >>> compute_eer([2, 3], [-1, 0])
    (0.0, 2.0)
    >>> compute_eer([0, 1], [0, 1])[0]
    0.5
    >>> round(compute_eer([0.6, 0.4, 0.8], [0.5, 0.3, 0.2])[0], 12)
    0.333333333333
    """
    points = det_curve(target_scores, nontarget_scores)
    # FRR rises and FAR falls with the threshold, the first index always exists
    index = next(i for i, point in enumerate(points) if point.frr >= point.far)
    current = points[index]
    if current.frr == current.far:
        return current.frr, current.threshold
    previous = points[index - 1]
    # difference d = frr - far goes from negative to non-negative
    d_previous = previous.frr - previous.far
    d_current = current.frr - current.far
    weight = -d_previous / (d_current - d_previous)
    eer = previous.far + weight * (current.far - previous.far)
    threshold = previous.threshold + weight * (current.threshold - previous.threshold)
    return float(eer), float(threshold)


###########################################################
# scoring
###########################################################


def apply_normalizer(normalizer_model, embeddings: dataio.EmbeddingSet):
    return embeddings if normalizer_model is None else normalizer_model.transform(
        embeddings
    )


def _side_vectors(
    ids: list[str],
    embeddings: dataio.EmbeddingSet,
    index: dict[str, int],
    enrollment: dict[str, list[str]] | None,
) -> np.ndarray:
    """Look up vectors, averaging over the utterances of enrollment models."""
    data = embeddings.matrix()
    vectors = np.zeros((len(ids), embeddings.dim))
    for row, id_ in enumerate(ids):
        utterances = (enrollment or {}).get(id_, [id_])
        for utterance in utterances:
            if utterance not in index:
                raise InvalidInputError(f'Unknown utterance id "{utterance}"')
        if len(utterances) == 1:
            vectors[row] = data[index[utterances[0]]]
        else:
            vectors[row] = data[[index[utterance] for utterance in utterances]].mean(
                axis=0
            )
    return vectors


def score_trials(
    normalizer_model,
    plda_model: plda.PldaModel,
    embeddings: dataio.EmbeddingSet,
    trials: list[dataio.Trial],
    enrollment: dict[str, list[str]] | None = None,
) -> ScoreReport:
    """
    Normalize the embeddings (no normalizer means raw vectors), score every
    trial by the PLDA log-likelihood ratio and compute the EER if the trials
    are labeled. Enrollment ids listed in ``enrollment`` are scored against the
    mean of their normalized utterance vectors.
    """
    if not trials:
        return ScoreReport([])
    normalized = apply_normalizer(normalizer_model, embeddings)
    if normalized.dim != plda_model.dim:
        raise InvalidInputError(
            f"Normalized dimension {normalized.dim} does not match the PLDA "
            f"dimension {plda_model.dim}"
        )
    index = normalized.index()
    enroll = _side_vectors(
        [trial.enroll_utterance_id for trial in trials], normalized, index, enrollment
    )
    test = _side_vectors(
        [trial.test_utterance_id for trial in trials], normalized, index, None
    )
    values = plda.score_pairs(plda_model, enroll, test)
    scores = [
        dataio.Score(
            trial.enroll_utterance_id,
            trial.test_utterance_id,
            float(value),
            trial.is_target,
        )
        for trial, value in zip(trials, values)
    ]
    return report_from_scores(scores)


def report_from_scores(scores: list[dataio.Score]) -> ScoreReport:
    report = ScoreReport(scores)
    if not report.target_scores or not report.nontarget_scores:
        if any(score.is_target is not None for score in scores):
            LOGGER.warning("EER needs both target and nontarget trials")
        return report
    eer, threshold = compute_eer(report.target_scores, report.nontarget_scores)
    return dataclasses.replace(
        report,
        eer=eer,
        eer_threshold=threshold,
        det_points=det_curve(report.target_scores, report.nontarget_scores),
    )


###########################################################
# gaussianity
###########################################################


@dataclasses.dataclass(frozen=True, eq=False)
class GaussianityReport:
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    degenerate: np.ndarray
    # means over dimensions
    skewness_mean: float
    kurtosis_mean: float
    # means of the absolute per-dimension values
    abs_skewness_mean: float
    abs_kurtosis_mean: float
    # all entries pooled into one scalar distribution
    pooled_skewness: float
    pooled_kurtosis: float

    def metrics(self) -> dict[str, float]:
        return {
            "skewness": self.skewness_mean,
            "kurtosis": self.kurtosis_mean,
            "abs_skewness": self.abs_skewness_mean,
            "abs_kurtosis": self.abs_kurtosis_mean,
            "pooled_skewness": self.pooled_skewness,
            "pooled_kurtosis": self.pooled_kurtosis,
        }


def gaussianity_report(embeddings: dataio.EmbeddingSet) -> GaussianityReport:
    """Skewness and excess kurtosis over utterances, per dimension and pooled."""
    if len(embeddings) < 3:
        raise InvalidInputError(
            f"Gaussianity diagnostics need at least 3 vectors, got {len(embeddings)}"
        )
    data = embeddings.matrix()
    summary = numstats.moments(data)
    if np.any(summary.degenerate):
        LOGGER.warning(
            f"Constant dimensions {np.flatnonzero(summary.degenerate).tolist()} "
            "contribute 0 to the aggregates"
        )
    pooled = numstats.moments(data.reshape(-1))
    return GaussianityReport(
        skewness=summary.skewness,
        excess_kurtosis=summary.excess_kurtosis,
        degenerate=summary.degenerate,
        skewness_mean=float(np.mean(summary.skewness)),
        kurtosis_mean=float(np.mean(summary.excess_kurtosis)),
        abs_skewness_mean=float(np.mean(np.abs(summary.skewness))),
        abs_kurtosis_mean=float(np.mean(np.abs(summary.excess_kurtosis))),
        pooled_skewness=float(pooled.skewness[0]),
        pooled_kurtosis=float(pooled.excess_kurtosis[0]),
    )
