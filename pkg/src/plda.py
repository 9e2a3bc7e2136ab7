"""
Two-covariance PLDA: x = m + y + e with y ~ N(0, B) per speaker and
e ~ N(0, W) per utterance.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
from typing import ClassVar

import numpy as np

from common import InvalidInputError, NumericError, speaker_codes
import dataio
import numstats


LOGGER = logging.getLogger("embnorm")

DEFAULT_ITERATIONS = 10
DEFAULT_ALPHA = 0.5
EIGENVALUE_FLOOR = 1e-10
ADAPT_MODES = ("none", "plda-ret", "plda-uat")
INV_SQRT2 = 1.0 / np.sqrt(2.0)
LOG_2PI = np.log(2.0 * np.pi)


@dataio.register_model
@dataclasses.dataclass(frozen=True, eq=False)
class PldaModel:
    kind: ClassVar[str] = "plda"

    mean: np.ndarray
    between_cov: np.ndarray
    within_cov: np.ndarray
    adapt_mode: str = "none"

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        between = numstats.as_matrix(self.between_cov, "between_cov")
        within = numstats.as_matrix(self.within_cov, "within_cov")
        d = len(mean)
        if mean.ndim != 1 or between.shape != (d, d) or within.shape != (d, d):
            raise InvalidInputError(
                f"Inconsistent PLDA model: mean {mean.shape}, between "
                f"{between.shape}, within {within.shape}"
            )
        numstats.check_symmetric(between)
        numstats.check_symmetric(within)
        if self.adapt_mode not in ADAPT_MODES:
            raise InvalidInputError(f"Unknown PLDA adaptation mode {self.adapt_mode}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "between_cov", between)
        object.__setattr__(self, "within_cov", within)

    @property
    def dim(self) -> int:
        return len(self.mean)

    @property
    def input_dim(self) -> int:
        return self.dim

    @functools.cached_property
    def _scoring(self) -> dict[str, np.ndarray | float]:
        """Inverses and log-determinants used by the LLR."""
        within = numstats.Cholesky(self.within_cov)
        total = numstats.Cholesky(self.between_cov + self.within_cov)
        pair = numstats.Cholesky(self.within_cov + 2.0 * self.between_cov)
        return {
            "within_inv": within.inverse(),
            "total_inv": total.inverse(),
            "pair_inv": pair.inverse(),
            "constant": total.logdet - 0.5 * pair.logdet - 0.5 * within.logdet,
        }

    def to_fields(self) -> dict[str, dataio.FieldValue]:
        return {
            "mean": self.mean,
            "between_cov": self.between_cov,
            "within_cov": self.within_cov,
            "adapt_mode": self.adapt_mode,
        }

    @classmethod
    def from_fields(cls, fields):
        return cls(
            mean=fields["mean"],
            between_cov=fields["between_cov"],
            within_cov=fields["within_cov"],
            adapt_mode=fields["adapt_mode"],
        )


###########################################################
# statistics
###########################################################


@dataclasses.dataclass(frozen=True, eq=False)
class SpeakerStats:
    """Sufficient statistics of a labeled set, grouped by speaker."""

    counts: np.ndarray
    # one row per speaker
    means: np.ndarray
    # sum of the within-speaker scatter over all speakers
    within_scatter: np.ndarray
    global_mean: np.ndarray

    @property
    def n_speakers(self) -> int:
        return len(self.counts)

    @property
    def n_utterances(self) -> int:
        return int(self.counts.sum())


def speaker_stats(embeddings: dataio.EmbeddingSet) -> SpeakerStats:
    if not embeddings.is_labeled:
        raise InvalidInputError("PLDA needs speaker labels for every record")
    if not len(embeddings):
        raise InvalidInputError("PLDA needs data")
    data = embeddings.matrix()
    names, codes_list = speaker_codes(embeddings.speaker_ids)
    codes = np.asarray(codes_list)
    d = embeddings.dim
    counts = np.bincount(codes, minlength=len(names))
    means = np.zeros((len(names), d))
    np.add.at(means, codes, data)
    means /= counts[:, None]
    centered = data - means[codes]
    return SpeakerStats(
        counts=counts,
        means=means,
        within_scatter=numstats.symmetrize(centered.T @ centered),
        global_mean=data.mean(axis=0),
    )


def _repair(matrix: np.ndarray, name: str) -> np.ndarray:
    """Raise the eigenvalues of a covariance to the PLDA floor."""
    matrix = numstats.symmetrize(matrix)
    d = len(matrix)
    scale = float(np.trace(matrix)) / d
    floor = EIGENVALUE_FLOOR * (scale if scale > 0 else 1.0)
    try:
        numstats.Cholesky(matrix - floor * np.eye(d))
        return matrix
    except NumericError:
        pass
    repaired, _ = numstats.clip_eigenvalues(matrix, floor)
    LOGGER.warning(f"PLDA: {name} covariance was not positive definite, repaired")
    return repaired


###########################################################
# training
###########################################################


def initial_model(stats: SpeakerStats) -> PldaModel:
    """Covariances from the labeled scatter matrices."""
    within = stats.within_scatter / stats.n_utterances
    offsets = stats.means - stats.global_mean
    between = offsets.T @ offsets / stats.n_speakers
    return PldaModel(
        stats.global_mean,
        _repair(between, "between-speaker"),
        _repair(within, "within-speaker"),
    )


def _em_step(model: PldaModel, stats: SpeakerStats) -> PldaModel:
    d = model.dim
    between, within = model.between_cov, model.within_cov
    offsets = stats.means - model.mean
    new_between = np.zeros((d, d))
    # within scatter around the global mean
    new_within = stats.within_scatter + (offsets.T * stats.counts) @ offsets
    for count in np.unique(stats.counts):
        members = stats.counts == count
        gain = numstats.Cholesky(between + within / count).solve(between)
        posterior_means = offsets[members] @ gain
        posterior_cov = numstats.symmetrize(between - between @ gain)
        n_members = int(members.sum())
        second_moment = posterior_means.T @ posterior_means + n_members * posterior_cov
        cross = offsets[members].T @ posterior_means
        new_between += second_moment
        new_within += count * (second_moment - cross - cross.T)
    return PldaModel(
        model.mean,
        _repair(new_between / stats.n_speakers, "between-speaker"),
        _repair(new_within / stats.n_utterances, "within-speaker"),
    )


def fit_plda(
    embeddings: dataio.EmbeddingSet, iterations: int = DEFAULT_ITERATIONS
) -> PldaModel:
    """
    EM on the two-covariance model, starting from the scatter matrices.
    The mean stays at the global mean of the data.
    """
    if iterations < 0:
        raise InvalidInputError(f"Iterations must be non-negative, got {iterations}")
    stats = speaker_stats(embeddings)
    if stats.n_speakers < 2:
        raise InvalidInputError(
            f"PLDA needs at least 2 speakers, got {stats.n_speakers}"
        )
    if stats.counts.max() < 2:
        raise InvalidInputError(
            "PLDA needs a speaker with at least 2 utterances "
            "(within-speaker covariance is not identifiable)"
        )
    model = initial_model(stats)
    previous = loglik_from_stats(model, stats)
    LOGGER.debug(f"PLDA init: log-likelihood {previous:.6f}")
    for iteration in range(iterations):
        model = _em_step(model, stats)
        current = loglik_from_stats(model, stats)
        LOGGER.debug(f"PLDA iteration {iteration + 1}: log-likelihood {current:.6f}")
        if current < previous - 1e-8 * max(1.0, abs(previous)):
            LOGGER.warning(
                f"PLDA log-likelihood decreased at iteration {iteration + 1}: "
                f"{previous:.6f} -> {current:.6f}"
            )
        previous = current
    return model


def retrain(
    adaptation_set: dataio.EmbeddingSet, iterations: int = DEFAULT_ITERATIONS
) -> PldaModel:
    """PLDA-RET: train from scratch on the labeled adaptation data."""
    retrained = fit_plda(adaptation_set, iterations)
    return dataclasses.replace(retrained, adapt_mode="plda-ret")


def loglik_from_stats(model: PldaModel, stats: SpeakerStats) -> float:
    d = model.dim
    within = numstats.Cholesky(model.within_cov)
    offsets = stats.means - model.mean
    total = -0.5 * stats.n_utterances * d * LOG_2PI
    total -= 0.5 * (stats.n_utterances - stats.n_speakers) * within.logdet
    total -= 0.5 * float(np.trace(within.solve(stats.within_scatter)))
    for count in np.unique(stats.counts):
        members = offsets[stats.counts == count]
        factor = numstats.Cholesky(model.within_cov + count * model.between_cov)
        solved = factor.solve(members.T)
        total -= 0.5 * len(members) * factor.logdet
        total -= 0.5 * count * float(np.sum(members.T * solved))
    return float(total)


def loglik(model: PldaModel, embeddings: dataio.EmbeddingSet) -> float:
    """
    Marginal log-likelihood of a labeled set with every speaker latent
    integrated out.

    >>> model = PldaModel(np.zeros(1), np.zeros((1, 1)), np.eye(1))
    >>> data = dataio.EmbeddingSet.from_arrays(["u"], ["s"], [[0.0]])
    >>> round(loglik(model, data), 12) == round(-0.5 * float(LOG_2PI), 12)
    True
    """
    if embeddings.dim != model.dim:
        raise InvalidInputError(
            f"PLDA expects dimension {model.dim}, got {embeddings.dim}"
        )
    return loglik_from_stats(model, speaker_stats(embeddings))


###########################################################
# scoring
###########################################################


def _quadratic(vectors: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk,ik->i", vectors, matrix, vectors)


def score_pairs(model: PldaModel, enroll, test) -> np.ndarray:
    """
    Same-speaker vs different-speaker log-likelihood ratio for every row pair.
    Rows are scored independently of each other, symmetric in enroll/test.
    """
    enroll = np.atleast_2d(np.asarray(enroll, dtype=np.float64))
    test = np.atleast_2d(np.asarray(test, dtype=np.float64))
    if enroll.shape != test.shape or enroll.shape[1] != model.dim:
        raise InvalidInputError(
            f"PLDA expects pairs of dimension {model.dim}, got {enroll.shape} "
            f"and {test.shape}"
        )
    scoring = model._scoring  # pylint: disable=protected-access
    enroll_centered = enroll - model.mean
    test_centered = test - model.mean
    sums = (enroll_centered + test_centered) * INV_SQRT2
    differences = (enroll_centered - test_centered) * INV_SQRT2
    marginal = _quadratic(enroll_centered, scoring["total_inv"]) + _quadratic(
        test_centered, scoring["total_inv"]
    )
    return (
        scoring["constant"]
        - 0.5 * _quadratic(sums, scoring["pair_inv"])
        - 0.5 * _quadratic(differences, scoring["within_inv"])
        + 0.5 * marginal
    )


def score_llr(model: PldaModel, enroll, test) -> float:
    """
    >>> model = PldaModel(np.zeros(1), np.eye(1), np.eye(1))
    >>> round(score_llr(model, [0.0], [0.0]), 5)
    0.14384
    >>> round(score_llr(model, [1.0], [1.0]), 5)
    0.31051
    """
    enroll = np.asarray(enroll, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if enroll.ndim != 1 or test.ndim != 1:
        raise InvalidInputError("score_llr scores a single pair of vectors")
    return float(score_pairs(model, enroll[None, :], test[None, :])[0])


###########################################################
# adaptation
###########################################################


def adapt_uat(
    model: PldaModel,
    ood_unlabeled: dataio.EmbeddingSet,
    alpha_within: float = DEFAULT_ALPHA,
    alpha_between: float = DEFAULT_ALPHA,
) -> PldaModel:
    """
    PLDA-UAT: distribute the PSD part of the excess of the OOD total
    covariance over the model covariances, and move the mean to the OOD mean.
    Labels of the adaptation set are ignored.
    """
    for name, alpha in (
        ("alpha_within", alpha_within),
        ("alpha_between", alpha_between),
    ):
        if not 0.0 <= alpha <= 1.0:
            raise InvalidInputError(f"{name} must be in [0, 1], got {alpha}")
    if not len(ood_unlabeled):
        raise InvalidInputError("PLDA adaptation needs data")
    if ood_unlabeled.dim != model.dim:
        raise InvalidInputError(
            f"PLDA expects dimension {model.dim}, got {ood_unlabeled.dim}"
        )
    data = ood_unlabeled.matrix()
    n, d = data.shape
    mean = data.mean(axis=0)
    total = numstats.covariance(data, mean)
    if n < d + 1:
        LOGGER.warning(
            f"PLDA-UAT: {n} adaptation samples for dimension {d}, "
            "the total covariance is rank deficient"
        )
    shrinkage = d / (d + n)
    total = (1.0 - shrinkage) * total + shrinkage * np.diag(np.diag(total))
    LOGGER.debug(f"PLDA-UAT: covariance shrinkage {shrinkage:.4f}")

    excess, _ = numstats.clip_eigenvalues(
        numstats.symmetrize(total - (model.between_cov + model.within_cov)), 0.0
    )
    between, within = model.between_cov, model.within_cov
    if alpha_within > 0:
        within = numstats.symmetrize(within + alpha_within * excess)
    if alpha_between > 0:
        between = numstats.symmetrize(between + alpha_between * excess)
    return PldaModel(mean, between, within, adapt_mode="plda-uat")
