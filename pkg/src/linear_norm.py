"""Linear normalization models: PCA and LDA."""

from __future__ import annotations

import dataclasses
import logging
from typing import ClassVar

import numpy as np

from common import InvalidInputError, speaker_codes
import dataio
import numstats


LOGGER = logging.getLogger("embnorm")

DEFAULT_DIM = 150
DESK_DIM = 8
LDA_RIDGE = 1e-6
DEGENERATE_EIGENVALUE = 1e-10


@dataclasses.dataclass(frozen=True, eq=False)
class LinearModel:
    """Affine map x -> projection·(x - mean)."""

    kind: ClassVar[str] = ""

    mean: np.ndarray
    # k×d, one output direction per row
    projection: np.ndarray
    # eigenvalue of every kept direction
    eigenvalues: np.ndarray
    train_seed: int = 0

    def __post_init__(self):
        k, d = self.projection.shape
        if len(self.mean) != d or len(self.eigenvalues) != k:
            raise InvalidInputError(
                f"Inconsistent {self.kind} model: mean {len(self.mean)}, "
                f"projection {k}×{d}, eigenvalues {len(self.eigenvalues)}"
            )

    @property
    def input_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def output_dim(self) -> int:
        return self.projection.shape[0]

    def transform(self, embeddings: dataio.EmbeddingSet) -> dataio.EmbeddingSet:
        return transform(self, embeddings)

    def to_fields(self) -> dict[str, dataio.FieldValue]:
        return {
            "mean": self.mean,
            "projection": self.projection,
            "eigenvalues": self.eigenvalues,
            "train_seed": self.train_seed,
        }

    @classmethod
    def from_fields(cls, fields):
        return cls(
            mean=fields["mean"],
            projection=fields["projection"],
            eigenvalues=fields["eigenvalues"],
            train_seed=fields["train_seed"],
        )


@dataio.register_model
class PcaModel(LinearModel):
    kind = "pca"


@dataio.register_model
class LdaModel(LinearModel):
    kind = "lda"

    @property
    def degenerate(self) -> bool:
        """True if the classes are not separable along any direction."""
        return bool(np.max(self.eigenvalues, initial=0.0) <= DEGENERATE_EIGENVALUE)


def fit_pca(embeddings: dataio.EmbeddingSet, k: int) -> PcaModel:
    """Rows of the projection are the top-k eigenvectors of the total covariance."""
    d = embeddings.dim
    if not 1 <= k <= d:
        raise InvalidInputError(f"PCA dimension must be in [1, {d}], got {k}")
    if len(embeddings) < k + 1:
        raise InvalidInputError(
            f"PCA with k={k} needs at least {k + 1} records, got {len(embeddings)}"
        )
    data = embeddings.matrix()
    mean = data.mean(axis=0)
    eigenvalues, eigenvectors = numstats.sym_eig(numstats.covariance(data, mean))
    LOGGER.debug(
        f"PCA keeps {eigenvalues[:k].sum() / max(eigenvalues.sum(), 1e-300):.1%} "
        "of the total variance"
    )
    return PcaModel(mean, eigenvectors[:, :k].T.copy(), eigenvalues[:k].copy())


def scatter_matrices(
    embeddings: dataio.EmbeddingSet,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Global mean, within-class and between-class scatter, both divided by N."""
    data = embeddings.matrix()
    _, codes_list = speaker_codes(embeddings.speaker_ids)
    codes = np.asarray(codes_list)
    n, d = data.shape
    mean = data.mean(axis=0)
    within = np.zeros((d, d))
    between = np.zeros((d, d))
    for code in range(codes.max(initial=-1) + 1):
        members = data[codes == code]
        class_mean = members.mean(axis=0)
        centered = members - class_mean
        within += centered.T @ centered
        offset = class_mean - mean
        between += len(members) * np.outer(offset, offset)
    return mean, numstats.symmetrize(within / n), numstats.symmetrize(between / n)


def fit_lda(embeddings: dataio.EmbeddingSet, k: int) -> LdaModel:
    """
    Whiten the ridge-regularized within-class scatter, then take the top-k
    eigenvectors of the whitened between-class scatter.
    """
    if not embeddings.is_labeled:
        raise InvalidInputError("LDA needs speaker labels for every record")
    speakers = embeddings.speakers
    if len(speakers) < 2:
        raise InvalidInputError(f"LDA needs at least 2 classes, got {len(speakers)}")
    counts = {speaker: 0 for speaker in speakers}
    for speaker in embeddings.speaker_ids:
        counts[speaker] += 1
    if (smallest := min(counts.values())) < 2:
        raise InvalidInputError(f"Every LDA class needs 2 samples, got {smallest}")
    d = embeddings.dim
    if not 1 <= k < len(speakers) or k > d:
        raise InvalidInputError(
            f"LDA dimension must be in [1, min({d}, {len(speakers) - 1})], got {k}"
        )

    mean, within, between = scatter_matrices(embeddings)
    ridge = LDA_RIDGE * np.trace(within) / d
    if ridge <= 0:
        ridge = LDA_RIDGE
    within_values, within_vectors = numstats.sym_eig(within + ridge * np.eye(d))
    whitening = within_vectors / np.sqrt(within_values)
    eigenvalues, eigenvectors = numstats.sym_eig(
        numstats.symmetrize(whitening.T @ between @ whitening)
    )
    model = LdaModel(mean, (whitening @ eigenvectors[:, :k]).T.copy(), eigenvalues[:k])
    if model.degenerate:
        LOGGER.warning("LDA: between-class scatter vanishes, classes are not separable")
    return model


def transform(
    model: LinearModel, embeddings: dataio.EmbeddingSet
) -> dataio.EmbeddingSet:
    if embeddings.dim != model.input_dim:
        raise InvalidInputError(
            f"{model.kind} expects dimension {model.input_dim}, got {embeddings.dim}"
        )
    if not len(embeddings):
        return dataio.EmbeddingSet(model.output_dim)
    return embeddings.with_vectors(
        (embeddings.matrix() - model.mean) @ model.projection.T
    )


def length_normalize(embeddings: dataio.EmbeddingSet) -> dataio.EmbeddingSet:
    """Scale every vector to unit length. Zero vectors stay zero."""
    if not len(embeddings):
        return embeddings
    data = embeddings.matrix()
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    return embeddings.with_vectors(data / np.where(norms > 0, norms, 1.0))
