"""Provides the base class for all normalizers and the identity fallback."""

from __future__ import annotations

import abc
import dataclasses
import importlib
import logging
import pkgutil
from typing import Any, ClassVar

from common import ConfigError, InvalidInputError
import dataio
import linear_norm


LOGGER = logging.getLogger("embnorm")

# Experiment column order and display names of the normalizer kinds.
SYSTEM_NAMES = {
    "none": "Baseline",
    "pca": "PCA",
    "lda": "LDA",
    "vae": "VAE",
    "cvae": "C-VAE",
}


class BaseNormalizer(abc.ABC):
    kind = ""
    needs_labels = False

    def __init__(self, config, *_args, **_kwargs):
        self._config = config
        self.logger = logging.getLogger("embnorm")

    @property
    def system_name(self) -> str:
        return SYSTEM_NAMES.get(self.kind, self.kind)

    def check_input(self, embeddings: dataio.EmbeddingSet):
        if not len(embeddings):
            raise InvalidInputError(f"{self.system_name}: no training data")
        if self.needs_labels and not embeddings.is_labeled:
            raise InvalidInputError(f"{self.system_name}: training needs speaker labels")

    @abc.abstractmethod
    def fit(self, embeddings: dataio.EmbeddingSet) -> Any:
        """Train a normalization model on the given set."""

    def adapt(self, model: Any, adaptation_set: dataio.EmbeddingSet) -> Any:
        """Adaptation of a normalization model is re-training on the new data."""
        self.logger.debug(f"{self.system_name}: re-fit on {len(adaptation_set)} vectors")
        return self.fit(adaptation_set)


###########################################################
# identity
###########################################################


@dataio.register_model
@dataclasses.dataclass(frozen=True)
class IdentityModel:
    """The Baseline system: embeddings go to the back-end unchanged."""

    kind: ClassVar[str] = "identity"

    dim: int

    @property
    def input_dim(self) -> int:
        return self.dim

    @property
    def output_dim(self) -> int:
        return self.dim

    def transform(self, embeddings: dataio.EmbeddingSet) -> dataio.EmbeddingSet:
        if embeddings.dim != self.dim:
            raise InvalidInputError(
                f"identity expects dimension {self.dim}, got {embeddings.dim}"
            )
        return embeddings

    def to_fields(self) -> dict[str, dataio.FieldValue]:
        return {"dim": self.dim}

    @classmethod
    def from_fields(cls, fields):
        return cls(int(fields["dim"]))


class IdentityNormalizer(BaseNormalizer):
    kind = "none"

    def fit(self, embeddings: dataio.EmbeddingSet) -> IdentityModel:
        return IdentityModel(embeddings.dim)


###########################################################
# pipeline helpers
###########################################################


@dataclasses.dataclass(frozen=True)
class LengthNormalized:
    """Runtime wrapper that scales the normalized vectors to unit length."""

    model: Any

    @property
    def output_dim(self) -> int:
        return self.model.output_dim

    def transform(self, embeddings: dataio.EmbeddingSet) -> dataio.EmbeddingSet:
        return linear_norm.length_normalize(self.model.transform(embeddings))


def with_length_norm(model: Any, length_norm: bool) -> Any:
    return LengthNormalized(model) if length_norm else model


def get_normalizer(kind: str, config) -> BaseNormalizer:
    # Try to use a kind specific normalizer. If there is none,
    # fall back to the identity for the Baseline system.
    try:
        module = importlib.import_module(f"normalizers.{kind}")
        return module.Normalizer(config)
    except ModuleNotFoundError as exc:
        if str(exc) != f"No module named 'normalizers.{kind}'":
            raise exc  # this is unexpected -> reraise
        if kind == "none":
            LOGGER.debug("Fallback to the identity normalizer")
            return IdentityNormalizer(config)
        raise ConfigError(
            f'Unknown normalizer "{kind}". Available: '
            f"{', '.join(get_available_normalizers())}"
        ) from exc


def get_available_normalizers() -> list[str]:
    import normalizers  # pylint: disable=import-outside-toplevel

    return ["none"] + [
        module.name
        for module in pkgutil.iter_modules(normalizers.__path__)
        if not module.name.startswith("_")
    ]
