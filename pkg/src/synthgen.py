"""
Synthetic speaker embedding populations with a controllable domain shift.
Everything is determined by the seeds. Speaker i of a domain draws from its
own generator seeded with (seed, i).
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np

from common import InvalidInputError, speaker_codes
import dataio
import numstats


LOGGER = logging.getLogger("embnorm")

MAX_CONDITION_NUMBER = 1e6


@dataclasses.dataclass(frozen=True, eq=False)
class DomainShift:
    """Affine map x -> matrix·x + bias, then x_j += strength·tanh(x_(j-1))."""

    matrix: np.ndarray | None = None
    bias: np.ndarray | None = None
    nonlinear_strength: float = 0.0

    def __post_init__(self):
        if self.matrix is not None:
            matrix = numstats.as_matrix(self.matrix, "shift matrix")
            if matrix.shape[0] != matrix.shape[1]:
                raise InvalidInputError(f"Shift matrix must be square, got {matrix.shape}")
            singular = np.linalg.svd(matrix, compute_uv=False)
            if singular[-1] <= 0 or singular[0] / singular[-1] >= MAX_CONDITION_NUMBER:
                raise InvalidInputError("Shift matrix is singular or badly conditioned")
            object.__setattr__(self, "matrix", matrix)
        if self.bias is not None:
            object.__setattr__(self, "bias", np.asarray(self.bias, dtype=np.float64))
        if self.nonlinear_strength < 0:
            raise InvalidInputError("Nonlinear shift strength must be non-negative")

    @classmethod
    def random(
        cls, dim: int, seed: int, nonlinear_strength: float = 0.5
    ) -> DomainShift:
        """Random rotation, per-dimension scale in [0.5, 2] and a bias."""
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        rotation = q * np.sign(np.diag(r))
        scale = rng.uniform(0.5, 2.0, size=dim)
        return cls(
            matrix=scale[:, None] * rotation,
            bias=rng.standard_normal(dim),
            nonlinear_strength=nonlinear_strength,
        )

    @property
    def is_identity(self) -> bool:
        return (
            self.matrix is None
            and self.bias is None
            and self.nonlinear_strength == 0
        )

    def apply(self, data: np.ndarray) -> np.ndarray:
        if self.matrix is not None:
            if self.matrix.shape[1] != data.shape[1]:
                raise InvalidInputError(
                    f"Shift matrix is {self.matrix.shape}, data dimension {data.shape[1]}"
                )
            data = data @ self.matrix.T
        if self.bias is not None:
            data = data + self.bias
        if self.nonlinear_strength:
            data = data + self.nonlinear_strength * np.tanh(np.roll(data, 1, axis=1))
        return data


@dataclasses.dataclass(frozen=True)
class DomainSpec:
    dim: int = 32
    n_speakers: int = 200
    utts_per_speaker: int = 10
    # standard deviation of the speaker means
    between_scale: float = 1.0
    # speaker means vary in the first speaker_rank coordinates only, 0 or a rank
    # of at least dim uses every coordinate
    speaker_rank: int = 0
    # standard deviation of the within-speaker noise
    within_scale: float = 1.5
    warp_strength: float = 0.5
    shift: DomainShift = dataclasses.field(default_factory=DomainShift)
    # degrees of freedom of the t-distributed noise, inf for Gaussian noise
    heavy_tail_dof: float = 5.0
    seed: int = 0
    speaker_prefix: str = ""

    def validate(self):
        if self.dim < 1 or self.n_speakers < 1 or self.utts_per_speaker < 1:
            raise InvalidInputError(
                "Dimension, speaker count and utterances per speaker must be positive"
            )
        if self.between_scale <= 0 or self.within_scale <= 0:
            raise InvalidInputError("Scales must be positive")
        if self.speaker_rank < 0:
            raise InvalidInputError(
                f"Speaker rank must be non-negative, got {self.speaker_rank}"
            )
        if self.warp_strength < 0:
            raise InvalidInputError("Warp strength must be non-negative")
        if not self.heavy_tail_dof > 2:
            raise InvalidInputError(
                f"Degrees of freedom must be > 2, got {self.heavy_tail_dof}"
            )
        if any(c.isspace() for c in self.speaker_prefix):
            raise InvalidInputError("Speaker prefix must not contain whitespace")


@dataclasses.dataclass(frozen=True)
class SplitSpec:
    adaptation_speakers: int = 40
    test_speakers: int = 33


@dataclasses.dataclass(frozen=True)
class Preset:
    ind: DomainSpec
    ood_speakers: int
    split: SplitSpec
    shift_strength: float = 1.0


PRESETS = {
    "desk": Preset(
        DomainSpec(dim=32, n_speakers=200, between_scale=2.0, speaker_rank=6),
        73,
        SplitSpec(40, 33),
    ),
    "paper": Preset(
        DomainSpec(dim=512, n_speakers=2000, between_scale=2.0, speaker_rank=100),
        73,
        SplitSpec(40, 33),
    ),
}


def speaker_id(spec: DomainSpec, index: int) -> str:
    return f"{spec.speaker_prefix}spk{index:04d}"


def _noise(rng: np.random.Generator, shape: tuple[int, int], dof: float) -> np.ndarray:
    """Unit-variance noise, t-distributed for finite degrees of freedom."""
    if math.isinf(dof):
        return rng.standard_normal(shape)
    return rng.standard_t(dof, size=shape) / np.sqrt(dof / (dof - 2.0))


def warp(data: np.ndarray, strength: float) -> np.ndarray:
    """
    Odd elementwise warp x + strength·x³/(1 + x²).

    >>> warp(np.array([0.0, 1.0]), 0.5).tolist()
    [0.0, 1.25]
    """
    if not strength:
        return data
    return data + strength * data**3 / (1.0 + data**2)


def generate_domain(spec: DomainSpec) -> dataio.EmbeddingSet:
    """
    Speaker means ~ N(0, between²·I) on the first speaker_rank coordinates and
    zero elsewhere, utterances = mean + within·noise, then the warp and the
    domain shift.
    """
    spec.validate()
    utterance_ids = []
    speaker_ids = []
    blocks = []
    for index in range(spec.n_speakers):
        rng = np.random.default_rng([spec.seed, index])
        mean = np.zeros(spec.dim)
        rank = min(spec.speaker_rank or spec.dim, spec.dim)
        mean[:rank] = spec.between_scale * rng.standard_normal(rank)
        noise = _noise(rng, (spec.utts_per_speaker, spec.dim), spec.heavy_tail_dof)
        blocks.append(mean + spec.within_scale * noise)
        speaker = speaker_id(spec, index)
        speaker_ids.extend([speaker] * spec.utts_per_speaker)
        utterance_ids.extend(
            f"{speaker}-utt{utterance:03d}"
            for utterance in range(spec.utts_per_speaker)
        )
    data = spec.shift.apply(warp(np.concatenate(blocks), spec.warp_strength))
    LOGGER.debug(
        f"Generated {len(utterance_ids)} embeddings of {spec.n_speakers} speakers "
        f"(seed {spec.seed})"
    )
    return dataio.EmbeddingSet.from_arrays(utterance_ids, speaker_ids, data)


def split_by_speaker(
    embeddings: dataio.EmbeddingSet, split: SplitSpec, seed: int
) -> tuple[dataio.EmbeddingSet, dataio.EmbeddingSet]:
    """Randomly assign speakers to disjoint adaptation and test sets."""
    if not embeddings.is_labeled:
        raise InvalidInputError("Splitting by speaker needs labels")
    speakers = embeddings.speakers
    if split.adaptation_speakers + split.test_speakers > len(speakers):
        raise InvalidInputError(
            f"Split {split.adaptation_speakers}/{split.test_speakers} needs more "
            f"than the {len(speakers)} available speakers"
        )
    order = np.random.default_rng(seed).permutation(len(speakers))
    shuffled = [speakers[i] for i in order]
    adaptation = shuffled[: split.adaptation_speakers]
    test = shuffled[
        split.adaptation_speakers : split.adaptation_speakers + split.test_speakers
    ]
    return embeddings.select_speakers(adaptation), embeddings.select_speakers(test)


def _target_pairs(groups: list[np.ndarray]) -> np.ndarray:
    pairs = []
    for members in groups:
        first, second = np.triu_indices(len(members), 1)
        pairs.append(np.column_stack([members[first], members[second]]))
    return np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=int)


def _nontarget_pairs(
    codes: np.ndarray, count: int, available: int, rng: np.random.Generator
) -> np.ndarray:
    n = len(codes)
    if count > available // 2:
        first, second = np.triu_indices(n, 1)
        keep = codes[first] != codes[second]
        candidates = np.column_stack([first[keep], second[keep]])
        return candidates[rng.choice(len(candidates), count, replace=False)]
    chosen: dict[tuple[int, int], None] = {}
    while len(chosen) < count:
        first, second = rng.integers(0, n, size=2)
        if codes[first] == codes[second]:
            continue
        chosen.setdefault((int(min(first, second)), int(max(first, second))))
    return np.array(list(chosen), dtype=int).reshape(-1, 2)


def make_trials(
    embeddings: dataio.EmbeddingSet, n_target: int, n_nontarget: int, seed: int
) -> list[dataio.Trial]:
    """
    Sample same-speaker pairs (targets) and cross-speaker pairs (nontargets)
    uniformly without replacement, in random order.
    """
    if not embeddings.is_labeled:
        raise InvalidInputError("Trials need speaker labels")
    if n_target < 0 or n_nontarget < 0:
        raise InvalidInputError("Trial counts must be non-negative")
    names, codes_list = speaker_codes(embeddings.speaker_ids)
    codes = np.array(codes_list, dtype=int)
    groups = [np.flatnonzero(codes == code) for code in range(len(names))]

    targets = _target_pairs(groups)
    if n_target > len(targets):
        raise InvalidInputError(
            f"Requested {n_target} target trials, at most {len(targets)} are possible"
        )
    n = len(codes)
    available = n * (n - 1) // 2 - len(targets)
    if n_nontarget > available:
        raise InvalidInputError(
            f"Requested {n_nontarget} nontarget trials, at most {available} are possible"
        )

    rng = np.random.default_rng(seed)
    chosen_targets = targets[rng.choice(len(targets), n_target, replace=False)]
    chosen_nontargets = _nontarget_pairs(codes, n_nontarget, available, rng)
    ids = embeddings.utterance_ids
    trials = [dataio.Trial(ids[i], ids[j], True) for i, j in chosen_targets] + [
        dataio.Trial(ids[i], ids[j], False) for i, j in chosen_nontargets
    ]
    return [trials[i] for i in rng.permutation(len(trials))]
