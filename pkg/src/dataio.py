"""Embeddings, trials, scores and model files."""

from __future__ import annotations

import csv
import dataclasses
import importlib
import io
import logging
from pathlib import Path
import struct
from typing import Any, ClassVar, Iterator, Protocol

import numpy as np

from common import InvalidInputError, ParseError, StorageError, UnsupportedVersionError


LOGGER = logging.getLogger("embnorm")

EVF_MAGIC = b"EVF1"
MODEL_MAGIC = b"EVM1"
MODEL_FORMAT_VERSION = 1

# The module that registers each model kind. Imported lazily when loading.
MODEL_MODULES = {
    "identity": "normalizer",
    "pca": "linear_norm",
    "lda": "linear_norm",
    "vae": "vae_norm",
    "plda": "plda",
}


###########################################################
# data model
###########################################################


@dataclasses.dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """A labeled embedding. An empty speaker id means unlabeled."""

    utterance_id: str
    speaker_id: str
    vector: np.ndarray

    def __post_init__(self):
        if not self.utterance_id or any(c.isspace() for c in self.utterance_id):
            raise InvalidInputError(
                f'Utterance id "{self.utterance_id}" is empty or has whitespace'
            )
        if any(c.isspace() for c in self.speaker_id):
            raise InvalidInputError(f'Speaker id "{self.speaker_id}" has whitespace')
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.ndim != 1:
            raise InvalidInputError(f"{self.utterance_id}: vector must be 1-D")
        if not np.all(np.isfinite(vector)):
            raise InvalidInputError(f"{self.utterance_id}: non-finite vector entry")
        object.__setattr__(self, "vector", vector)

    @property
    def is_labeled(self) -> bool:
        return self.speaker_id != ""

    def __eq__(self, other):
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.utterance_id == other.utterance_id
            and self.speaker_id == other.speaker_id
            and np.array_equal(self.vector, other.vector)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclasses.dataclass(frozen=True, eq=False)
class EmbeddingSet:
    dim: int
    records: list[EmbeddingRecord] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        seen: set[str] = set()
        for record in self.records:
            if len(record.vector) != self.dim:
                raise InvalidInputError(
                    f"{record.utterance_id}: dimension {len(record.vector)}, "
                    f"expected {self.dim}"
                )
            if record.utterance_id in seen:
                raise InvalidInputError(f"Duplicate utterance id {record.utterance_id}")
            seen.add(record.utterance_id)

    @classmethod
    def from_arrays(
        cls, utterance_ids: list[str], speaker_ids: list[str], vectors
    ) -> EmbeddingSet:
        matrix = np.asarray(vectors, dtype=np.float64)
        if matrix.ndim != 2 or len(matrix) != len(utterance_ids):
            raise InvalidInputError("Need one vector row per utterance id")
        return cls(
            matrix.shape[1],
            [
                EmbeddingRecord(utterance, speaker, row)
                for utterance, speaker, row in zip(utterance_ids, speaker_ids, matrix)
            ],
        )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        return iter(self.records)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return self.dim == other.dim and self.records == other.records

    __hash__ = None  # type: ignore[assignment]

    @property
    def utterance_ids(self) -> list[str]:
        return [record.utterance_id for record in self.records]

    @property
    def speaker_ids(self) -> list[str]:
        return [record.speaker_id for record in self.records]

    @property
    def speakers(self) -> list[str]:
        return sorted(set(self.speaker_ids) - {""})

    @property
    def is_labeled(self) -> bool:
        return all(record.is_labeled for record in self.records)

    def matrix(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.dim))
        return np.stack([record.vector for record in self.records])

    def index(self) -> dict[str, int]:
        return {record.utterance_id: i for i, record in enumerate(self.records)}

    def with_vectors(self, vectors) -> EmbeddingSet:
        """Same ids and labels, new vectors (possibly of another dimension)."""
        matrix = np.asarray(vectors, dtype=np.float64)
        dim = matrix.shape[1] if matrix.ndim == 2 else 0
        if not self.records:
            return EmbeddingSet(dim)
        return EmbeddingSet.from_arrays(self.utterance_ids, self.speaker_ids, matrix)

    def select_speakers(self, speakers) -> EmbeddingSet:
        wanted = set(speakers)
        return EmbeddingSet(
            self.dim, [record for record in self.records if record.speaker_id in wanted]
        )

    def without_labels(self) -> EmbeddingSet:
        return EmbeddingSet(
            self.dim,
            [
                EmbeddingRecord(record.utterance_id, "", record.vector)
                for record in self.records
            ],
        )


@dataclasses.dataclass(frozen=True)
class Trial:
    enroll_utterance_id: str
    test_utterance_id: str
    # None if the trial list has no label
    is_target: bool | None = None


@dataclasses.dataclass(frozen=True)
class Score:
    enroll_utterance_id: str
    test_utterance_id: str
    score: float
    is_target: bool | None = None


###########################################################
# helpers
###########################################################


def guess_format(path: Path) -> str:
    """
    >>> guess_format(Path("a.csv"))
    'csv'
    >>> guess_format(Path("a.evf"))
    'binary'
    """
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def write_bytes(path: Path, data: bytes):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise StorageError(f"Could not write {path}: {exc.strerror}") from exc


def write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"Could not write {path}: {exc.strerror}") from exc


def read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise StorageError(f"Could not read {path}: {exc.strerror}") from exc


def read_lines(path: Path) -> list[str]:
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StorageError(f"Could not read {path}: {exc.strerror}") from exc


def format_float(value: float) -> str:
    """
    17 significant digits, enough to restore every double.

    >>> format_float(0.1)
    '0.10000000000000001'
    >>> format_float(-1.25)
    '-1.25'
    """
    return f"{value:.17g}"


def parse_label(token: str) -> bool:
    match token:
        case "target":
            return True
        case "nontarget":
            return False
        case _:
            raise ValueError(f'Unknown label "{token}"')


def format_label(is_target: bool) -> str:
    return "target" if is_target else "nontarget"


class BinaryReader:
    """Sequential little-endian reader that knows its byte offset."""

    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.path = path
        self.offset = 0

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.path, f"byte {self.offset}")

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise self.error(f"Truncated: need {size} bytes")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def read_string(self) -> str:
        (length,) = self.unpack("<H")
        raw = self.unpack(f"<{length}s")[0]
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise self.error("Invalid UTF-8 string") from exc

    def read_doubles(self, count: int) -> np.ndarray:
        size = 8 * count
        if size == 0:
            return np.zeros(0)
        if self.offset + size > len(self.data):
            raise self.error(f"Truncated: need {size} bytes")
        values = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.offset)
        self.offset += size
        return values.astype(np.float64)

    def at_end(self) -> bool:
        return self.offset == len(self.data)


def pack_string(value: str) -> bytes:
    encoded = value.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise InvalidInputError(f"String too long for the file format: {value[:20]}...")
    return struct.pack("<H", len(encoded)) + encoded


###########################################################
# embeddings
###########################################################


def write_embeddings(embeddings: EmbeddingSet, path: Path, format_: str = "binary"):
    match format_:
        case "binary":
            buffer = io.BytesIO()
            buffer.write(EVF_MAGIC)
            buffer.write(struct.pack("<IQ", embeddings.dim, len(embeddings)))
            for record in embeddings:
                buffer.write(pack_string(record.utterance_id))
                buffer.write(pack_string(record.speaker_id))
                buffer.write(record.vector.astype("<f8").tobytes())
            write_bytes(path, buffer.getvalue())
        case "csv":
            buffer_text = io.StringIO()
            writer = csv.writer(buffer_text, lineterminator="\n")
            writer.writerow(
                ["utterance_id", "speaker_id"]
                + [f"v{i + 1}" for i in range(embeddings.dim)]
            )
            for record in embeddings:
                writer.writerow(
                    [record.utterance_id, record.speaker_id]
                    + [format_float(value) for value in record.vector]
                )
            write_text(path, buffer_text.getvalue())
        case _:
            raise InvalidInputError(f"Unknown embedding format {format_}")
    LOGGER.debug(f"Wrote {len(embeddings)} embeddings to {path}")


def _read_embeddings_binary(path: Path) -> EmbeddingSet:
    reader = BinaryReader(read_bytes(path), path)
    (magic,) = reader.unpack("<4s")
    if magic != EVF_MAGIC:
        reader.offset = 0
        raise reader.error(f"Magic mismatch: {magic!r}")
    dim, count = reader.unpack("<IQ")
    records = []
    seen: set[str] = set()
    for _ in range(count):
        record_offset = reader.offset
        utterance_id = reader.read_string()
        speaker_id = reader.read_string()
        vector = reader.read_doubles(dim)
        if utterance_id in seen:
            raise ParseError(
                f"Duplicate utterance id {utterance_id}", path, f"byte {record_offset}"
            )
        seen.add(utterance_id)
        try:
            records.append(EmbeddingRecord(utterance_id, speaker_id, vector))
        except InvalidInputError as exc:
            raise ParseError(str(exc), path, f"byte {record_offset}") from exc
    if not reader.at_end():
        raise reader.error("Trailing data after the last record")
    return EmbeddingSet(dim, records)


def _read_embeddings_csv(path: Path, dim: int | None) -> EmbeddingSet:
    records = []
    seen: set[str] = set()
    for line_number, row in enumerate(csv.reader(read_lines(path)), start=1):
        if not row:
            continue
        if line_number == 1 and row[0] == "utterance_id":
            # header
            if dim is None:
                dim = len(row) - 2
            continue
        location = f"line {line_number}"
        if dim is None:
            dim = len(row) - 2
        if len(row) != dim + 2:
            raise ParseError(
                f"Expected {dim} values, got {len(row) - 2}", path, location
            )
        utterance_id, speaker_id = row[0], row[1]
        if utterance_id in seen:
            raise ParseError(f"Duplicate utterance id {utterance_id}", path, location)
        seen.add(utterance_id)
        try:
            vector = np.array([float(value) for value in row[2:]])
            records.append(EmbeddingRecord(utterance_id, speaker_id, vector))
        except (ValueError, InvalidInputError) as exc:
            raise ParseError(str(exc), path, location) from exc
    return EmbeddingSet(0 if dim is None else dim, records)


def read_embeddings(
    path: Path, format_: str = "binary", dim: int | None = None
) -> EmbeddingSet:
    """
    Read an embedding file. For CSV files the dimension is taken from the
    header or the first row, unless it is given explicitly.
    """
    match format_:
        case "binary":
            embeddings = _read_embeddings_binary(path)
        case "csv":
            embeddings = _read_embeddings_csv(path, dim)
        case _:
            raise InvalidInputError(f"Unknown embedding format {format_}")
    if dim is not None and embeddings.dim != dim:
        raise ParseError(f"Dimension {embeddings.dim}, expected {dim}", path)
    LOGGER.debug(f"Read {len(embeddings)} embeddings of dim {embeddings.dim}")
    return embeddings


###########################################################
# trials, enrollments and scores
###########################################################


def read_trials(path: Path) -> list[Trial]:
    """Whitespace separated "enroll test [target|nontarget]" lines."""
    trials = []
    for line_number, line in enumerate(read_lines(path), start=1):
        tokens = line.split()
        if not tokens:
            continue
        location = f"line {line_number}"
        if len(tokens) not in (2, 3):
            raise ParseError(f"Expected 2 or 3 fields, got {len(tokens)}", path, location)
        try:
            is_target = parse_label(tokens[2]) if len(tokens) == 3 else None
        except ValueError as exc:
            raise ParseError(str(exc), path, location) from exc
        trials.append(Trial(tokens[0], tokens[1], is_target))
    return trials


def write_trials(trials: list[Trial], path: Path):
    lines = []
    for trial in trials:
        fields = [trial.enroll_utterance_id, trial.test_utterance_id]
        if trial.is_target is not None:
            fields.append(format_label(trial.is_target))
        lines.append(" ".join(fields))
    write_text(path, "".join(line + "\n" for line in lines))


def read_enrollments(path: Path) -> dict[str, list[str]]:
    """ "model_id utt1 utt2 ..." lines for multi-session enrollment."""
    enrollments: dict[str, list[str]] = {}
    for line_number, line in enumerate(read_lines(path), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < 2:
            raise ParseError("Enrollment without utterances", path, f"line {line_number}")
        if tokens[0] in enrollments:
            raise ParseError(
                f"Duplicate model id {tokens[0]}", path, f"line {line_number}"
            )
        enrollments[tokens[0]] = tokens[1:]
    return enrollments


def write_scores(scores: list[Score], path: Path):
    write_text(
        path,
        "".join(
            f"{score.enroll_utterance_id} {score.test_utterance_id} "
            f"{format_float(score.score)}\n"
            for score in scores
        ),
    )


def read_scores(path: Path) -> list[Score]:
    """ "enroll test score" lines, with an optional 4th label column."""
    scores = []
    for line_number, line in enumerate(read_lines(path), start=1):
        tokens = line.split()
        if not tokens:
            continue
        location = f"line {line_number}"
        if len(tokens) not in (3, 4):
            raise ParseError(f"Expected 3 or 4 fields, got {len(tokens)}", path, location)
        try:
            value = float(tokens[2])
            is_target = parse_label(tokens[3]) if len(tokens) == 4 else None
        except ValueError as exc:
            raise ParseError(str(exc), path, location) from exc
        scores.append(Score(tokens[0], tokens[1], value, is_target))
    return scores


###########################################################
# reports
###########################################################


def write_csv(path: Path, header: list[str], rows: list[list[Any]]):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [
                format_float(value) if isinstance(value, float) else value
                for value in row
            ]
        )
    write_text(path, buffer.getvalue())


def write_metrics(metrics: dict[str, Any], path: Path):
    write_csv(
        path, ["metric", "value"], [[key, value] for key, value in metrics.items()]
    )


def write_det(det_points, path: Path):
    write_csv(
        path,
        ["threshold", "far", "frr"],
        [[point.threshold, point.far, point.frr] for point in det_points],
    )


def write_loss_log(losses, path: Path):
    write_csv(
        path,
        ["epoch", "loss"],
        [[epoch, float(loss)] for epoch, loss in enumerate(losses)],
    )


###########################################################
# models
###########################################################


FieldValue = np.ndarray | int | str


class SerializableModel(Protocol):
    kind: ClassVar[str]

    def to_fields(self) -> dict[str, FieldValue]: ...

    @classmethod
    def from_fields(cls, fields: dict[str, FieldValue]) -> Any: ...


MODEL_REGISTRY: dict[str, Any] = {}

FIELD_ARRAY = 0
FIELD_INT = 1
FIELD_STRING = 2


def register_model(cls):
    """Class decorator that makes a model type loadable by its kind tag."""
    MODEL_REGISTRY[cls.kind] = cls
    return cls


def _model_class(kind: str, path: Path):
    if kind not in MODEL_REGISTRY and kind in MODEL_MODULES:
        importlib.import_module(MODEL_MODULES[kind])
    if kind not in MODEL_REGISTRY:
        raise ParseError(f'Unknown model kind "{kind}"', path)
    return MODEL_REGISTRY[kind]


def save_model(model: SerializableModel, path: Path):
    """
    Container layout: magic, u32 version, kind string, u32 field count, then
    per field a name string, a u8 type tag and the payload. Arrays carry their
    shape (u8 rank, u32 per axis) followed by little-endian doubles.
    """
    fields = model.to_fields()
    buffer = io.BytesIO()
    buffer.write(MODEL_MAGIC)
    buffer.write(struct.pack("<I", MODEL_FORMAT_VERSION))
    buffer.write(pack_string(model.kind))
    buffer.write(struct.pack("<I", len(fields)))
    for name, value in fields.items():
        buffer.write(pack_string(name))
        match value:
            case bool() | int() | np.integer():
                buffer.write(struct.pack("<Bq", FIELD_INT, int(value)))
            case str():
                buffer.write(struct.pack("<B", FIELD_STRING))
                buffer.write(pack_string(value))
            case _:
                array = np.asarray(value, dtype=np.float64)
                buffer.write(struct.pack("<BB", FIELD_ARRAY, array.ndim))
                buffer.write(struct.pack(f"<{array.ndim}I", *array.shape))
                buffer.write(array.astype("<f8").tobytes())
    write_bytes(path, buffer.getvalue())
    LOGGER.debug(f"Saved {model.kind} model to {path}")


def load_model(path: Path):
    reader = BinaryReader(read_bytes(path), path)
    (magic,) = reader.unpack("<4s")
    if magic != MODEL_MAGIC:
        reader.offset = 0
        raise reader.error(f"Magic mismatch: {magic!r}")
    (version,) = reader.unpack("<I")
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"Model format version {version}, supported: {MODEL_FORMAT_VERSION}",
            path,
        )
    kind = reader.read_string()
    (count,) = reader.unpack("<I")
    fields: dict[str, FieldValue] = {}
    for _ in range(count):
        name = reader.read_string()
        (tag,) = reader.unpack("<B")
        match tag:
            case 0:  # FIELD_ARRAY
                (rank,) = reader.unpack("<B")
                shape = reader.unpack(f"<{rank}I")
                size = int(np.prod(shape)) if rank else 1
                fields[name] = reader.read_doubles(size).reshape(shape)
            case 1:  # FIELD_INT
                fields[name] = reader.unpack("<q")[0]
            case 2:  # FIELD_STRING
                fields[name] = reader.read_string()
            case _:
                raise reader.error(f"Unknown field type {tag}")
    if not reader.at_end():
        raise reader.error("Trailing data after the last field")
    try:
        return _model_class(kind, path).from_fields(fields)
    except (KeyError, InvalidInputError) as exc:
        raise ParseError(f"Invalid {kind} model: {exc}", path) from exc
