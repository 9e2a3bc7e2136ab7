"""Pipeline configuration: presets, the key = value file format and CLI flags."""

import argparse
import dataclasses
import logging
from pathlib import Path
import typing

import pyparsing as pp

from common import ConfigError
import dataio
import normalizer
import synthgen


LOGGER = logging.getLogger("embnorm")

ADAPTATIONS = ("none", "plda-ret", "plda-uat", "norm-adapt", "norm-adapt+plda-ret")
VAE_ADAPT_MODES = ("retrain", "finetune")
EMBEDDING_FORMATS = ("binary", "csv")
TRUE_WORDS = ("true", "yes", "1")
FALSE_WORDS = ("false", "no", "0")


@dataclasses.dataclass
class PipelineConfig:  # pylint: disable=too-many-instance-attributes
    preset: str = "desk"
    # single runs use seed, experiments run one replica per entry of seeds
    seed: int = 0
    seeds: list[int] = dataclasses.field(default_factory=lambda: [1, 2, 3, 4, 5])
    output_dir: str = "output"
    embedding_format: str = "binary"
    no_progress_bars: bool = False

    # synthetic data
    dim: int = 32
    ind_speakers: int = 200
    ind_test_speakers: int = 100
    ood_speakers: int = 73
    utts_per_speaker: int = 10
    between_scale: float = 2.0
    # 0 spreads the speaker means over every dimension
    speaker_rank: int = 6
    within_scale: float = 1.5
    warp_strength: float = 0.5
    heavy_tail_dof: float = 5.0
    shift_strength: float = 1.0
    adaptation_speakers: int = 40
    test_speakers: int = 33
    n_target: int = 500
    n_nontarget: int = 2000

    # normalization
    normalizers: list[str] = dataclasses.field(
        default_factory=lambda: ["none", "pca", "lda", "vae", "cvae"]
    )
    linear_dim: int = 8
    length_norm: bool = False
    vae_latent_dim: int = 8
    vae_hidden: list[int] = dataclasses.field(default_factory=lambda: [64, 64])
    vae_epochs: int = 50
    vae_batch_size: int = 128
    vae_learning_rate: float = 1e-3
    vae_finetune_learning_rate: float = 1e-4
    vae_adapt_mode: str = "retrain"
    cohesive_weight: float = 0.1

    # back-end
    plda_iterations: int = 10
    alpha_within: float = 0.5
    alpha_between: float = 0.5
    adaptations: list[str] = dataclasses.field(
        default_factory=lambda: list(ADAPTATIONS)
    )

    def validate(self):
        available = normalizer.get_available_normalizers()
        for kind in self.normalizers:
            if kind not in available:
                raise ConfigError(
                    f'Unknown normalizer "{kind}". Available: {", ".join(available)}'
                )
        for adaptation in self.adaptations:
            if adaptation not in ADAPTATIONS:
                raise ConfigError(f'Unknown adaptation "{adaptation}"')
        if self.preset not in PRESETS:
            raise ConfigError(f'Unknown preset "{self.preset}"')
        if self.vae_adapt_mode not in VAE_ADAPT_MODES:
            raise ConfigError(f'Unknown VAE adaptation mode "{self.vae_adapt_mode}"')
        if self.embedding_format not in EMBEDDING_FORMATS:
            raise ConfigError(f'Unknown embedding format "{self.embedding_format}"')
        if not self.seeds or any(seed < 0 for seed in self.seeds + [self.seed]):
            raise ConfigError("Seeds must be non-negative and at least one is needed")
        for name in ("alpha_within", "alpha_between"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.cohesive_weight < 0:
            raise ConfigError("cohesive_weight must be non-negative")
        if self.adaptation_speakers + self.test_speakers > self.ood_speakers:
            raise ConfigError(
                "adaptation_speakers + test_speakers exceeds ood_speakers"
            )


PRESETS: dict[str, dict[str, typing.Any]] = {
    "desk": {
        "linear_dim": 8,
        "vae_hidden": [64, 64],
        "vae_latent_dim": 8,
    },
    "paper": {
        "linear_dim": 150,
        "vae_hidden": [1800, 1800],
        "vae_latent_dim": 200,
    },
}


def preset_values(name: str) -> dict[str, typing.Any]:
    if name not in PRESETS:
        raise ConfigError(f'Unknown preset "{name}". Available: {", ".join(PRESETS)}')
    data = synthgen.PRESETS[name]
    return {
        "preset": name,
        "dim": data.ind.dim,
        "ind_speakers": data.ind.n_speakers,
        "utts_per_speaker": data.ind.utts_per_speaker,
        "between_scale": data.ind.between_scale,
        "speaker_rank": data.ind.speaker_rank,
        "ood_speakers": data.ood_speakers,
        "adaptation_speakers": data.split.adaptation_speakers,
        "test_speakers": data.split.test_speakers,
        "shift_strength": data.shift_strength,
    } | PRESETS[name]


###########################################################
# values
###########################################################


def field_types() -> dict[str, typing.Any]:
    return typing.get_type_hints(PipelineConfig)


def _coerce_scalar(type_, token: str):
    if type_ is bool:
        if token.lower() in TRUE_WORDS:
            return True
        if token.lower() in FALSE_WORDS:
            return False
        raise ValueError(f'"{token}" is not a boolean')
    return type_(token)


def coerce(key: str, tokens: list[str]):
    """
    Convert the tokens of a value to the type of the configuration key.

    >>> coerce("seeds", ["1", "2"])
    [1, 2]
    >>> coerce("length_norm", ["yes"])
    True
    >>> coerce("heavy_tail_dof", ["inf"])
    inf
    >>> coerce("dim", ["x"])
    Traceback (most recent call last):
    ...
    common.ConfigError: Invalid value for dim: invalid literal for int() with base 10: 'x'
    """
    types = field_types()
    if key not in types:
        raise ConfigError(f'Unknown configuration key "{key}"')
    type_ = types[key]
    try:
        if typing.get_origin(type_) is list:
            (item_type,) = typing.get_args(type_)
            return [_coerce_scalar(item_type, token) for token in tokens]
        if len(tokens) != 1:
            raise ValueError(f"expected a single value, got {len(tokens)}")
        return _coerce_scalar(type_, tokens[0])
    except ValueError as exc:
        raise ConfigError(f"Invalid value for {key}: {exc}") from exc


def format_value(value) -> str:
    """
    >>> format_value([64, 64])
    '64, 64'
    >>> format_value(False)
    'false'
    >>> format_value(0.1)
    '0.1'
    """
    match value:
        case bool():
            return "true" if value else "false"
        case list():
            return ", ".join(format_value(item) for item in value)
        case float():
            return repr(value)
        case _:
            return str(value)


###########################################################
# file format
###########################################################


def config_comment():
    return pp.Regex(r"#.*")


def config_key():
    return pp.Word(pp.alphas + "_", pp.alphanums + "_")("key")


def config_values():
    item = pp.Regex(r"[^,#\s]+")
    return pp.Group(pp.Optional(item + pp.ZeroOrMore(pp.Suppress(",") + item)))(
        "values"
    )


def config_line():
    entry = config_key() + pp.Suppress("=") + config_values()
    return pp.Optional(entry) + pp.Optional(pp.Suppress(config_comment()))


def parse_config_text(text: str, source: str = "<string>") -> dict[str, typing.Any]:
    """
    Parse ``key = value`` lines. Lists are comma separated, # starts a comment.

    >>> parse_config_text("dim = 16  # small\\nseeds = 1, 2\\n")
    {'dim': 16, 'seeds': [1, 2]}
    >>> parse_config_text("dimm = 16")
    Traceback (most recent call last):
    ...
    common.ConfigError: <string> (line 1): Unknown configuration key "dimm"
    """
    grammar = config_line()
    result: dict[str, typing.Any] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        location = f"{source} (line {line_number})"
        try:
            parsed = grammar.parse_string(line, parse_all=True)
        except pp.ParseException as exc:
            raise ConfigError(f"{location}: expected key = value") from exc
        if "key" not in parsed:
            continue
        try:
            result[parsed["key"]] = coerce(parsed["key"], list(parsed["values"]))
        except ConfigError as exc:
            raise ConfigError(f"{location}: {exc}") from exc
    return result


def read_config_file(path: Path) -> dict[str, typing.Any]:
    return parse_config_text("\n".join(dataio.read_lines(path)), str(path))


def format_config(config: PipelineConfig) -> str:
    return "".join(
        f"{field.name} = {format_value(getattr(config, field.name))}\n"
        for field in dataclasses.fields(config)
    )


def write_resolved(config: PipelineConfig, folder: Path) -> Path:
    path = folder / "config.resolved"
    dataio.write_text(path, format_config(config))
    LOGGER.info(f"Resolved configuration written to {path}")
    return path


###########################################################
# resolution
###########################################################


def flag_name(key_: str) -> str:
    return "--" + key_.replace("_", "-")


def add_config_arguments(parser: argparse.ArgumentParser):
    """One flag per configuration key. Values use the file syntax."""
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", type=Path, help="Configuration file (key = value).")
    group.add_argument(
        "--preset", choices=list(PRESETS), help="Preset applied before the file."
    )
    for field in dataclasses.fields(PipelineConfig):
        if field.name in ("preset", "no_progress_bars"):
            continue
        default = (
            field.default_factory()  # type: ignore[misc]
            if field.default is dataclasses.MISSING
            else field.default
        )
        group.add_argument(
            flag_name(field.name),
            dest=f"config_{field.name}",
            metavar="VALUE",
            help=f"Default: {format_value(default)}.",
        )


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults < preset < configuration file < command line flags."""
    file_values = {} if args.config is None else read_config_file(args.config)
    preset = args.preset or file_values.get("preset") or PipelineConfig.preset
    values = preset_values(preset) | file_values
    values["preset"] = preset
    for field in dataclasses.fields(PipelineConfig):
        raw = getattr(args, f"config_{field.name}", None)
        if raw is not None:
            tokens = [token.strip() for token in raw.split(",")]
            values[field.name] = coerce(field.name, [t for t in tokens if t])
    values["no_progress_bars"] = getattr(args, "no_progress_bars", False)
    config = PipelineConfig(**values)
    config.validate()
    return config
