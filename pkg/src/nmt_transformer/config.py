"""Configuration for the translation toolkit."""

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Raised when configuration validation fails."""


def _validate_positive(value: int, field_name: str) -> int:
    """Validate that an integer setting is at least one.

    Args:
        value: Value to validate
        field_name: Name of the field for error messages

    Returns:
        Validated value

    Raises:
        ConfigurationError: If value is below one

    """
    if value < 1:
        msg = f"{field_name.capitalize()} must be at least 1, got {value}"
        raise ConfigurationError(msg)
    return value


def _validate_non_negative(value: int, field_name: str) -> int:
    """Validate that an integer setting is zero or more.

    Raises:
        ConfigurationError: If value is negative

    """
    if value < 0:
        msg = f"{field_name.capitalize()} must be non-negative, got {value}"
        raise ConfigurationError(msg)
    return value


def _validate_probability(value: float, field_name: str) -> float:
    """Validate a dropout-style probability in [0, 1).

    Raises:
        ConfigurationError: If value is outside [0, 1)

    """
    if not (0.0 <= value < 1.0):
        msg = f"{field_name.capitalize()} must be in [0, 1), got {value}"
        raise ConfigurationError(msg)
    return value


def _validate_positive_float(value: float, field_name: str) -> float:
    if not value > 0.0:
        msg = f"{field_name.capitalize()} must be positive, got {value}"
        raise ConfigurationError(msg)
    return value


@dataclass(frozen=True)
class ModelConfig:
    """Transformer hyperparameters.

    Defaults mirror the reference setup: 512-dimensional embeddings, 8 heads of
    size 64, 3 encoder and 3 decoder layers, a maximum sequence length of 100,
    a forward expansion factor of 4 and dropout 0.1. The vocabulary sizes
    default to the full news-commentary vocabularies and are replaced with the
    sizes of the vocabularies actually built before a model is created.

    Attributes:
        src_vocab_size: Number of source (German) vocabulary entries.
        tgt_vocab_size: Number of target (English) vocabulary entries.
        d_model: Embedding size shared by every sublayer.
        n_heads: Number of attention heads; must divide d_model.
        n_encoder_layers: Depth of the encoder stack.
        n_decoder_layers: Depth of the decoder stack.
        max_seq_len: Rows in each learned positional table.
        expansion: Inner width multiplier of the feed-forward sublayer.
        dropout_p: Dropout probability used in training mode.

    """

    src_vocab_size: int = field(default=137_485)
    tgt_vocab_size: int = field(default=56_225)
    d_model: int = field(default=512)
    n_heads: int = field(default=8)
    n_encoder_layers: int = field(default=3)
    n_decoder_layers: int = field(default=3)
    max_seq_len: int = field(default=100)
    expansion: int = field(default=4)
    dropout_p: float = field(default=0.1)

    def __post_init__(self) -> None:
        """Validate configuration after initialization."""
        for name in (
            "src_vocab_size",
            "tgt_vocab_size",
            "d_model",
            "n_heads",
            "n_encoder_layers",
            "n_decoder_layers",
            "max_seq_len",
            "expansion",
        ):
            _validate_positive(getattr(self, name), name)
        if self.d_model % self.n_heads != 0:
            msg = f"D_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            raise ConfigurationError(msg)
        _validate_probability(self.dropout_p, "dropout_p")

    @property
    def head_dim(self) -> int:
        """Per-head projection size d_k."""
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    Defaults follow the reference training setup (5 epochs, learning rate
    5e-4, batch size 64, dropout 0.1, early stopping on). Adam moments, the
    clipping norm and the patience window are implementation choices.

    Attributes:
        epochs: Maximum number of epochs; early stopping may end sooner.
        learning_rate: Constant Adam step size.
        batch_size: Sentence pairs per batch.
        dropout: Dropout probability applied while training.
        early_stopping: Whether to stop on stalled validation loss.
        patience: Epochs without improvement tolerated before stopping.
        seed: Seed for initialization, shuffling and dropout.
        beta1: Adam first-moment decay.
        beta2: Adam second-moment decay.
        adam_eps: Adam denominator epsilon.
        clip_norm: Global gradient-norm clip; 0 disables clipping.
        run_label: Dataset composition label written to the loss log.

    """

    epochs: int = field(default=5)
    learning_rate: float = field(default=5e-4)
    batch_size: int = field(default=64)
    dropout: float = field(default=0.1)
    early_stopping: bool = field(default=True)
    patience: int = field(default=3)
    seed: int = field(default=0)
    beta1: float = field(default=0.9)
    beta2: float = field(default=0.999)
    adam_eps: float = field(default=1e-9)
    clip_norm: float = field(default=1.0)
    run_label: str = field(default="base")

    def __post_init__(self) -> None:
        """Validate configuration after initialization."""
        _validate_positive(self.epochs, "epochs")
        _validate_positive(self.batch_size, "batch_size")
        _validate_positive(self.patience, "patience")
        _validate_positive_float(self.learning_rate, "learning_rate")
        _validate_probability(self.dropout, "dropout")
        _validate_probability(self.beta1, "beta1")
        _validate_probability(self.beta2, "beta2")
        _validate_positive_float(self.adam_eps, "adam_eps")
        if self.clip_norm < 0:
            msg = f"Clip_norm must be non-negative, got {self.clip_norm}"
            raise ConfigurationError(msg)
        object.__setattr__(self, "run_label", self.run_label.strip() or "base")


@dataclass(frozen=True)
class PipelineConfig:
    """Corpus cleaning, splitting and vocabulary settings.

    Attributes:
        min_len: Shortest allowed sentence, in tokens.
        max_len: Longest allowed sentence, in tokens.
        max_ratio: Largest allowed length ratio between the two sides.
        valid_size: Pairs held out for validation.
        test_size: Pairs held out for testing.
        seed: Seed of the split shuffle.
        min_freq: Minimum token frequency kept in a vocabulary.

    """

    min_len: int = field(default=1)
    max_len: int = field(default=80)
    max_ratio: float = field(default=9.0)
    valid_size: int = field(default=1000)
    test_size: int = field(default=1000)
    seed: int = field(default=0)
    min_freq: int = field(default=1)

    def __post_init__(self) -> None:
        """Validate configuration after initialization."""
        _validate_positive(self.min_len, "min_len")
        _validate_positive(self.max_len, "max_len")
        if self.min_len > self.max_len:
            msg = f"Min_len ({self.min_len}) must not exceed max_len ({self.max_len})"
            raise ConfigurationError(msg)
        if self.max_ratio < 1.0:
            msg = f"Max_ratio must be at least 1, got {self.max_ratio}"
            raise ConfigurationError(msg)
        _validate_non_negative(self.valid_size, "valid_size")
        _validate_non_negative(self.test_size, "test_size")
        _validate_positive(self.min_freq, "min_freq")


PATH_KEYS = (
    "train_src",
    "train_tgt",
    "valid_src",
    "valid_tgt",
    "test_src",
    "test_tgt",
    "mix_src",
    "mix_tgt",
    "src_vocab",
    "tgt_vocab",
    "checkpoint",
    "log",
)


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    msg = f"Expected a boolean, got {raw!r}"
    raise ConfigurationError(msg)


def _converter(annotation: Any) -> Callable[[str], Any]:
    if annotation in (bool, "bool"):
        return _parse_bool
    if annotation in (int, "int"):
        return int
    if annotation in (float, "float"):
        return float
    return str


_MODEL_KEYS = {
    "dropout" if f.name == "dropout_p" else f.name: (f.name, _converter(f.type))
    for f in fields(ModelConfig)
    if f.name not in {"src_vocab_size", "tgt_vocab_size"}
}
_TRAIN_KEYS = {f.name: (f.name, _converter(f.type)) for f in fields(TrainConfig)}
_PIPELINE_KEYS = {f.name: (f.name, _converter(f.type)) for f in fields(PipelineConfig)}


def load_config_file(path: Path) -> dict[str, str]:
    """Read a flat ``key = value`` configuration file.

    Blank lines and lines starting with ``#`` are ignored.

    Args:
        path: Location of the configuration file

    Returns:
        Raw string values keyed by configuration key

    Raises:
        ConfigurationError: If a line is malformed or a key repeats

    """
    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            msg = f"{path}:{lineno}: expected 'key = value', got {raw_line!r}"
            raise ConfigurationError(msg)
        if key in values:
            msg = f"{path}:{lineno}: duplicate key {key!r}"
            raise ConfigurationError(msg)
        values[key] = value.strip()
    logger.debug("Loaded config file - path: %s, keys: %d", path, len(values))
    return values


@dataclass(frozen=True)
class RunManifest:
    """Fully resolved inputs of a command.

    Attributes:
        config_path: File the values came from, if any.
        model: Model hyperparameters (vocabulary sizes are placeholders until
            vocabularies are loaded).
        train: Optimization settings.
        pipeline: Preprocessing and vocabulary settings.
        paths: Resolved input and output paths keyed by config key.

    """

    config_path: Path | None
    model: ModelConfig
    train: TrainConfig
    pipeline: PipelineConfig
    paths: Mapping[str, Path]

    @property
    def seed(self) -> int:
        """Seed honored by every random source of the run."""
        return self.train.seed

    @property
    def run_label(self) -> str:
        """Dataset composition label of the run."""
        return self.train.run_label

    def require(self, *keys: str) -> list[Path]:
        """Return the requested paths, failing if any is unset.

        Raises:
            ConfigurationError: If a requested key has no path

        """
        missing = [key for key in keys if key not in self.paths]
        if missing:
            msg = f"Missing required path settings: {', '.join(missing)}"
            raise ConfigurationError(msg)
        return [self.paths[key] for key in keys]


def resolve_manifest(
    values: Mapping[str, str],
    overrides: Mapping[str, str] | None = None,
    *,
    config_path: Path | None = None,
) -> RunManifest:
    """Resolve raw configuration values into typed configs.

    Overrides (from command-line flags) take precedence over file values.
    Relative paths are resolved against the config file's directory.

    Args:
        values: Raw values from a config file
        overrides: Raw values from flags
        config_path: Location of the config file, for path resolution

    Returns:
        The resolved run manifest

    Raises:
        ConfigurationError: On unknown keys or invalid values

    """
    merged = {**values, **(overrides or {})}
    model_kwargs: dict[str, Any] = {}
    train_kwargs: dict[str, Any] = {}
    pipeline_kwargs: dict[str, Any] = {}
    paths: dict[str, Path] = {}
    base_dir = config_path.parent if config_path is not None else Path.cwd()

    unknown = sorted(
        key
        for key in merged
        if key not in _MODEL_KEYS
        and key not in _TRAIN_KEYS
        and key not in _PIPELINE_KEYS
        and key not in PATH_KEYS
    )
    if unknown:
        msg = f"Unknown config keys: {', '.join(unknown)}"
        raise ConfigurationError(msg)

    for key, raw in merged.items():
        try:
            if key in PATH_KEYS:
                path = Path(raw).expanduser()
                paths[key] = path if path.is_absolute() else (base_dir / path).resolve()
                continue
            if key == "dropout":
                # One dropout setting drives both the model and the trainer.
                model_kwargs["dropout_p"] = float(raw)
                train_kwargs["dropout"] = float(raw)
                continue
            for table, kwargs in (
                (_MODEL_KEYS, model_kwargs),
                (_TRAIN_KEYS, train_kwargs),
                (_PIPELINE_KEYS, pipeline_kwargs),
            ):
                if key in table:
                    name, convert = table[key]
                    kwargs[name] = convert(raw)
        except ValueError as err:
            if isinstance(err, ConfigurationError):
                raise
            msg = f"Invalid value for {key!r}: {raw!r}"
            raise ConfigurationError(msg) from err

    return RunManifest(
        config_path=config_path,
        model=ModelConfig(**model_kwargs),
        train=TrainConfig(**train_kwargs),
        pipeline=PipelineConfig(**pipeline_kwargs),
        paths=paths,
    )


def with_vocab_sizes(config: ModelConfig, src_vocab_size: int, tgt_vocab_size: int) -> ModelConfig:
    """Return a copy of ``config`` sized for the given vocabularies."""
    return replace(config, src_vocab_size=src_vocab_size, tgt_vocab_size=tgt_vocab_size)
