"""Experiment configuration: one INI file, one section per component.

Every section maps onto a frozen dataclass and is validated by that class, so a
config that loads is a config that can run. ``to_ini`` writes the canonical
form used for hashing and for ``config.example``.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import MlpHyperparams
from .decoders import CODINGS
from .encoder import EncoderConfig
from .network import NetworkParams
from .snn_core import NeuronParams, PlasticityParams

DATA_FORMATS = ("synthetic", "aedat", "csv")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    """Where trials come from.

    ``aedat`` reads recordings and their ``*_labels.csv`` tables (``paths`` may
    list files or directories), ``csv`` reads a directory written by
    ``ingest``, ``synthetic`` generates ``synthetic_per_class`` trials of each
    built-in pattern.
    """

    format: str = "synthetic"
    paths: tuple[str, ...] = ()
    classes: tuple[int, ...] = ()
    max_per_class: int = 0
    synthetic_per_class: int = 50
    synthetic_duration_us: int = 300_000

    def __post_init__(self):
        if self.format not in DATA_FORMATS:
            raise ConfigError(f"data.format must be one of {DATA_FORMATS}, got {self.format!r}")
        if self.format != "synthetic" and not self.paths:
            raise ConfigError(f"data.paths is required for format {self.format!r}")
        for p in self.paths:
            if not Path(p).exists():
                raise ConfigError(f"data path does not exist: {p}")
        if self.max_per_class < 0:
            raise ConfigError("data.max_per_class must be >= 0 (0 keeps everything)")
        if self.synthetic_per_class < 2 or self.synthetic_duration_us <= 0:
            raise ConfigError("need synthetic_per_class >= 2 and a positive synthetic_duration_us")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 1
    network_seed: int = 1
    shuffle_seed: int = 2
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("training.epochs must be >= 1")
        if self.workers < 1:
            raise ConfigError("training.workers must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    codings: tuple[str, ...] = CODINGS
    test_fraction: float = 0.2
    split_seed: int = 3
    n_hidden: int = 32
    lr: float = 0.05
    epochs: int = 300
    batch: int = 16

    def __post_init__(self):
        bad = [c for c in self.codings if c not in CODINGS]
        if bad or not self.codings:
            raise ConfigError(f"eval.codings must be a non-empty subset of {CODINGS}, got {self.codings}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("eval.test_fraction must lie in (0, 1)")
        if self.n_hidden < 1 or self.batch < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("eval MLP settings need n_hidden >= 1, batch >= 1, epochs >= 0, lr > 0")

    def mlp(self) -> MlpHyperparams:
        # the MLP draws its init and batch order from the split seed
        return MlpHyperparams(self.n_hidden, self.lr, self.epochs, self.batch, self.split_seed)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/latest"
    write_traces: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    neuron: NeuronParams = field(default_factory=NeuronParams)
    plasticity: PlasticityParams = field(default_factory=PlasticityParams)
    network: NetworkParams = field(default_factory=NetworkParams)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def seeds(self) -> dict[str, int]:
        return {
            "network_seed": self.training.network_seed,
            "shuffle_seed": self.training.shuffle_seed,
            "split_seed": self.eval.split_seed,
        }

    def with_output(self, directory: str) -> "ExperimentConfig":
        return dataclasses.replace(self, output=dataclasses.replace(self.output, directory=str(directory)))


SECTIONS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(raw: str, hint, where: str):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _parse(raw, args[0], where)
    if origin is tuple:
        (item,) = typing.get_args(hint)[:1]
        return tuple(_parse(p, item, where) for p in raw.split(",") if p.strip())
    if hint is bool:
        lowered = raw.lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected {hint.__name__}, got {raw!r}") from None
    return raw


def _build(cls, items: dict[str, str], section: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(items) - names)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")
    kwargs = {k: _parse(v, hints[k], f"[{section}] {k}") for k, v in items.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    unknown = sorted(set(parser.sections()) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")
    hints = typing.get_type_hints(ExperimentConfig)
    parts = {}
    for name in SECTIONS:
        items = dict(parser.items(name)) if parser.has_section(name) else {}
        parts[name] = _build(hints[name], items, name)
    return ExperimentConfig(**parts)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def to_ini(cfg: ExperimentConfig) -> str:
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of every section that affects results (``output`` is excluded)."""
    neutral = dataclasses.replace(cfg, output=OutputConfig())
    return hashlib.sha256(to_ini(neutral).encode("utf-8")).hexdigest()


def example_config() -> str:
    header = (
        "# Default experiment configuration. Every key is optional.\n"
        "# Times are in microseconds, weights in units of w_max.\n\n"
    )
    return header + to_ini(ExperimentConfig())
