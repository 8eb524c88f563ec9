"""Run configuration: a flat, sectioned key/value text file (INI syntax)
mapped onto the dataclass configs. Unknown sections or keys are errors
that name the offender; every value error names its key.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field

from .encoder import EncoderConfig
from .fusion import FusionConfig
from .models import BASELINE_KINDS, ModelVariant, TextConfig
from .synth import SynthConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class PathsConfig:
    events: str = "out/events.tsv"
    embeddings: str = "out/embeddings.tete"
    out: str = "out/run"


@dataclass(frozen=True)
class RunPlan:
    horizons: tuple[int, ...] = (7,)
    seeds: tuple[int, ...] = (0,)
    models: tuple[str, ...] = ("full",)
    risk_method: str = "neg_mu"  # or tail_probability
    topic_seed: int = 0

    def __post_init__(self):
        for kind in self.models:
            if kind not in BASELINE_KINDS:
                raise ConfigError(f"run.models: unknown model kind {kind!r}")
        if self.risk_method not in ("neg_mu", "tail_probability"):
            raise ConfigError(f"run.risk_method: unknown method {self.risk_method!r}")


@dataclass(frozen=True)
class AblationFlags:
    mean_pool: bool = False
    modality_dropout: bool = True
    mse_loss: bool = False


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    run: RunPlan = field(default_factory=RunPlan)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    text: TextConfig = field(default_factory=TextConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def variant_for(self, kind: str) -> ModelVariant:
        """Ablation flags apply to the encoder-based kinds only."""
        if kind in ("full", "behavior_only"):
            return ModelVariant(
                kind=kind,
                mean_pool=self.ablation.mean_pool,
                modality_dropout=self.ablation.modality_dropout,
                mse_loss=self.ablation.mse_loss,
            )
        return ModelVariant(kind=kind)


_SECTION_TYPES = {
    "paths": PathsConfig,
    "run": RunPlan,
    "encoder": EncoderConfig,
    "text": TextConfig,
    "fusion": FusionConfig,
    "train": TrainConfig,
    "ablation": AblationFlags,
    "synth": SynthConfig,
}

_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(section: str, key: str, raw: str, ftype):
    try:
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is bool:
            word = raw.strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[word]
        if ftype is str:
            return raw.strip()
        if ftype in (tuple[int, ...],):
            return tuple(int(tok) for tok in raw.split())
        if ftype in (tuple[str, ...],):
            return tuple(raw.split())
        raise ValueError(f"unsupported field type {ftype}")
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from None


def load_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None

    kwargs = {}
    for section in parser.sections():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTION_TYPES[section]
        field_types = {f.name: f.type for f in dataclasses.fields(cls)}
        # dataclass fields carry their literal annotations when the module
        # uses postponed evaluation, so resolve the common ones by name
        values = {}
        for key, raw in parser.items(section):
            if key not in field_types:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            values[key] = _coerce(section, key, raw, _resolve_type(cls, key))
        try:
            kwargs[section] = cls(**values)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"[{section}]: {e}") from None
    try:
        return RunConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _resolve_type(cls, key):
    import typing

    hints = typing.get_type_hints(cls)
    t = hints[key]
    origin = typing.get_origin(t)
    if origin is tuple:
        args = typing.get_args(t)
        if args and args[0] is int:
            return tuple[int, ...]
        return tuple[str, ...]
    return t


def write_default_config(path) -> None:
    """Emit a fully populated config with the package defaults, as a
    starting point for experiments."""
    cfg = RunConfig()
    lines = []
    for section, obj in (
        ("paths", cfg.paths),
        ("run", cfg.run),
        ("encoder", cfg.encoder),
        ("text", cfg.text),
        ("fusion", cfg.fusion),
        ("train", cfg.train),
        ("ablation", cfg.ablation),
        ("synth", cfg.synth),
    ):
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = " ".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
