"""Run configuration: flat ``key = value`` text with dotted section names.

Example::

    # comments start with '#'
    dataset.preset = ETTh1
    dataset.path = data/ETTh1.csv
    model.lookback = 96
    model.horizon = 96
    train.seed = 2023

A ``[section]`` header line prefixes the keys that follow it. Unknown keys and
unparseable values are rejected before any work starts.
"""
from __future__ import annotations

import types
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import DATASET_PRESETS, SplitSpec
from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig


@dataclass
class DatasetSection:
    path: str = ""
    preset: str = ""
    has_date_column: bool = True
    synthetic: bool = False


@dataclass
class SynthSection:
    rows: int = 6000
    n_vars: int = 8
    regime_length: int = 48
    seed: int = 0
    noise: float = 0.1
    lag: int = 0


@dataclass
class SplitSection:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    mode: str = "ratio"


@dataclass
class OutputSection:
    dir: str = ""


@dataclass
class AblateSection:
    variants: list[str] = field(default_factory=lambda: ["crosscnn", "onecnn", "crosslinear", "cnn2d_3", "cnn2d_7", "none"])


@dataclass
class ProfileSection:
    warmup: int = 300
    trials: int = 10_000


@dataclass
class CorrelateSection:
    mode: str = "segments"
    segments: int = 4
    window: int = 4
    start: int = 0
    length: int = 96
    variables: list[int] = field(default_factory=list)


@dataclass
class NoiseSection:
    variable: int = 0
    sigmas: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])


@dataclass
class SweepSection:
    lookbacks: list[int] = field(default_factory=lambda: [48, 96, 192, 336, 720])


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    synth: SynthSection = field(default_factory=SynthSection)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    split: SplitSection | None = None
    output: OutputSection = field(default_factory=OutputSection)
    ablate: AblateSection = field(default_factory=AblateSection)
    profile: ProfileSection = field(default_factory=ProfileSection)
    correlate: CorrelateSection = field(default_factory=CorrelateSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    seeds: list[int] = field(default_factory=list)

    def split_spec(self) -> SplitSpec:
        if self.split is not None:
            return SplitSpec(self.split.train, self.split.val, self.split.test, self.split.mode)
        if self.dataset.preset in DATASET_PRESETS:
            return DATASET_PRESETS[self.dataset.preset]["split"]
        return SplitSpec()

    def model_config(self, n_vars: int) -> ModelConfig:
        values = {"lookback": 96, "horizon": 96, **self.model, "n_vars": n_vars}
        return ModelConfig(**values)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)


_SECTIONS = {
    "dataset": DatasetSection,
    "synth": SynthSection,
    "split": SplitSection,
    "output": OutputSection,
    "ablate": AblateSection,
    "profile": ProfileSection,
    "correlate": CorrelateSection,
    "noise": NoiseSection,
    "sweep": SweepSection,
}
_DICT_SECTIONS = {"model": ModelConfig, "train": TrainConfig}


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _coerce(raw: str, typ, key: str):
    raw = raw.strip()
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if raw.lower() in ("none", "null", ""):
            return None
        return _coerce(raw, args[0], key)
    if origin is list:
        (inner,) = typing.get_args(typ)
        return [_coerce(item, inner, key) for item in raw.split(",") if item.strip()]
    try:
        if typ is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    raise ConfigError(f"{key}: unsupported type {typ}")


def apply_setting(cfg: RunConfig, key: str, raw: str) -> None:
    """Set one dotted key from its text value, validating name and type."""
    key = key.strip()
    if key == "seeds":
        cfg.seeds = _coerce(raw, list[int], key)
        return
    section, _, name = key.partition(".")
    if not name:
        raise ConfigError(f"unknown key {key!r} (expected section.name)")
    if section in _DICT_SECTIONS:
        types_ = _field_types(_DICT_SECTIONS[section])
        if name not in types_ or (section == "model" and name == "n_vars"):
            raise ConfigError(f"unknown key {key!r}")
        getattr(cfg, section)[name] = _coerce(raw, types_[name], key)
        return
    if section not in _SECTIONS:
        raise ConfigError(f"unknown section in key {key!r}")
    if section == "split" and cfg.split is None:
        cfg.split = SplitSection()
    target = getattr(cfg, section)
    types_ = _field_types(type(target))
    if name not in types_:
        raise ConfigError(f"unknown key {key!r}")
    setattr(target, name, _coerce(raw, types_[name], key))


def parse_config(text: str, overrides: list[str] = ()) -> RunConfig:
    cfg = RunConfig()
    prefix = ""
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            prefix = line[1:-1].strip() + "."
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        apply_setting(cfg, prefix + key.strip(), raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        apply_setting(cfg, key, raw)
    validate(cfg)
    return cfg


def load_config(path, overrides: list[str] = ()) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), overrides)


def validate(cfg: RunConfig) -> None:
    if not cfg.dataset.synthetic and not cfg.dataset.path:
        raise ConfigError("dataset.path is required unless dataset.synthetic = true")
    if cfg.dataset.preset and cfg.dataset.preset not in DATASET_PRESETS:
        raise ConfigError(f"unknown dataset preset {cfg.dataset.preset!r}")
    cfg.split_spec()
    cfg.train_config()
    # shape fields are checked again once N is known
    cfg.model_config(n_vars=1)
    if cfg.correlate.mode not in ("segments", "rolling"):
        raise ConfigError(f"correlate.mode must be 'segments' or 'rolling', got {cfg.correlate.mode!r}")


def dump_config(cfg: RunConfig) -> str:
    """Resolved configuration in the same text format (sorted keys)."""
    lines = []
    for section, value in sorted(asdict(cfg).items()):
        if value is None:
            continue
        if section == "seeds":
            lines.append(f"seeds = {','.join(map(str, value))}")
            continue
        for name, item in sorted(value.items()):
            if isinstance(item, list):
                item = ",".join(map(str, item))
            elif isinstance(item, bool):
                item = str(item).lower()
            lines.append(f"{section}.{name} = {item}")
    return "\n".join(lines) + "\n"
