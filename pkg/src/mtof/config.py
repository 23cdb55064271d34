"""Run configuration: one JSON file, dotted ``key=value`` overrides, stable hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from mtof.data_model import DEFAULT_CONF_THRESHOLD, DEFAULT_CROP, DEFAULT_RESIZE
from mtof.representation import TrainConfig
from mtof.synth_gen import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    data_root: str = "data"
    out_dir: str = "runs"


@dataclass
class SynthSection:
    n_objects: int = 6
    samples_per_object: int = 10
    n_profiles: int = 5
    image_size: list[int] = field(default_factory=lambda: [80, 80])  # (width, height)
    seed: int = 0


@dataclass
class PreprocessConfig:
    # (width, height); null keeps stored size
    resize: list[int] | None = field(default_factory=lambda: list(DEFAULT_RESIZE))
    crop: int | None = DEFAULT_CROP
    conf_threshold: float = DEFAULT_CONF_THRESHOLD


@dataclass
class ModelConfig:
    widths: list[int] = field(default_factory=lambda: [32, 64, 128])
    lambda_rec_m: float = 1.0
    lambda_rec_t: float = 1.0
    lambda_rep: float = 1.0
    hidden: int = 128


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    staged: bool = False
    finetune: bool = False
    augment: bool = False


@dataclass
class ProtocolConfig:
    train_displays: list[str] = field(default_factory=list)  # empty: first half (rounded up) of sorted ids
    mode: str = "unseen"


SECTIONS = {
    "paths": PathsConfig,
    "synth": SynthSection,
    "preprocessing": PreprocessConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "protocol": ProtocolConfig,
}


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: SynthSection = field(default_factory=SynthSection)
    preprocessing: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, section in SECTIONS.items():
            values = data.get(name, {})
            if not isinstance(values, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(section)}
            bad = set(values) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            parts[name] = section(**values)
        cfg = cls(**parts)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        p = self.preprocessing
        if p.resize is not None and (len(p.resize) != 2 or min(p.resize) < 1):
            raise ConfigError(f"preprocessing.resize must be [width, height], got {p.resize}")
        if p.crop is not None and p.crop < 1:
            raise ConfigError("preprocessing.crop must be positive or null")
        if not 0.0 <= p.conf_threshold <= 1.0:
            raise ConfigError("preprocessing.conf_threshold must lie in [0, 1]")
        if self.protocol.mode not in ("target", "unseen", "all"):
            raise ConfigError(f"protocol.mode must be target, unseen or all, got {self.protocol.mode!r}")
        s = self.synth
        if len(s.image_size) != 2:
            raise ConfigError("synth.image_size must be [width, height]")
        try:
            self.train_config()
            self.synth_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        m, t = self.model, self.training
        return TrainConfig(
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            epochs=t.epochs,
            lambda_rec_m=m.lambda_rec_m,
            lambda_rec_t=m.lambda_rec_t,
            lambda_rep=m.lambda_rep,
            widths=tuple(m.widths),
            crop=self.preprocessing.crop,
            seed=t.seed,
            staged=t.staged,
            finetune=t.finetune,
            augment=t.augment,
            hidden=m.hidden,
        )

    def synth_config(self) -> SynthConfig:
        s = self.synth
        return SynthConfig.from_dict(
            {
                "n_objects": s.n_objects,
                "samples_per_object": s.samples_per_object,
                "n_profiles": s.n_profiles,
                "image_size": s.image_size,
                "seed": s.seed,
                "conf_threshold": self.preprocessing.conf_threshold,
            }
        )

    def digest(self) -> str:
        """Short hash of everything but output paths; names versioned output dirs."""
        d = self.to_dict()
        d.pop("paths")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """``section.key=value`` pairs; values parse as JSON, else as strings."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        section, name = key.split(".", 1)
        data.setdefault(section, {})[name] = parse_value(value)
    return data


def load_config(path: Path | None, overrides: list[str] = ()) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(apply_overrides(data, list(overrides)))
