from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Optional

SCHEMA_VERSION = 1
MODALITIES = ("video", "pose", "text")
CLASS_EMBED_MODES = ("mean", "last_word")


class ConfigError(ValueError):
    """User-facing configuration problem (bad file, unknown key, invalid value)."""


@dataclass(slots=True)
class DatasetSpec:
    """Parameters of the synthetic motion dataset."""

    classes: list[str] = field(default_factory=lambda: ["raise arms", "wave hand", "clap hands"])
    train_clips_per_class: int = 20
    test_clips_per_class: int = 10
    frames: int = 40
    height: int = 32
    width: int = 32
    seed: int = 0
    # class pairs rendered with identical RGB appearance; only their arm trajectories differ
    pose_pairs: list[list[str]] = field(default_factory=lambda: [["wave hand", "clap hands"]])

    def validate(self) -> None:
        if len(self.classes) < 2:
            raise ConfigError("At least two classes are required")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("Class names must be unique")
        if self.train_clips_per_class < 1 or self.test_clips_per_class < 0:
            raise ConfigError("Clip counts must be positive")
        if self.frames < 1 or self.height < 8 or self.width < 8:
            raise ConfigError("Clips need at least one frame and 8x8 pixels")
        paired: set[str] = set()
        for pair in self.pose_pairs:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise ConfigError(f"A pose pair needs two distinct classes, got {pair}")
            for name in pair:
                if name not in self.classes:
                    raise ConfigError(f"Pose pair class {name!r} is not a dataset class")
                if name in paired:
                    raise ConfigError(f"Class {name!r} appears in more than one pose pair")
                paired.add(name)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        spec = cls(**_checked_fields(cls, data))
        spec.validate()
        return spec


@dataclass(slots=True)
class RunConfig:
    """Every knob of a training / evaluation run."""

    dataset: str = "runs/data"
    frames_per_clip: int = 8
    embed_dim: int = 64
    patch_size: int = 8
    layers: int = 2
    heads: int = 2
    width: int = 64
    tau_saliency: float = 0.01
    tau_loss: float = 0.01
    learning_rate: float = 5e-5
    weight_decay: float = 0.01
    epochs: int = 30
    batch_size: int = 16
    modality_mask: list[str] = field(default_factory=lambda: list(MODALITIES))
    seed: int = 0
    ablation_seeds: list[int] = field(default_factory=list)
    literal_eq45: bool = False
    share_vision_weights: bool = False
    class_embed: str = "mean"
    constant_vector_value: float = 0.0
    video_constant_value: float = 1.0
    hflip: bool = True
    grayscale: bool = True
    crop: bool = True
    crop_size: int = 28
    heatmap_sigma: float = 2.0
    threads: int = 1
    divergence_factor: float = 10.0
    divergence_patience: int = 3
    init_checkpoint: Optional[str] = None

    def validate(self) -> None:
        unknown = set(self.modality_mask) - set(MODALITIES)
        if unknown:
            raise ConfigError(f"Unknown modalities in mask: {sorted(unknown)}")
        if not self.modality_mask:
            raise ConfigError("At least one modality must stay enabled")
        if self.tau_saliency <= 0 or self.tau_loss <= 0:
            raise ConfigError("Temperatures must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("Learning rate must be positive")
        if self.frames_per_clip < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("frames_per_clip and batch_size must be >= 1, epochs >= 0")
        if self.embed_dim < 1 or self.width < 1 or self.layers < 1 or self.heads < 1:
            raise ConfigError("Encoder dimensions must be positive")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} is not divisible by heads {self.heads}")
        if self.class_embed not in CLASS_EMBED_MODES:
            raise ConfigError(f"class_embed must be one of {CLASS_EMBED_MODES}")
        if self.heatmap_sigma <= 0:
            raise ConfigError("heatmap_sigma must be positive")

    @property
    def mask(self) -> frozenset[str]:
        return frozenset(self.modality_mask)

    @property
    def seeds(self) -> list[int]:
        return list(self.ablation_seeds) or [self.seed]

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        config = cls(**_checked_fields(cls, data))
        config.validate()
        config.modality_mask = [name for name in MODALITIES if name in config.modality_mask]
        return config


@dataclass(slots=True)
class HeatmapConfig:
    """Rendering parameters of the standalone heatmap command."""

    height: int = 32
    width: int = 32
    sigma: float = 2.0

    def validate(self) -> None:
        if self.height < 8 or self.width < 8:
            raise ConfigError("Heatmaps need at least 8x8 pixels")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "HeatmapConfig":
        config = cls(**_checked_fields(cls, data))
        config.validate()
        return config


# fields that fix parameter shapes; a checkpoint cannot be evaluated with other values
ARCHITECTURE_FIELDS = (
    "embed_dim",
    "patch_size",
    "layers",
    "heads",
    "width",
    "share_vision_weights",
    "class_embed",
)


def _checked_fields(cls: type, data: dict) -> dict:
    payload = dict(data)
    version = payload.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"Unsupported schema_version {version}; expected {SCHEMA_VERSION}")
    known = {item.name for item in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {sorted(unknown)}")
    return payload


def parse_overrides(pairs: Iterable[str]) -> dict[str, Any]:
    """Turn ``key=value`` strings into a dict; values are JSON when they parse as JSON."""

    result: dict[str, Any] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Override {pair!r} is not of the form key=value")
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        result[key.strip()] = value
    return result


def _read_json(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"Config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return data


def load_dataset_spec(path: Path | None, overrides: dict[str, Any] | None = None) -> DatasetSpec:
    data = _read_json(path)
    data.update(overrides or {})
    try:
        return DatasetSpec.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    data = _read_json(path)
    data.update(overrides or {})
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_heatmap_config(path: Path | None, overrides: dict[str, Any] | None = None) -> HeatmapConfig:
    data = _read_json(path)
    data.update(overrides or {})
    try:
        return HeatmapConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def merge_run_config(
    base: RunConfig, path: Path | None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Layer a config file and overrides on top of a stored run config.

    Architecture fields must keep their stored values.
    """

    data = base.to_dict()
    changes = _read_json(path)
    changes.update(overrides or {})
    for name in ARCHITECTURE_FIELDS:
        if name in changes and changes[name] != data[name]:
            raise ConfigError(
                f"{name} is fixed by the checkpoint ({data[name]!r}); cannot change it to {changes[name]!r}"
            )
    data.update(changes)
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
