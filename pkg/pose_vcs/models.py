from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch

from .numerics import ShapeError

NUM_KEYPOINTS = 18
NUM_HEATMAP_CHANNELS = NUM_KEYPOINTS + 1
BACKGROUND_CHANNEL = NUM_KEYPOINTS


@dataclass(slots=True)
class Keypoint:
    x: float
    y: float
    confidence: float = 1.0
    visible: bool = True

    def __post_init__(self) -> None:
        if not self.visible:
            self.confidence = 0.0

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.confidence if self.visible else 0.0]

    @classmethod
    def from_list(cls, triple: list[float]) -> "Keypoint":
        x, y, confidence = (float(value) for value in triple)
        return cls(x=x, y=y, confidence=confidence, visible=confidence > 0.0)


@dataclass(slots=True)
class KeypointFrame:
    """One person's 18 COCO-layout body keypoints in pixel coordinates."""

    points: list[Keypoint]

    def __post_init__(self) -> None:
        if len(self.points) != NUM_KEYPOINTS:
            raise ShapeError(f"A keypoint frame holds exactly {NUM_KEYPOINTS} points, got {len(self.points)}")

    @classmethod
    def invisible(cls) -> "KeypointFrame":
        return cls([Keypoint(0.0, 0.0, 0.0, False) for _ in range(NUM_KEYPOINTS)])

    def to_list(self) -> list[list[float]]:
        return [point.to_list() for point in self.points]

    @classmethod
    def from_list(cls, triples: list[list[float]]) -> "KeypointFrame":
        return cls([Keypoint.from_list(triple) for triple in triples])


@dataclass(slots=True)
class HeatmapStack:
    full: torch.Tensor
    reduced: torch.Tensor

    @property
    def height(self) -> int:
        return int(self.full.shape[0])

    @property
    def width(self) -> int:
        return int(self.full.shape[1])


@dataclass(slots=True)
class EmbeddingBundle:
    """Frame, pose and word embeddings of one clip plus its class embedding."""

    frames: torch.Tensor
    poses: torch.Tensor
    words: torch.Tensor
    class_emb: torch.Tensor

    def __post_init__(self) -> None:
        dims = {self.frames.shape[-1], self.poses.shape[-1], self.words.shape[-1], self.class_emb.shape[-1]}
        if len(dims) != 1:
            raise ShapeError(f"Embeddings disagree on d: {sorted(dims)}")
        if self.frames.shape != self.poses.shape or self.frames.shape[0] < 1 or self.words.shape[0] < 1:
            raise ShapeError("Need T >= 1 matching frame/pose rows and N >= 1 word rows")


@dataclass(slots=True)
class SaliencyWeights:
    s: torch.Tensor
    tau: float

    def to_dict(self) -> dict:
        return {"tau": self.tau, "weights": [float(value) for value in self.s.detach()]}


@dataclass(slots=True)
class SimilarityMatrix:
    scores: torch.Tensor


@dataclass(slots=True)
class Batch:
    """B (video, class) embedding pairs with their labels."""

    video_embs: torch.Tensor
    class_embs: torch.Tensor
    labels: list[int]

    def __post_init__(self) -> None:
        if self.video_embs.dim() != 2 or self.video_embs.shape != self.class_embs.shape:
            raise ShapeError(
                f"Batch embeddings must be matching B x d matrices, got {tuple(self.video_embs.shape)} "
                f"and {tuple(self.class_embs.shape)}"
            )
        if len(self.labels) != self.video_embs.shape[0] or not self.labels:
            raise ShapeError("Need one label per row and B >= 1")

    @property
    def size(self) -> int:
        return len(self.labels)

    def positive_sets(self) -> list[list[int]]:
        return [[m for m, other in enumerate(self.labels) if other == label] for label in self.labels]

    def positive_mask(self) -> torch.Tensor:
        mask = torch.zeros(self.size, self.size, dtype=self.video_embs.dtype)
        for row, positives in enumerate(self.positive_sets()):
            mask[row, positives] = 1.0
        return mask

    def swapped(self) -> "Batch":
        return Batch(video_embs=self.class_embs, class_embs=self.video_embs, labels=list(self.labels))


@dataclass(slots=True)
class VideoClip:
    frames: torch.Tensor
    keypoints: list[KeypointFrame]
    label: int
    class_name: str
    clip_id: str = ""

    def __post_init__(self) -> None:
        if self.frames.dim() != 4 or self.frames.shape[-1] != 3:
            raise ShapeError(f"Clip frames must be F x H x W x 3, got {tuple(self.frames.shape)}")
        if len(self.keypoints) != self.frames.shape[0]:
            raise ShapeError("One keypoint frame is required per video frame")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass(slots=True)
class ClassEntry:
    name: str
    id: int


@dataclass(slots=True)
class DatasetManifest:
    classes: list[ClassEntry]
    splits: dict[str, list[str]]
    generator: dict = field(default_factory=dict)

    @property
    def class_names(self) -> list[str]:
        return [entry.name for entry in sorted(self.classes, key=lambda item: item.id)]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "classes": [{"name": entry.name, "id": entry.id} for entry in self.classes],
            "splits": {name: list(paths) for name, paths in self.splits.items()},
            "generator": self.generator,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        return cls(
            classes=[ClassEntry(name=item["name"], id=int(item["id"])) for item in data["classes"]],
            splits={name: list(paths) for name, paths in data.get("splits", {}).items()},
            generator=dict(data.get("generator", {})),
        )


@dataclass(slots=True)
class SamplerConfig:
    frames: int = 8
    mode: str = "eval_segment_center"

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise ValueError("T must be at least 1")
        if self.mode not in ("train_random_in_segment", "eval_segment_center"):
            raise ValueError(f"Unknown sampling mode {self.mode!r}")


@dataclass(slots=True)
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    initial_train_accuracy: float = 0.0
    initial_test_accuracy: float = 0.0
    per_class_accuracy: dict[str, float] = field(default_factory=dict)
    stopped_early: bool = False
    checkpoint: Optional[str] = None
    config: dict = field(default_factory=dict)
    wall_time_seconds: float = 0.0

    def to_dict(self) -> dict:
        # wall time is kept out so that reruns serialize identically
        return {
            "epoch_losses": self.epoch_losses,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "initial_train_accuracy": self.initial_train_accuracy,
            "initial_test_accuracy": self.initial_test_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "stopped_early": self.stopped_early,
            "checkpoint": self.checkpoint,
            "config": self.config,
        }
