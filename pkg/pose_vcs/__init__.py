from __future__ import annotations

from typing import TYPE_CHECKING

from .config import ConfigError, DatasetSpec, RunConfig
from .dataset import augment, generate_dataset, sample_frames
from .encoders import EncoderSet, encode_frames, encode_poses, encode_words
from .fusion import aggregate, classify, cosine_similarity, forward_video, pose_gate, temporal_saliency
from .heatmap import reduce_heatmap, render_heatmap
from .loss import loss_c2v, loss_total, loss_v2c
from .numerics import NumericalError, ShapeError, elementwise, grad_check, matmul, softmax
from .trainer import ablate, evaluate, train

if TYPE_CHECKING:  # pragma: no cover - import for type checkers only
    from .cli import app as _cli_app

    app = _cli_app

__all__ = [
    "ConfigError",
    "DatasetSpec",
    "EncoderSet",
    "NumericalError",
    "RunConfig",
    "ShapeError",
    "ablate",
    "aggregate",
    "augment",
    "classify",
    "cosine_similarity",
    "elementwise",
    "encode_frames",
    "encode_poses",
    "encode_words",
    "evaluate",
    "forward_video",
    "generate_dataset",
    "grad_check",
    "loss_c2v",
    "loss_total",
    "loss_v2c",
    "matmul",
    "pose_gate",
    "reduce_heatmap",
    "render_heatmap",
    "sample_frames",
    "softmax",
    "temporal_saliency",
    "train",
    "app",
]


def __getattr__(name: str) -> object:
    if name == "app":
        from .cli import app as cli_app

        return cli_app
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__() -> list[str]:  # pragma: no cover - trivial delegation
    return sorted(list(__all__))
