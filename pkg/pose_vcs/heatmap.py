"""Keypoint heatmaps: 19-channel rendering and the single-channel pose image."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable

import torch

from .config import ConfigError
from .models import BACKGROUND_CHANNEL, NUM_HEATMAP_CHANNELS, NUM_KEYPOINTS, HeatmapStack, KeypointFrame
from .numerics import DTYPE, ShapeError

LOGGER = logging.getLogger(__name__)

PIXEL_MAX = 255.0
DEFAULT_SIGMA = 2.0


def render_heatmap(frame: KeypointFrame, height: int, width: int, sigma: float = DEFAULT_SIGMA) -> torch.Tensor:
    """Gaussian keypoint channels plus a background channel, shape (H, W, 19)."""

    if height < 8 or width < 8:
        raise ShapeError(f"Heatmaps need at least 8x8 pixels, got {height}x{width}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")

    ys = torch.arange(height, dtype=DTYPE).view(height, 1)
    xs = torch.arange(width, dtype=DTYPE).view(1, width)
    full = torch.zeros(height, width, NUM_HEATMAP_CHANNELS, dtype=DTYPE)
    for channel, point in enumerate(frame.points):
        if not point.visible or point.confidence <= 0:
            continue
        x = min(max(point.x, 0.0), width - 1.0)
        y = min(max(point.y, 0.0), height - 1.0)
        squared = (xs - x) ** 2 + (ys - y) ** 2
        full[:, :, channel] = point.confidence * torch.exp(-squared / (2.0 * sigma**2))
    peak = full[:, :, :NUM_KEYPOINTS].amax(dim=-1)
    full[:, :, BACKGROUND_CHANNEL] = (1.0 - peak).clamp(0.0, 1.0)
    return full


def reduce_heatmap(full: torch.Tensor) -> torch.Tensor:
    """Per-pixel max over the 18 keypoint channels, rescaled so the peak is 255."""

    if full.dim() != 3 or full.shape[-1] != NUM_HEATMAP_CHANNELS:
        raise ShapeError(f"Expected an (H, W, {NUM_HEATMAP_CHANNELS}) heatmap, got {tuple(full.shape)}")
    peak = full[:, :, :NUM_KEYPOINTS].amax(dim=-1)
    global_max = float(peak.max())
    if global_max <= 0.0:
        return torch.zeros(*peak.shape, 1, dtype=DTYPE)
    reduced = (peak * (PIXEL_MAX / global_max)).clamp(0.0, PIXEL_MAX)
    reduced[peak == global_max] = PIXEL_MAX
    return reduced.unsqueeze(-1)


def render_stack(frame: KeypointFrame, height: int, width: int, sigma: float = DEFAULT_SIGMA) -> HeatmapStack:
    full = render_heatmap(frame, height, width, sigma)
    return HeatmapStack(full=full, reduced=reduce_heatmap(full))


def render_clip(
    frames: Iterable[KeypointFrame], height: int, width: int, sigma: float = DEFAULT_SIGMA
) -> torch.Tensor:
    """Reduced heatmaps for a sequence of frames, shape (T, H, W, 1), values in [0, 255]."""

    reduced = [render_stack(frame, height, width, sigma).reduced for frame in frames]
    if not reduced:
        return torch.zeros(0, height, width, 1, dtype=DTYPE)
    return torch.stack(reduced)


def load_keypoints(path: Path) -> list[KeypointFrame]:
    """Read a keypoint file: a JSON array of frames, each 18 ``[x, y, confidence]`` triples."""

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_keypoints(data, source=str(path))


def parse_keypoints(data: object, source: str = "keypoints") -> list[KeypointFrame]:
    if not isinstance(data, list):
        raise ConfigError(f"{source}: expected a list of frames")
    frames: list[KeypointFrame] = []
    for index, entry in enumerate(data):
        if not isinstance(entry, list) or len(entry) != NUM_KEYPOINTS:
            raise ConfigError(f"{source}: frame {index} must hold {NUM_KEYPOINTS} keypoints")
        for triple in entry:
            if not isinstance(triple, list) or len(triple) != 3:
                raise ConfigError(f"{source}: frame {index} has a keypoint that is not an [x, y, confidence] triple")
            if not all(isinstance(value, (int, float)) for value in triple):
                raise ConfigError(f"{source}: frame {index} has a non-numeric keypoint value")
        frames.append(KeypointFrame.from_list(entry))
    LOGGER.debug("Parsed %d keypoint frames from %s", len(frames), source)
    return frames


def dump_keypoints(frames: Iterable[KeypointFrame]) -> str:
    return json.dumps([frame.to_list() for frame in frames])
