"""Synthetic motion-action clips: generation, on-disk format, frame sampling and augmentation.

Each class is a parametric skeletal motion. Frames show the body keypoints as bright blobs on
a smooth random texture. Classes named in a pose pair share one appearance stream per clip
index and hide their arms in RGB, so the pair is told apart only by its keypoint trajectories.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .config import ConfigError, DatasetSpec
from .heatmap import dump_keypoints, parse_keypoints, render_clip
from .models import ClassEntry, DatasetManifest, Keypoint, KeypointFrame, SamplerConfig, VideoClip
from .numerics import DTYPE, ShapeError, load_tensor, save_tensor

LOGGER = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
PAIR_RATIO_LIMIT = 0.05

# COCO-18 body layout in body units (origin at the neck, y pointing down, right side at -x).
BASE_POSE = np.array(
    [
        [0.0, -0.45],  # nose
        [0.0, 0.0],  # neck
        [-0.4, 0.05],  # right shoulder
        [-0.5, 0.5],  # right elbow
        [-0.55, 0.95],  # right wrist
        [0.4, 0.05],  # left shoulder
        [0.5, 0.5],  # left elbow
        [0.55, 0.95],  # left wrist
        [-0.25, 1.0],  # right hip
        [-0.28, 1.5],  # right knee
        [-0.3, 2.0],  # right ankle
        [0.25, 1.0],  # left hip
        [0.28, 1.5],  # left knee
        [0.3, 2.0],  # left ankle
        [-0.1, -0.55],  # right eye
        [0.1, -0.55],  # left eye
        [-0.2, -0.5],  # right ear
        [0.2, -0.5],  # left ear
    ]
)
R_ELBOW, R_WRIST, L_ELBOW, L_WRIST = 3, 4, 6, 7
ARM_KEYPOINTS = (R_ELBOW, R_WRIST, L_ELBOW, L_WRIST)
ANKLES = (10, 13)
KNEES = (9, 12)

_APPEARANCE_STREAM = 1
_MOTION_STREAM = 2
_PAIR_STREAM = 3


def _progress(t: np.ndarray, freq: float, phase: float) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * (freq * t + phase))


def _lerp(start: tuple[float, float], end: tuple[float, float], u: np.ndarray) -> np.ndarray:
    start_arr, end_arr = np.asarray(start), np.asarray(end)
    return start_arr[None, :] + (end_arr - start_arr)[None, :] * u[:, None]


def _raise_arms(pose: np.ndarray, t: np.ndarray, freq: float, phase: float) -> None:
    u = _progress(t, freq, phase)
    for side, elbow, wrist in ((-1.0, R_ELBOW, R_WRIST), (1.0, L_ELBOW, L_WRIST)):
        pose[:, elbow] = _lerp((0.5 * side, 0.5), (0.55 * side, -0.35), u)
        pose[:, wrist] = _lerp((0.55 * side, 0.95), (0.6 * side, -0.8), u)


def _wave_hand(pose: np.ndarray, t: np.ndarray, freq: float, phase: float) -> None:
    swing = np.sin(2.0 * np.pi * (2.0 * freq * t + phase))
    pose[:, R_ELBOW] = (-0.75, -0.15)
    pose[:, R_WRIST, 0] = -0.75 + 0.35 * swing
    pose[:, R_WRIST, 1] = -0.7


def _clap_hands(pose: np.ndarray, t: np.ndarray, freq: float, phase: float) -> None:
    u = _progress(t, 2.0 * freq, phase)
    for side, elbow, wrist in ((-1.0, R_ELBOW, R_WRIST), (1.0, L_ELBOW, L_WRIST)):
        pose[:, elbow] = (0.45 * side, 0.45)
        pose[:, wrist, 0] = side * (0.08 + 0.45 * u)
        pose[:, wrist, 1] = 0.4


def _jump_up(pose: np.ndarray, t: np.ndarray, freq: float, phase: float) -> None:
    pose[:, :, 1] -= 0.7 * _progress(t, freq, phase)[:, None]


def _squat_down(pose: np.ndarray, t: np.ndarray, freq: float, phase: float) -> None:
    u = _progress(t, freq, phase)
    moving = [index for index in range(pose.shape[1]) if index not in ANKLES]
    pose[:, moving, 1] += 0.5 * u[:, None]
    for knee, side in zip(KNEES, (-1.0, 1.0)):
        pose[:, knee, 0] += 0.2 * side * u


MOTIONS: dict[str, Callable[[np.ndarray, np.ndarray, float, float], None]] = {
    "raise arms": _raise_arms,
    "wave hand": _wave_hand,
    "clap hands": _clap_hands,
    "jump up": _jump_up,
    "squat down": _squat_down,
}
# motions that only move arm keypoints can be used in a pose pair
ARM_ONLY_MOTIONS = frozenset({"raise arms", "wave hand", "clap hands"})


def slugify(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def _texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    coarse = torch.from_numpy(rng.uniform(30.0, 110.0, size=(4, 4, 3))).permute(2, 0, 1)[None]
    smooth = F.interpolate(coarse, size=(height, width), mode="bilinear", align_corners=True)
    return smooth[0].permute(1, 2, 0).numpy()


def _render_frames(
    points: np.ndarray, drawn: Iterable[int], rng: np.random.Generator, height: int, width: int
) -> np.ndarray:
    """(F, 18, 2) pixel keypoints -> (F, H, W, 3) frames with values in 0..255."""

    texture = _texture(rng, height, width)
    color = rng.uniform(170.0, 255.0, size=3)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    drawn = list(drawn)
    frames = np.empty((points.shape[0], height, width, 3))
    for index, frame_points in enumerate(points):
        alpha = np.zeros((height, width))
        for keypoint in drawn:
            x, y = frame_points[keypoint]
            alpha = np.maximum(alpha, np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * 1.2**2)))
        noisy = texture + rng.normal(0.0, 3.0, size=(height, width, 3))
        blended = noisy * (1.0 - alpha[..., None]) + color[None, None, :] * alpha[..., None]
        frames[index] = np.clip(np.rint(blended), 0.0, 255.0)
    return frames


def synthesize_clip(
    class_name: str,
    num_frames: int,
    height: int,
    width: int,
    appearance_rng: np.random.Generator,
    motion_rng: np.random.Generator,
    hide_arms: bool = False,
) -> tuple[np.ndarray, list[KeypointFrame]]:
    """Return (F, H, W, 3) frames and the exact keypoints they were drawn from."""

    if class_name not in MOTIONS:
        raise ConfigError(f"No motion is defined for class {class_name!r}; known: {sorted(MOTIONS)}")
    t = np.arange(num_frames) / num_frames

    # appearance stream: placement, sway and torso jitter (shared across a pose pair)
    scale = appearance_rng.uniform(0.17, 0.21) * min(height, width)
    center_x = width / 2.0 + appearance_rng.uniform(-0.12, 0.12) * width
    neck_y = height * (0.3 + appearance_rng.uniform(-0.04, 0.04))
    sway = 0.08 * np.sin(2.0 * np.pi * (appearance_rng.uniform(0.5, 1.5) * t + appearance_rng.uniform()))
    jitter = appearance_rng.normal(0.0, 0.02, size=(num_frames, len(BASE_POSE), 2))

    # motion stream: the class trajectory and everything attached to the arms
    freq = motion_rng.uniform(1.0, 2.0)
    phase = motion_rng.uniform()
    jitter[:, list(ARM_KEYPOINTS)] = motion_rng.normal(0.0, 0.02, size=(num_frames, len(ARM_KEYPOINTS), 2))
    confidence = motion_rng.uniform(0.7, 1.0, size=(num_frames, len(BASE_POSE)))

    pose = np.repeat(BASE_POSE[None], num_frames, axis=0)
    MOTIONS[class_name](pose, t, freq, phase)
    pose = pose + jitter
    pose[:, :, 0] += sway[:, None]
    pixels = np.empty_like(pose)
    pixels[:, :, 0] = center_x + scale * pose[:, :, 0]
    pixels[:, :, 1] = neck_y + scale * pose[:, :, 1]
    pixels = np.round(pixels, 4)

    drawn = [index for index in range(len(BASE_POSE)) if not (hide_arms and index in ARM_KEYPOINTS)]
    frames = _render_frames(pixels, drawn, appearance_rng, height, width)
    keypoints = [
        KeypointFrame(
            [
                Keypoint(float(x), float(y), round(float(conf), 4), True)
                for (x, y), conf in zip(frame_pixels, frame_conf)
            ]
        )
        for frame_pixels, frame_conf in zip(pixels, confidence)
    ]
    return frames, keypoints


def _write_clip(directory: Path, frames: np.ndarray, keypoints: list[KeypointFrame], label: int, name: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    save_tensor(torch.from_numpy(frames), directory / "frames.bin")
    (directory / "keypoints.json").write_text(dump_keypoints(keypoints), encoding="utf-8")
    meta = {"label": label, "class_name": name, "frames": int(frames.shape[0])}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def pose_pair_statistic(first: list[np.ndarray], second: list[np.ndarray]) -> float:
    """Between-class mean-frame difference relative to the within-class spread of clip means."""

    first_means = np.stack([clip.mean(axis=0) for clip in first])
    second_means = np.stack([clip.mean(axis=0) for clip in second])
    first_center, second_center = first_means.mean(axis=0), second_means.mean(axis=0)
    between = float(np.abs(first_center - second_center).mean())
    within = float(
        np.concatenate(
            [np.abs(first_means - first_center).reshape(len(first), -1).mean(axis=1),
             np.abs(second_means - second_center).reshape(len(second), -1).mean(axis=1)]
        ).mean()
    )
    return between / within if within > 0 else 0.0


def generate_dataset(spec: DatasetSpec, root: Path) -> DatasetManifest:
    """Render every clip of ``spec`` under ``root`` and write the manifest; pure in (spec, seed)."""

    spec.validate()
    pair_of: dict[str, int] = {}
    for pair_index, pair in enumerate(spec.pose_pairs):
        for name in pair:
            if name not in ARM_ONLY_MOTIONS:
                raise ConfigError(f"Class {name!r} moves more than its arms and cannot be in a pose pair")
            pair_of[name] = pair_index

    root.mkdir(parents=True, exist_ok=True)
    classes = [ClassEntry(name=name, id=index) for index, name in enumerate(spec.classes)]
    splits: dict[str, list[str]] = {"train": [], "test": []}
    pair_frames: dict[str, list[np.ndarray]] = {name: [] for name in pair_of}
    per_split = (("train", 0, spec.train_clips_per_class), ("test", spec.train_clips_per_class, spec.test_clips_per_class))

    for split, offset, count in per_split:
        for entry in classes:
            for local in range(count):
                clip_index = offset + local
                if entry.name in pair_of:
                    appearance_key = [spec.seed, _PAIR_STREAM, pair_of[entry.name], clip_index]
                else:
                    appearance_key = [spec.seed, _APPEARANCE_STREAM, entry.id, clip_index]
                frames, keypoints = synthesize_clip(
                    entry.name,
                    spec.frames,
                    spec.height,
                    spec.width,
                    np.random.default_rng(appearance_key),
                    np.random.default_rng([spec.seed, _MOTION_STREAM, entry.id, clip_index]),
                    hide_arms=entry.name in pair_of,
                )
                relative = f"clips/{split}/{slugify(entry.name)}_{clip_index:03d}"
                _write_clip(root / relative, frames, keypoints, entry.id, entry.name)
                splits[split].append(relative)
                if entry.name in pair_frames:
                    pair_frames[entry.name].append(frames)

    pair_report = []
    for pair in spec.pose_pairs:
        ratio = pose_pair_statistic(pair_frames[pair[0]], pair_frames[pair[1]])
        if ratio >= PAIR_RATIO_LIMIT:
            LOGGER.warning("Pose pair %s differs in appearance: ratio %.4f", pair, ratio)
        pair_report.append({"classes": list(pair), "appearance_ratio": round(ratio, 6)})

    manifest = DatasetManifest(
        classes=classes,
        splits=splits,
        generator={"spec": spec.to_dict(), "pose_pairs": pair_report},
    )
    (root / MANIFEST_FILE).write_text(json.dumps(manifest.to_dict(), indent=2), encoding="utf-8")
    LOGGER.info(
        "Generated %d train / %d test clips for %d classes in %s",
        len(splits["train"]),
        len(splits["test"]),
        len(classes),
        root,
    )
    return manifest


def load_manifest(root: Path) -> DatasetManifest:
    path = root / MANIFEST_FILE
    if not path.exists():
        raise ConfigError(f"No {MANIFEST_FILE} found in {root}")
    try:
        manifest = DatasetManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path} is not a valid manifest: {exc}") from exc
    ids = sorted(entry.id for entry in manifest.classes)
    if ids != list(range(len(ids))):
        raise ConfigError(f"{path}: class ids must be dense 0..M-1, got {ids}")
    seen: set[str] = set()
    for paths in manifest.splits.values():
        if seen.intersection(paths):
            raise ConfigError(f"{path}: splits share clips")
        seen.update(paths)
    return manifest


def load_clip(root: Path, relative: str) -> VideoClip:
    directory = root / relative
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    keypoints = parse_keypoints(
        json.loads((directory / "keypoints.json").read_text(encoding="utf-8")), source=str(directory)
    )
    return VideoClip(
        frames=load_tensor(directory / "frames.bin"),
        keypoints=keypoints,
        label=int(meta["label"]),
        class_name=meta["class_name"],
        clip_id=relative,
    )


def load_split(root: Path, manifest: DatasetManifest, split: str) -> list[VideoClip]:
    if split not in manifest.splits:
        raise ConfigError(f"Unknown split {split!r}; available: {sorted(manifest.splits)}")
    return [load_clip(root, relative) for relative in manifest.splits[split]]


def sample_frames(clip: VideoClip | int, cfg: SamplerConfig, rng: Optional[np.random.Generator] = None) -> list[int]:
    """One index per equal segment: random inside it for training, its center for evaluation."""

    length = clip if isinstance(clip, int) else clip.num_frames
    steps = cfg.frames
    if length < steps:
        raise ShapeError(f"Clip has {length} frames, fewer than T={steps}")
    if cfg.mode == "eval_segment_center":
        return [int((index + 0.5) * length / steps) for index in range(steps)]
    if rng is None:
        raise ValueError("Training-mode sampling needs a random generator")
    return [int(rng.integers((index * length) // steps, ((index + 1) * length) // steps)) for index in range(steps)]


@dataclass(slots=True)
class AugmentFlags:
    hflip: bool = True
    grayscale: bool = True
    crop: bool = True
    crop_size: int = 28
    hflip_probability: float = 0.5
    grayscale_probability: float = 0.2


def _mirror(frame: KeypointFrame, width: int) -> KeypointFrame:
    return KeypointFrame(
        [
            Keypoint(width - 1.0 - point.x, point.y, point.confidence, True) if point.visible else point
            for point in frame.points
        ]
    )


def _crop_keypoint(point: Keypoint, top: int, left: int, size: int, height: int, width: int) -> Keypoint:
    if not point.visible:
        return point
    # bilinear resize with half-pixel centers maps x -> (x - left + 0.5) * W / size - 0.5
    x = (point.x - left + 0.5) * width / size - 0.5
    y = (point.y - top + 0.5) * height / size - 0.5
    if not (0.0 <= x <= width - 1 and 0.0 <= y <= height - 1):
        # cropped away: hidden rather than clamped onto the border
        return Keypoint(x, y, 0.0, False)
    return Keypoint(x, y, point.confidence, True)


def _crop_keypoints(frame: KeypointFrame, top: int, left: int, size: int, height: int, width: int) -> KeypointFrame:
    return KeypointFrame([_crop_keypoint(point, top, left, size, height, width) for point in frame.points])


def _crop_resize(images: torch.Tensor, top: int, left: int, size: int) -> torch.Tensor:
    height, width = images.shape[1:3]
    patch = images[:, top : top + size, left : left + size, :].permute(0, 3, 1, 2)
    resized = F.interpolate(patch, size=(height, width), mode="bilinear", align_corners=False)
    return resized.permute(0, 2, 3, 1).contiguous()


def grayscale(frames: torch.Tensor) -> torch.Tensor:
    # integer weights keep already-gray integer pixels exact
    luma = (frames[..., 0] * 299.0 + frames[..., 1] * 587.0 + frames[..., 2] * 114.0) / 1000.0
    return luma.unsqueeze(-1).expand_as(frames).contiguous()


def augment(
    frames: torch.Tensor,
    heatmaps: Optional[torch.Tensor],
    rng: np.random.Generator,
    flags: AugmentFlags,
    keypoints: Optional[list[KeypointFrame]] = None,
) -> tuple[torch.Tensor, Optional[torch.Tensor], Optional[list[KeypointFrame]]]:
    """Random flip, grayscale and crop-resize drawn once per clip.

    Geometric transforms hit frames, heatmaps and keypoints alike; grayscale touches frames only.
    Returns ``(frames, heatmaps, keypoints)``.
    """

    height, width = int(frames.shape[1]), int(frames.shape[2])
    if heatmaps is not None and heatmaps.shape[:3] != frames.shape[:3]:
        raise ShapeError(f"Heatmaps {tuple(heatmaps.shape)} are not aligned with frames {tuple(frames.shape)}")
    if flags.crop and (flags.crop_size > height or flags.crop_size > width or flags.crop_size < 1):
        raise ShapeError(f"Crop {flags.crop_size} does not fit a {height}x{width} frame")

    # draws happen in a fixed order so enabling one flag never shifts another's stream
    do_flip = rng.uniform() < flags.hflip_probability
    do_gray = rng.uniform() < flags.grayscale_probability
    top = int(rng.integers(0, height - flags.crop_size + 1)) if flags.crop else 0
    left = int(rng.integers(0, width - flags.crop_size + 1)) if flags.crop else 0

    if flags.hflip and do_flip:
        frames = torch.flip(frames, dims=[2])
        heatmaps = torch.flip(heatmaps, dims=[2]) if heatmaps is not None else None
        keypoints = [_mirror(frame, width) for frame in keypoints] if keypoints is not None else None
    if flags.grayscale and do_gray:
        frames = grayscale(frames)
    if flags.crop:
        frames = _crop_resize(frames, top, left, flags.crop_size)
        heatmaps = _crop_resize(heatmaps, top, left, flags.crop_size) if heatmaps is not None else None
        if keypoints is not None:
            keypoints = [_crop_keypoints(frame, top, left, flags.crop_size, height, width) for frame in keypoints]
    return frames, heatmaps, keypoints


def prepare_clip(
    clip: VideoClip,
    sampler: SamplerConfig,
    rng: Optional[np.random.Generator],
    flags: Optional[AugmentFlags],
    sigma: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Sampled (T, H, W, 3) frames and (T, H, W, 1) heatmaps, both scaled to [0, 1].

    Heatmaps are rendered after augmentation from the transformed keypoints; keypoints the crop
    removes from the frame are dropped from the heatmap.
    """

    indices = sample_frames(clip, sampler, rng)
    frames = clip.frames[indices].to(DTYPE)
    keypoints = [clip.keypoints[index] for index in indices]
    if flags is not None:
        if rng is None:
            raise ValueError("Augmentation needs a random generator")
        frames, _, keypoints = augment(frames, None, rng, flags, keypoints)
    heatmaps = render_clip(keypoints, int(frames.shape[1]), int(frames.shape[2]), sigma)
    return frames / 255.0, heatmaps / 255.0
