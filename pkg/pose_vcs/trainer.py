from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch

from .config import MODALITIES, ConfigError, RunConfig, merge_run_config
from .dataset import AugmentFlags, load_manifest, load_split, prepare_clip
from .encoders import EncoderSet, load_encoder_set, save_encoder_set
from .fusion import (
    ABLATION_MODES,
    FusionOptions,
    category_embeddings,
    encode_clips,
    fuse,
    fuse_bundle,
    score_categories,
)
from .loss import loss_total
from .models import Batch, DatasetManifest, SaliencyWeights, SamplerConfig, TrainReport, VideoClip
from .numerics import NumericalError

LOGGER = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.json"

__all__ = [
    "AblationRow",
    "RunConfig",
    "TrainReport",
    "ablate",
    "evaluate",
    "clip_saliencies",
    "evaluate_clips",
    "load_checkpoint",
    "save_checkpoint",
    "train",
    "train_step",
]


@dataclass(slots=True)
class AblationRow:
    mode: str
    modalities: list[str]
    accuracies: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    @property
    def median(self) -> float:
        return statistics.median(self.accuracies) if self.accuracies else 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "modalities": self.modalities,
            "seeds": self.seeds,
            "accuracies": self.accuracies,
            "median_accuracy": self.median,
        }


def seed_everything(seed: int, threads: int = 1) -> None:
    torch.manual_seed(seed)
    if threads > 0:
        torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def augment_flags(config: RunConfig) -> Optional[AugmentFlags]:
    if not (config.hflip or config.grayscale or config.crop):
        return None
    return AugmentFlags(hflip=config.hflip, grayscale=config.grayscale, crop=config.crop, crop_size=config.crop_size)


def prepare_batch(
    clips: Sequence[VideoClip],
    positions: Sequence[int],
    config: RunConfig,
    *,
    epoch: int = 0,
    training: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack sampled clips into (B, T, H, W, 3) frames and (B, T, H, W, 1) heatmaps."""

    mode = "train_random_in_segment" if training else "eval_segment_center"
    sampler = SamplerConfig(frames=config.frames_per_clip, mode=mode)
    flags = augment_flags(config) if training else None
    frames, heatmaps = [], []
    for position in positions:
        # per-clip stream: reproducible no matter how batches are formed
        rng = np.random.default_rng([config.seed, epoch, int(position)]) if training else None
        clip_frames, clip_heatmaps = prepare_clip(clips[position], sampler, rng, flags, config.heatmap_sigma)
        frames.append(clip_frames)
        heatmaps.append(clip_heatmaps)
    return torch.stack(frames), torch.stack(heatmaps)


def compute_loss(
    encoders: EncoderSet,
    frames: torch.Tensor,
    heatmaps: torch.Tensor,
    labels: list[int],
    config: RunConfig,
    options: FusionOptions,
) -> torch.Tensor:
    words, categories = category_embeddings(encoders, options)
    v, p = encode_clips(frames, heatmaps, encoders)
    video_embs = torch.stack([fuse(v[row], p[row], words[label], options)[0] for row, label in enumerate(labels)])
    batch = Batch(video_embs=video_embs, class_embs=categories[labels], labels=labels)
    return loss_total(batch, config.tau_loss)


def train_step(
    encoders: EncoderSet,
    optimizer: torch.optim.Optimizer,
    frames: torch.Tensor,
    heatmaps: torch.Tensor,
    labels: list[int],
    config: RunConfig,
    options: FusionOptions,
) -> float:
    encoders.train()
    optimizer.zero_grad()
    loss = compute_loss(encoders, frames, heatmaps, labels, config, options)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def build_optimizer(encoders: EncoderSet, config: RunConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(
        encoders.parameters(),
        lr=config.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=config.weight_decay,
    )


def predict(
    encoders: EncoderSet, clips: Sequence[VideoClip], config: RunConfig, options: FusionOptions
) -> list[int]:
    encoders.eval()
    predictions: list[int] = []
    with torch.no_grad():
        words, categories = category_embeddings(encoders, options)
        for start in range(0, len(clips), config.batch_size):
            positions = range(start, min(start + config.batch_size, len(clips)))
            frames, heatmaps = prepare_batch(clips, positions, config)
            v, p = encode_clips(frames, heatmaps, encoders)
            for row in range(v.shape[0]):
                index, _ = score_categories(v[row], p[row], words, categories, options)
                predictions.append(index)
    return predictions


def clip_saliencies(
    encoders: EncoderSet, clips: Sequence[VideoClip], config: RunConfig, options: FusionOptions
) -> list[tuple[str, SaliencyWeights]]:
    """Saliency of every clip, conditioned on its ground-truth class words."""

    encoders.eval()
    result: list[tuple[str, SaliencyWeights]] = []
    with torch.no_grad():
        for start in range(0, len(clips), config.batch_size):
            positions = range(start, min(start + config.batch_size, len(clips)))
            frames, heatmaps = prepare_batch(clips, positions, config)
            for row, position in enumerate(positions):
                bundle = encoders.bundle(frames[row], heatmaps[row], clips[position].class_name)
                _, saliency = fuse_bundle(bundle, options)
                result.append((clips[position].clip_id, saliency))
    return result


def top1_accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    if not labels:
        raise ConfigError("Cannot compute accuracy over an empty split")
    if len(predictions) != len(labels):
        raise ValueError("One prediction per label is required")
    return sum(int(pred == label) for pred, label in zip(predictions, labels)) / len(labels)


def per_class_accuracy(predictions: Sequence[int], labels: Sequence[int], class_names: Sequence[str]) -> dict[str, float]:
    result: dict[str, float] = {}
    for class_id, name in enumerate(class_names):
        hits = [pred == class_id for pred, label in zip(predictions, labels) if label == class_id]
        if hits:
            result[name] = sum(hits) / len(hits)
    return result


def evaluate_clips(
    encoders: EncoderSet,
    clips: Sequence[VideoClip],
    config: RunConfig,
    mask: Optional[frozenset[str]] = None,
) -> float:
    options = FusionOptions.from_config(config, mask)
    return top1_accuracy(predict(encoders, clips, config, options), [clip.label for clip in clips])


def _image_size(clips: Sequence[VideoClip]) -> tuple[int, int]:
    if not clips:
        raise ConfigError("The training split is empty")
    return int(clips[0].frames.shape[1]), int(clips[0].frames.shape[2])


def save_checkpoint(encoders: EncoderSet, config: RunConfig, image_size: tuple[int, int], directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    save_encoder_set(encoders, directory / "encoders")
    descriptor = {"config": config.to_dict(), "classes": encoders.class_names, "image_size": list(image_size)}
    (directory / CHECKPOINT_FILE).write_text(json.dumps(descriptor, indent=2), encoding="utf-8")
    return directory


def load_checkpoint(
    directory: Path,
    config_file: Optional[Path] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> tuple[EncoderSet, RunConfig]:
    """Rebuild encoders from a checkpoint; a config file and overrides adjust non-architecture fields."""

    path = directory / CHECKPOINT_FILE
    if not path.exists():
        raise ConfigError(f"{directory} is not a checkpoint (missing {CHECKPOINT_FILE})")
    descriptor = json.loads(path.read_text(encoding="utf-8"))
    config = RunConfig.from_dict(descriptor["config"])
    if config_file is not None or overrides:
        config = merge_run_config(config, config_file, overrides)
    image_size = tuple(int(extent) for extent in descriptor["image_size"])
    encoders = EncoderSet(config, descriptor["classes"], image_size)  # type: ignore[arg-type]
    load_encoder_set(encoders, directory / "encoders")
    return encoders, config


def train(
    config: RunConfig,
    manifest: DatasetManifest,
    data_root: Path,
    out_dir: Optional[Path] = None,
) -> TrainReport:
    """Minibatch AdamW over the symmetric contrastive loss, with per-epoch evaluation."""

    config.validate()
    started = time.perf_counter()
    seed_everything(config.seed, config.threads)
    train_clips = load_split(data_root, manifest, "train")
    test_clips = load_split(data_root, manifest, "test") if "test" in manifest.splits else []
    image_size = _image_size(train_clips)

    encoders = EncoderSet(config, manifest.class_names, image_size)
    if config.init_checkpoint:
        LOGGER.info("Warm-starting encoders from %s", config.init_checkpoint)
        load_encoder_set(encoders, Path(config.init_checkpoint) / "encoders", include_class_table=False)
    options = FusionOptions.from_config(config)
    optimizer = build_optimizer(encoders, config)

    report = TrainReport(config=config.to_dict())
    report.initial_train_accuracy = evaluate_clips(encoders, train_clips, config)
    if test_clips:
        report.initial_test_accuracy = evaluate_clips(encoders, test_clips, config)
    LOGGER.info(
        "Initial accuracy: train %.3f, test %.3f (mask %s)",
        report.initial_train_accuracy,
        report.initial_test_accuracy,
        "+".join(config.modality_mask),
    )

    reference_loss: Optional[float] = None
    diverging_epochs = 0
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_clips))
        batch_losses: list[float] = []
        for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
            positions = [int(position) for position in order[start : start + config.batch_size]]
            frames, heatmaps = prepare_batch(train_clips, positions, config, epoch=epoch, training=True)
            labels = [train_clips[position].label for position in positions]
            try:
                loss = train_step(encoders, optimizer, frames, heatmaps, labels, config, options)
            except NumericalError as exc:
                clip_ids = ", ".join(train_clips[position].clip_id for position in positions)
                raise NumericalError(f"Epoch {epoch}, batch {batch_index} [{clip_ids}]: {exc}") from exc
            LOGGER.debug("epoch %d batch %d loss %.6f", epoch, batch_index, loss)
            batch_losses.append(loss)

        epoch_loss = float(np.mean(batch_losses))
        report.epoch_losses.append(epoch_loss)
        report.train_accuracy.append(evaluate_clips(encoders, train_clips, config))
        if test_clips:
            report.test_accuracy.append(evaluate_clips(encoders, test_clips, config))
        LOGGER.info(
            "Epoch %d/%d: loss %.5f, train acc %.3f, test acc %s",
            epoch,
            config.epochs,
            epoch_loss,
            report.train_accuracy[-1],
            f"{report.test_accuracy[-1]:.3f}" if test_clips else "n/a",
        )

        if reference_loss is None:
            reference_loss = epoch_loss
        elif epoch_loss > config.divergence_factor * reference_loss:
            diverging_epochs += 1
            if diverging_epochs >= config.divergence_patience:
                LOGGER.warning("Loss diverged for %d epochs; stopping at epoch %d", diverging_epochs, epoch)
                report.stopped_early = True
                break
        else:
            diverging_epochs = 0

    final_clips = test_clips or train_clips
    predictions = predict(encoders, final_clips, config, options)
    report.per_class_accuracy = per_class_accuracy(
        predictions, [clip.label for clip in final_clips], manifest.class_names
    )
    if out_dir is not None:
        save_checkpoint(encoders, config, image_size, out_dir / "checkpoint")
        report.checkpoint = "checkpoint"
    report.wall_time_seconds = time.perf_counter() - started
    return report


def evaluate(
    checkpoint: Path,
    data_root: Path,
    split: str = "test",
    modality_mask: Optional[frozenset[str]] = None,
    config_file: Optional[Path] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> float:
    """Top-1 accuracy of a saved checkpoint on one split of a dataset."""

    manifest = load_manifest(data_root)
    encoders, config = load_checkpoint(checkpoint, config_file, overrides)
    if encoders.class_names != manifest.class_names:
        raise ConfigError(
            f"Checkpoint classes {encoders.class_names} do not match dataset classes {manifest.class_names}"
        )
    clips = load_split(data_root, manifest, split)
    if not clips:
        raise ConfigError(f"Split {split!r} is empty")
    seed_everything(config.seed, config.threads)
    return evaluate_clips(encoders, clips, config, modality_mask)


def ablate(
    config: RunConfig,
    manifest: DatasetManifest,
    data_root: Path,
    out_dir: Optional[Path] = None,
) -> list[AblationRow]:
    """Retrain and evaluate once per modality mode and seed; rows follow the ablation table order."""

    rows: list[AblationRow] = []
    for mode, modalities in ABLATION_MODES.items():
        ordered = [name for name in MODALITIES if name in modalities]
        row = AblationRow(mode=mode, modalities=ordered)
        for seed in config.seeds:
            run_config = replace(config, modality_mask=ordered, seed=seed, ablation_seeds=[])
            run_dir = out_dir / mode.replace("+", "_").lower() / f"seed_{seed}" if out_dir is not None else None
            report = train(run_config, manifest, data_root, run_dir)
            accuracy = report.test_accuracy[-1] if report.test_accuracy else report.initial_test_accuracy
            row.accuracies.append(accuracy)
            row.seeds.append(seed)
            LOGGER.info("Ablation %s seed %d: test accuracy %.3f", mode, seed, accuracy)
        rows.append(row)
    return rows
