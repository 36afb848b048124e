from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .models import SaliencyWeights, TrainReport
from .trainer import AblationRow


def _dump(payload: object) -> str:
    return json.dumps(payload, ensure_ascii=False, indent=2)


def format_table(headers: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """Left-aligned plain-text table with a dashed rule under the header."""

    cells = [[str(item) for item in headers]] + [[str(item) for item in row] for row in rows]
    widths = [max(len(row[column]) for row in cells) for column in range(len(headers))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def serialize_report(report: TrainReport) -> str:
    return _dump(report.to_dict())


def format_report(report: TrainReport) -> str:
    rows = []
    for epoch, loss in enumerate(report.epoch_losses, start=1):
        test = f"{report.test_accuracy[epoch - 1]:.4f}" if epoch - 1 < len(report.test_accuracy) else "-"
        rows.append([epoch, f"{loss:.6f}", f"{report.train_accuracy[epoch - 1]:.4f}", test])
    table = format_table(["epoch", "loss", "train_top1", "test_top1"], rows)
    header = (
        f"initial train top1: {report.initial_train_accuracy:.4f}\n"
        f"initial test top1:  {report.initial_test_accuracy:.4f}\n"
        f"wall time:          {report.wall_time_seconds:.1f} s\n\n"
    )
    return header + table


def export_report(report: TrainReport, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "report.json"
    path.write_text(serialize_report(report), encoding="utf-8")
    (directory / "report.txt").write_text(format_report(report), encoding="utf-8")
    (directory / "timing.json").write_text(_dump({"wall_time_seconds": report.wall_time_seconds}), encoding="utf-8")
    return path


def load_report(path: Path) -> TrainReport:
    data = json.loads(path.read_text(encoding="utf-8"))
    return TrainReport(**data)


def serialize_ablation(rows: Iterable[AblationRow]) -> str:
    return _dump({"rows": [row.to_dict() for row in rows]})


def format_ablation(rows: Sequence[AblationRow]) -> str:
    body = [
        [row.mode, f"{100.0 * row.median:.2f}", " ".join(f"{100.0 * value:.2f}" for value in row.accuracies)]
        for row in rows
    ]
    return format_table(["modalities", "top1 (median %)", "per seed (%)"], body)


def export_ablation(rows: Sequence[AblationRow], directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "ablation.json"
    path.write_text(serialize_ablation(rows), encoding="utf-8")
    (directory / "ablation.txt").write_text(format_ablation(rows), encoding="utf-8")
    return path


def export_saliency(saliency: SaliencyWeights, path: Path) -> Path:
    path.write_text(_dump(saliency.to_dict()), encoding="utf-8")
    return path


def write_pgm(image: torch.Tensor, path: Path) -> Path:
    """8-bit binary PGM (P5) of an (H, W) or (H, W, 1) image with values in [0, 255]."""

    pixels = image.detach().reshape(image.shape[0], image.shape[1]).numpy()
    data = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + data.tobytes())
    return path


def read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path} is not an 8-bit binary PGM")
    width, height = (int(value) for value in dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)
