from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Any, List, Optional, Sequence

import typer

try:  # typer>=0.22 vendors its own click; catch the exceptions it actually raises
    from typer import _click as click
except ImportError:  # pragma: no cover
    import click

from .config import (
    MODALITIES,
    ConfigError,
    load_dataset_spec,
    load_heatmap_config,
    load_run_config,
    parse_overrides,
)
from .dataset import generate_dataset, load_manifest, load_split
from .exporter import export_ablation, export_report, export_saliency, format_ablation, write_pgm
from .fusion import FusionOptions
from .heatmap import load_keypoints, render_stack
from .numerics import save_tensor
from .trainer import ablate, clip_saliencies, evaluate, load_checkpoint, train

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

app = typer.Typer(help="Pose-guided video action recognition on synthetic motion clips", add_completion=False)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log per-batch details")) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _parse_mask(raw: Optional[str]) -> Optional[list[str]]:
    if raw is None:
        return None
    names = [name.strip() for name in raw.split(",") if name.strip()]
    unknown = sorted(set(names) - set(MODALITIES))
    if unknown:
        raise ConfigError(f"Unknown modalities {unknown}; choose from {list(MODALITIES)}")
    return names


def _run_overrides(
    settings: Optional[List[str]],
    **flags: Any,
) -> dict[str, Any]:
    overrides = parse_overrides(settings or [])
    overrides.update({key: value for key, value in flags.items() if value is not None})
    return overrides


@app.command()
def gen(
    out: Path = typer.Option(..., "--out", "-o", help="Dataset directory to create"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", exists=True, dir_okay=False, help="JSON config file"),
    seed: Optional[int] = typer.Option(None, help="Generator seed"),
    settings: Optional[List[str]] = typer.Option(None, "--set", help="Override a config field: key=value (repeatable)"),
) -> None:
    """Render the synthetic motion dataset and its manifest."""

    spec = load_dataset_spec(config, _run_overrides(settings, seed=seed))
    manifest = generate_dataset(spec, out)
    typer.echo(
        f"Saved {len(manifest.splits['train'])} train and {len(manifest.splits['test'])} test clips "
        f"({len(manifest.classes)} classes) to {out}"
    )


@app.command()
def heatmap(
    keypoints: Path = typer.Argument(..., exists=True, dir_okay=False, readable=True, help="Keypoint JSON file"),
    out: Path = typer.Option(..., "--out", "-o", help="Directory for tensors and PGM previews"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", exists=True, dir_okay=False, help="JSON config file"),
    height: Optional[int] = typer.Option(None, "--height", "-H", help="Heatmap height in pixels (default 32)"),
    width: Optional[int] = typer.Option(None, "--width", "-W", help="Heatmap width in pixels (default 32)"),
    sigma: Optional[float] = typer.Option(None, help="Gaussian radius in pixels (default 2.0)"),
    settings: Optional[List[str]] = typer.Option(None, "--set", help="Override a config field: key=value (repeatable)"),
) -> None:
    """Render keypoints into reduced (H, W, 1) heatmaps with PGM previews."""

    options = load_heatmap_config(config, _run_overrides(settings, height=height, width=width, sigma=sigma))
    frames = load_keypoints(keypoints)
    out.mkdir(parents=True, exist_ok=True)
    for index, frame in enumerate(frames):
        reduced = render_stack(frame, options.height, options.width, options.sigma).reduced
        save_tensor(reduced, out / f"frame_{index:04d}.bin")
        write_pgm(reduced, out / f"frame_{index:04d}.pgm")
    typer.echo(f"Saved {len(frames)} heatmaps to {out}")


@app.command("train")
def train_command(
    out: Path = typer.Option(..., "--out", "-o", help="Run directory for report and checkpoint"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", exists=True, dir_okay=False, help="JSON config file"),
    data: Optional[str] = typer.Option(None, help="Dataset directory (overrides config 'dataset')"),
    seed: Optional[int] = typer.Option(None, help="Run seed"),
    epochs: Optional[int] = typer.Option(None, help="Number of epochs"),
    lr: Optional[float] = typer.Option(None, "--lr", help="AdamW learning rate"),
    batch_size: Optional[int] = typer.Option(None, help="Minibatch size"),
    mask: Optional[str] = typer.Option(None, help="Enabled modalities, e.g. video,pose,text"),
    settings: Optional[List[str]] = typer.Option(None, "--set", help="Override a config field: key=value (repeatable)"),
) -> None:
    """Train encoders end to end and write report.json plus a checkpoint."""

    run_config = load_run_config(
        config,
        _run_overrides(
            settings,
            dataset=data,
            seed=seed,
            epochs=epochs,
            learning_rate=lr,
            batch_size=batch_size,
            modality_mask=_parse_mask(mask),
        ),
    )
    data_root = Path(run_config.dataset)
    report = train(run_config, load_manifest(data_root), data_root, out)
    path = export_report(report, out)
    final = report.test_accuracy[-1] if report.test_accuracy else report.initial_test_accuracy
    typer.echo(f"Test top-1 {final:.4f}; report saved to {path}")


@app.command("eval")
def eval_command(
    checkpoint: Path = typer.Option(..., exists=True, file_okay=False, help="Checkpoint directory"),
    data: Path = typer.Option(..., exists=True, file_okay=False, help="Dataset directory"),
    out: Path = typer.Option(..., "--out", "-o", help="Directory for eval.json"),
    split: str = typer.Option("test", help="Manifest split to score"),
    mask: Optional[str] = typer.Option(None, help="Modalities to keep (defaults to the checkpoint's)"),
    export_saliency_weights: bool = typer.Option(False, "--saliency/--no-saliency", help="Write per-clip saliency JSON"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", exists=True, dir_okay=False, help="JSON config file"),
    settings: Optional[List[str]] = typer.Option(None, "--set", help="Override a config field: key=value (repeatable)"),
) -> None:
    """Top-1 accuracy of a checkpoint on one dataset split."""

    modalities = _parse_mask(mask)
    selected = frozenset(modalities) if modalities is not None else None
    overrides = _run_overrides(settings)
    accuracy = evaluate(checkpoint, data, split, selected, config, overrides)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"split": split, "modality_mask": sorted(selected) if selected else None, "top1": accuracy}
    (out / "eval.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    if export_saliency_weights:
        encoders, run_config = load_checkpoint(checkpoint, config, overrides)
        clips = load_split(data, load_manifest(data), split)
        saliency_dir = out / "saliency"
        saliency_dir.mkdir(exist_ok=True)
        for clip_id, weights in clip_saliencies(encoders, clips, run_config, FusionOptions.from_config(run_config, selected)):
            export_saliency(weights, saliency_dir / f"{clip_id.replace('/', '__')}.json")
    typer.echo(f"Top-1 accuracy on {split}: {accuracy:.4f}")


@app.command("ablate")
def ablate_command(
    out: Path = typer.Option(..., "--out", "-o", help="Directory for the ablation table and runs"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", exists=True, dir_okay=False, help="JSON config file"),
    data: Optional[str] = typer.Option(None, help="Dataset directory (overrides config 'dataset')"),
    seeds: Optional[str] = typer.Option(None, help="Comma-separated seeds, e.g. 0,1,2,3,4"),
    epochs: Optional[int] = typer.Option(None, help="Number of epochs per mode"),
    settings: Optional[List[str]] = typer.Option(None, "--set", help="Override a config field: key=value (repeatable)"),
) -> None:
    """Retrain once per modality mode and emit the four-row ablation table."""

    seed_list = None
    if seeds is not None:
        try:
            seed_list = [int(item) for item in seeds.split(",") if item.strip()]
        except ValueError as exc:
            raise ConfigError(f"--seeds expects comma-separated integers, got {seeds!r}") from exc
    run_config = load_run_config(
        config, _run_overrides(settings, dataset=data, ablation_seeds=seed_list, epochs=epochs)
    )
    data_root = Path(run_config.dataset)
    rows = ablate(run_config, load_manifest(data_root), data_root, out)
    export_ablation(rows, out)
    typer.echo(format_ablation(rows), nl=False)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Invoke the CLI and map failures to exit codes (1: user error, 2: internal failure)."""

    command = typer.main.get_command(app)
    args = list(argv) if argv is not None else sys.argv[1:]
    try:
        result = command.main(args=args, prog_name="pose-vcs", standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return EXIT_USER_ERROR
    except click.exceptions.Abort:
        typer.echo("Aborted", err=True)
        return EXIT_USER_ERROR
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        typer.echo(f"Error: {exc}", err=True)
        return EXIT_USER_ERROR
    except Exception as exc:  # numerical failures and bugs alike
        LOGGER.exception("Command failed")
        typer.echo(f"Internal error: {exc}", err=True)
        return EXIT_INTERNAL_ERROR
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(run())
