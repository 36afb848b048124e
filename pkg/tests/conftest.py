import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from pose_vcs.config import DatasetSpec, RunConfig  # noqa: E402
from pose_vcs.dataset import generate_dataset  # noqa: E402

TINY_SPEC = DatasetSpec(
    classes=["raise arms", "wave hand", "clap hands"],
    train_clips_per_class=4,
    test_clips_per_class=2,
    frames=8,
    height=16,
    width=16,
    seed=3,
    pose_pairs=[["wave hand", "clap hands"]],
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("tiny_dataset")
    generate_dataset(TINY_SPEC, root)
    return root


@pytest.fixture()
def tiny_config(tiny_dataset: Path) -> RunConfig:
    config = RunConfig(
        dataset=str(tiny_dataset),
        frames_per_clip=4,
        embed_dim=8,
        patch_size=8,
        layers=1,
        heads=2,
        width=8,
        learning_rate=1e-3,
        epochs=1,
        batch_size=4,
        crop_size=14,
        heatmap_sigma=1.5,
    )
    config.validate()
    return config
