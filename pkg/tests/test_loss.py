import math
from typing import Callable

import numpy as np
import pytest
import torch

from pose_vcs.loss import loss_c2v, loss_total, loss_v2c
from pose_vcs.models import Batch
from pose_vcs.numerics import DTYPE, NumericalError, as_tensor, grad_check


def _batch(rng: np.random.Generator, size: int, dim: int, classes: int) -> Batch:
    return Batch(
        video_embs=as_tensor(rng.normal(size=(size, dim))),
        class_embs=as_tensor(rng.normal(size=(size, dim))),
        labels=[int(label) for label in rng.integers(0, classes, size=size)],
    )


def _directional_oracle(anchors: np.ndarray, others: np.ndarray, labels: list[int], tau: float) -> float:
    anchors = anchors.astype(np.longdouble)
    others = others.astype(np.longdouble)
    size = len(labels)
    total = np.longdouble(0.0)
    for i in range(size):
        logits = [
            np.dot(anchors[i], others[j]) / (np.sqrt(np.dot(anchors[i], anchors[i])) * np.sqrt(np.dot(others[j], others[j]))) / tau
            for j in range(size)
        ]
        top = max(logits)
        log_norm = top + np.log(sum(np.exp(value - top) for value in logits))
        positives = [m for m in range(size) if labels[m] == labels[i]]
        total += sum(logits[m] - log_norm for m in positives) / len(positives)
    return float(-total / size)


def test_single_pair_has_zero_loss() -> None:
    batch = Batch(video_embs=as_tensor([[1.0, 2.0]]), class_embs=as_tensor([[-3.0, 0.5]]), labels=[4])

    assert loss_v2c(batch, 0.01).item() == 0.0
    assert loss_c2v(batch, 0.01).item() == 0.0
    assert loss_total(batch, 0.01).item() == 0.0


def test_two_orthogonal_pairs() -> None:
    eye = torch.eye(2, dtype=DTYPE)
    batch = Batch(video_embs=eye, class_embs=eye.clone(), labels=[0, 1])

    expected = math.log(1.0 + math.exp(-1.0))
    assert loss_v2c(batch, 1.0).item() == pytest.approx(expected, abs=1e-12)
    assert loss_c2v(batch, 1.0).item() == pytest.approx(expected, abs=1e-12)
    assert loss_total(batch, 1.0).item() == pytest.approx(0.31326, abs=1e-5)


def test_directions_mirror_each_other() -> None:
    rng = np.random.default_rng(0)
    for _ in range(10):
        batch = _batch(rng, 5, 4, 3)

        assert loss_c2v(batch, 0.1).item() == pytest.approx(loss_v2c(batch.swapped(), 0.1).item(), abs=1e-12)


def test_total_is_the_average_of_both_directions() -> None:
    batch = _batch(np.random.default_rng(1), 6, 3, 2)

    expected = (loss_v2c(batch, 0.2) + loss_c2v(batch, 0.2)) / 2

    assert loss_total(batch, 0.2).item() == expected.item()


def test_loss_is_invariant_to_batch_order() -> None:
    rng = np.random.default_rng(2)
    batch = _batch(rng, 6, 4, 3)
    order = rng.permutation(6)
    shuffled = Batch(
        video_embs=batch.video_embs[order],
        class_embs=batch.class_embs[order],
        labels=[batch.labels[index] for index in order],
    )

    assert loss_total(shuffled, 0.1).item() == pytest.approx(loss_total(batch, 0.1).item(), abs=1e-12)


def test_loss_matches_scalar_oracle() -> None:
    rng = np.random.default_rng(3)
    for _ in range(50):
        size, dim = int(rng.integers(1, 7)), int(rng.integers(1, 9))
        batch = _batch(rng, size, dim, int(rng.integers(1, 4)))
        tau = float(rng.uniform(0.01, 1.0))
        video, classes = batch.video_embs.numpy(), batch.class_embs.numpy()

        v2c = _directional_oracle(classes, video, batch.labels, tau)
        c2v = _directional_oracle(video, classes, batch.labels, tau)

        assert loss_v2c(batch, tau).item() == pytest.approx(v2c, abs=1e-10)
        assert loss_c2v(batch, tau).item() == pytest.approx(c2v, abs=1e-10)
        assert loss_v2c(batch, tau).item() >= 0.0
        assert loss_c2v(batch, tau).item() >= 0.0


def test_duplicate_rows_match_oracle() -> None:
    row = np.array([[0.3, -1.0, 2.0]])
    video = np.repeat(row, 3, axis=0)
    classes = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    batch = Batch(video_embs=as_tensor(video), class_embs=as_tensor(classes), labels=[0, 0, 1])

    assert loss_v2c(batch, 0.05).item() == pytest.approx(_directional_oracle(classes, video, [0, 0, 1], 0.05), abs=1e-10)
    assert loss_c2v(batch, 0.05).item() == pytest.approx(_directional_oracle(video, classes, [0, 0, 1], 0.05), abs=1e-10)


def test_loss_gradient_matches_finite_differences() -> None:
    batch = _batch(np.random.default_rng(4), 4, 3, 2)
    dim = batch.video_embs.shape[1]

    def objective(tau: float) -> Callable[[torch.Tensor], torch.Tensor]:
        def value(x: torch.Tensor) -> torch.Tensor:
            video, classes = x.view(2, batch.size, dim)
            return loss_total(Batch(video_embs=video, class_embs=classes, labels=batch.labels), tau)

        return value

    point = torch.stack([batch.video_embs, batch.class_embs]).reshape(-1)

    assert grad_check(objective(1.0), point) < 1e-4
    assert grad_check(objective(0.01), point, eps=1e-6) < 1e-3


def _rows_with_norms(rng: np.random.Generator, size: int, dim: int) -> np.ndarray:
    rows = rng.normal(size=(size, dim))
    return rows * (rng.uniform(0.5, 2.0, size=(size, 1)) / np.linalg.norm(rows, axis=1, keepdims=True))


@pytest.mark.parametrize("loss", [loss_v2c, loss_c2v, loss_total])
def test_randomized_loss_gradients(loss: Callable[[Batch, float], torch.Tensor]) -> None:
    rng = np.random.default_rng(12)
    for _ in range(100):
        size, dim = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        labels = [int(label) for label in rng.integers(0, int(rng.integers(1, 4)), size=size)]
        point = as_tensor(np.concatenate([_rows_with_norms(rng, size, dim), _rows_with_norms(rng, size, dim)]).reshape(-1))

        def objective(tau: float) -> Callable[[torch.Tensor], torch.Tensor]:
            def value(x: torch.Tensor) -> torch.Tensor:
                video, classes = x.view(2, size, dim)
                return loss(Batch(video_embs=video, class_embs=classes, labels=labels), tau)

            return value

        assert grad_check(objective(1.0), point) < 1e-4
        assert grad_check(objective(0.01), point, eps=1e-6) < 1e-3


def test_positive_sets_follow_labels() -> None:
    batch = Batch(video_embs=torch.eye(4, dtype=DTYPE), class_embs=torch.eye(4, dtype=DTYPE), labels=[2, 0, 2, 1])

    assert batch.positive_sets() == [[0, 2], [1], [0, 2], [3]]
    expected = [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    assert torch.equal(batch.positive_mask(), as_tensor(expected))


def test_zero_norm_embedding_raises() -> None:
    batch = Batch(video_embs=torch.zeros(2, 2, dtype=DTYPE), class_embs=torch.eye(2, dtype=DTYPE), labels=[0, 1])

    with pytest.raises(NumericalError):
        loss_total(batch, 0.1)


def test_optimizer_decreases_loss_on_separable_batch() -> None:
    generator = torch.Generator().manual_seed(5)
    video = torch.randn(6, 4, dtype=DTYPE, generator=generator).requires_grad_(True)
    classes = torch.randn(6, 4, dtype=DTYPE, generator=generator).requires_grad_(True)
    labels = [0, 0, 1, 1, 2, 2]
    optimizer = torch.optim.AdamW([video, classes], lr=0.05, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)

    def current() -> torch.Tensor:
        return loss_total(Batch(video_embs=video, class_embs=classes, labels=labels), 0.1)

    initial = current().item()
    for _ in range(50):
        optimizer.zero_grad()
        current().backward()
        optimizer.step()

    assert current().item() < initial
