import numpy as np
import pytest
import torch

from pose_vcs.config import RunConfig
from pose_vcs.encoders import EncoderSet, encode_frames, encode_poses
from pose_vcs.fusion import (
    ABLATION_MODES,
    FusionOptions,
    aggregate,
    category_embeddings,
    classify,
    cosine_similarity,
    forward_video,
    fuse,
    fuse_bundle,
    pose_gate,
    score_categories,
    similarity_matrix,
    temporal_saliency,
    uniform_saliency,
)
from pose_vcs.models import EmbeddingBundle, SaliencyWeights
from pose_vcs.numerics import DTYPE, NumericalError, ShapeError, as_tensor, grad_check


def _random(rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0) -> torch.Tensor:
    return as_tensor(rng.uniform(low, high, size=shape))


def _saliency_oracle(f: np.ndarray, words: np.ndarray, tau: float) -> np.ndarray:
    f_wide = f.astype(np.longdouble)
    total = np.zeros(f.shape[0], dtype=np.longdouble)
    for word in words.astype(np.longdouble):
        logits = np.array([np.dot(word, row) for row in f_wide]) / tau
        exps = np.exp(logits - logits.max())
        total += exps / exps.sum()
    return (total / words.shape[0]).astype(np.float64)


@pytest.fixture()
def small_encoders() -> EncoderSet:
    torch.manual_seed(0)
    config = RunConfig(embed_dim=8, width=8, layers=1, heads=2)
    return EncoderSet(config, ["raise arms", "wave hand"], (16, 16))


def test_pose_gate_examples() -> None:
    v = as_tensor([[1.0, -2.0], [4.0, 0.5]])

    assert torch.equal(pose_gate(torch.zeros(2, 2, dtype=DTYPE), v), 0.5 * v)
    assert torch.allclose(pose_gate(torch.full((2, 2), 30.0, dtype=DTYPE), v), v, rtol=0.0, atol=1e-9)
    assert pose_gate(torch.full((2, 2), -50.0, dtype=DTYPE), v).abs().max().item() < 1e-20


def test_pose_gate_matches_elementwise_oracle() -> None:
    rng = np.random.default_rng(0)
    p = rng.uniform(-3.0, 3.0, size=(5, 6))
    v = rng.uniform(-3.0, 3.0, size=(5, 6))

    result = pose_gate(as_tensor(p), as_tensor(v))

    expected = v / (1.0 + np.exp(-p))
    assert np.allclose(result.numpy(), expected, rtol=0.0, atol=1e-12)


def test_pose_gate_is_monotone_in_pose() -> None:
    v = as_tensor([[2.0, -3.0]])
    gates = [pose_gate(torch.full((1, 2), value, dtype=DTYPE), v)[0].abs() for value in (-2.0, 0.0, 1.0, 4.0)]

    for lower, upper in zip(gates, gates[1:]):
        assert bool((upper > lower).all())


def test_pose_gate_rejects_mismatched_shapes() -> None:
    with pytest.raises(ShapeError):
        pose_gate(torch.zeros(3, 4, dtype=DTYPE), torch.zeros(3, 5, dtype=DTYPE))


def test_saliency_of_single_frame_and_identical_frames() -> None:
    words = as_tensor([[0.3, -0.2], [1.0, 2.0]])

    single = temporal_saliency(as_tensor([[0.5, 0.7]]), words, 0.01)
    identical = temporal_saliency(as_tensor([[0.5, 0.7]] * 4), words, 0.01)

    assert single.s.tolist() == [1.0]
    assert torch.allclose(identical.s, torch.full((4,), 0.25, dtype=DTYPE), rtol=0.0, atol=1e-15)


def test_saliency_matches_extended_precision_oracle() -> None:
    rng = np.random.default_rng(1)
    f = rng.uniform(-1.0, 1.0, size=(3, 4))
    words = rng.uniform(-1.0, 1.0, size=(2, 4))

    saliency = temporal_saliency(as_tensor(f), as_tensor(words), 0.01)

    assert np.allclose(saliency.s.numpy(), _saliency_oracle(f, words, 0.01), rtol=0.0, atol=1e-9)
    assert saliency.tau == 0.01


def test_saliency_is_a_distribution() -> None:
    rng = np.random.default_rng(2)
    for _ in range(1000):
        steps, count, dim = int(rng.integers(1, 17)), int(rng.integers(1, 7)), int(rng.integers(1, 65))
        tau = float(rng.uniform(0.01, 1.0))

        s = temporal_saliency(_random(rng, steps, dim), _random(rng, count, dim), tau).s

        assert s.shape == (steps,)
        assert bool((s >= 0).all())
        assert abs(s.sum().item() - 1.0) <= 1e-12


def test_saliency_rejects_bad_inputs() -> None:
    with pytest.raises(NumericalError):
        temporal_saliency(torch.ones(2, 3, dtype=DTYPE), torch.ones(1, 3, dtype=DTYPE), 0.0)
    with pytest.raises(ShapeError):
        temporal_saliency(torch.ones(2, 3, dtype=DTYPE), torch.ones(1, 4, dtype=DTYPE), 0.1)


def test_aggregate_examples() -> None:
    f = as_tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])

    one_hot = aggregate(f, SaliencyWeights(s=as_tensor([0.0, 1.0, 0.0]), tau=0.01))
    uniform = aggregate(f, uniform_saliency(3, 0.01, f))

    assert one_hot.tolist() == [3.0, 4.0]
    assert torch.allclose(uniform, f.mean(dim=0), rtol=0.0, atol=1e-15)


def test_aggregate_stays_in_convex_hull() -> None:
    rng = np.random.default_rng(3)
    for _ in range(50):
        f = _random(rng, 6, 5)
        weights = torch.softmax(_random(rng, 6, low=-3.0, high=3.0), dim=0)

        e_v = aggregate(f, SaliencyWeights(s=weights, tau=1.0))

        expected = sum(weights[n] * f[n] for n in range(6))
        assert torch.allclose(e_v, expected, rtol=0.0, atol=1e-12)
        assert bool((e_v <= f.amax(dim=0) + 1e-12).all())
        assert bool((e_v >= f.amin(dim=0) - 1e-12).all())


def test_aggregate_rejects_length_mismatch() -> None:
    with pytest.raises(ShapeError):
        aggregate(torch.ones(3, 2, dtype=DTYPE), SaliencyWeights(s=torch.ones(2, dtype=DTYPE) / 2, tau=0.01))


def test_cosine_similarity_examples() -> None:
    a = as_tensor([1.0, 2.0])

    assert cosine_similarity(a, a).item() == pytest.approx(1.0)
    assert cosine_similarity(a, as_tensor([-2.0, 1.0])).item() == pytest.approx(0.0)
    assert cosine_similarity(a, -a).item() == pytest.approx(-1.0)
    with pytest.raises(NumericalError):
        cosine_similarity(a, torch.zeros(2, dtype=DTYPE))


def test_similarity_matrix_is_bounded() -> None:
    rng = np.random.default_rng(4)

    scores = similarity_matrix(_random(rng, 5, 3), _random(rng, 4, 3)).scores

    assert scores.shape == (5, 4)
    assert bool((scores.abs() <= 1.0).all())


def test_classify_examples() -> None:
    e_v = as_tensor([0.6, -0.8])

    index, scores = classify(e_v, torch.stack([e_v, -e_v]))
    single, _ = classify(e_v, e_v.view(1, -1))
    tied, _ = classify(e_v, torch.stack([-e_v, e_v, e_v]))

    assert index == 0
    assert scores.tolist() == pytest.approx([1.0, -1.0])
    assert single == 0
    assert tied == 1


def test_classify_is_scale_invariant() -> None:
    rng = np.random.default_rng(5)
    for _ in range(20):
        e_v, categories = _random(rng, 6), _random(rng, 4, 6)

        index, scores = classify(e_v, categories)
        scaled_index, scaled_scores = classify(3.7 * e_v, categories)

        assert index == scaled_index
        assert torch.allclose(scores, scaled_scores, rtol=0.0, atol=1e-12)


def test_classify_rejects_zero_category() -> None:
    with pytest.raises(NumericalError):
        classify(as_tensor([1.0, 0.0]), torch.zeros(2, 2, dtype=DTYPE))


def test_fusion_pipeline_gradient() -> None:
    rng = np.random.default_rng(6)
    steps, count, dim = 3, 2, 4

    def objective(x: torch.Tensor) -> torch.Tensor:
        p = x[: steps * dim].view(steps, dim)
        v = x[steps * dim : 2 * steps * dim].view(steps, dim)
        words = x[2 * steps * dim : 2 * steps * dim + count * dim].view(count, dim)
        e_c = x[2 * steps * dim + count * dim :]
        f = pose_gate(p, v)
        return cosine_similarity(aggregate(f, temporal_saliency(f, words, 1.0)), e_c)

    point = _random(rng, 2 * steps * dim + count * dim + dim)

    assert grad_check(objective, point) < 1e-4


def test_masking_pose_gives_the_half_gate() -> None:
    rng = np.random.default_rng(7)
    options = FusionOptions(tau=0.01, mask=ABLATION_MODES["Video+Text"])
    for _ in range(10):
        v, p, words = _random(rng, 8, 16), _random(rng, 8, 16), _random(rng, 2, 16)

        e_v, _ = fuse(v, p, words, options)

        half = 0.5 * v
        expected = aggregate(half, temporal_saliency(half, words, 0.01))
        assert torch.allclose(e_v, expected, rtol=0.0, atol=1e-12)


def test_masking_text_gives_uniform_pooling() -> None:
    rng = np.random.default_rng(8)
    v, p, words = _random(rng, 4, 3), _random(rng, 4, 3), _random(rng, 2, 3)

    e_v, saliency = fuse(v, p, words, FusionOptions(mask=ABLATION_MODES["Video+Pose"]))

    assert torch.equal(saliency.s, torch.full((4,), 0.25, dtype=DTYPE))
    assert torch.allclose(e_v, pose_gate(p, v).mean(dim=0), rtol=0.0, atol=1e-15)


def test_masking_video_gates_a_constant() -> None:
    rng = np.random.default_rng(9)
    v, p, words = _random(rng, 4, 3), _random(rng, 4, 3), _random(rng, 2, 3)

    e_v, _ = fuse(v, p, words, FusionOptions(tau=0.5, mask=ABLATION_MODES["Pose+Text"]))

    f = torch.sigmoid(p)
    assert torch.allclose(e_v, aggregate(f, temporal_saliency(f, words, 0.5)), rtol=0.0, atol=1e-15)


def test_literal_pooling_ignores_pose() -> None:
    rng = np.random.default_rng(10)
    v, words = _random(rng, 5, 4), _random(rng, 2, 4)
    options = FusionOptions(literal_eq45=True)

    first, _ = fuse(v, _random(rng, 5, 4), words, options)
    second, _ = fuse(v, _random(rng, 5, 4), words, options)

    assert torch.equal(first, second)


def test_empty_mask_is_rejected() -> None:
    with pytest.raises(ValueError):
        FusionOptions(mask=frozenset())


def test_forward_video_composes_the_stages(small_encoders: EncoderSet) -> None:
    generator = torch.Generator().manual_seed(0)
    frames = torch.rand(4, 16, 16, 3, dtype=DTYPE, generator=generator)
    heatmaps = torch.rand(4, 16, 16, 1, dtype=DTYPE, generator=generator)
    words, _ = small_encoders.encode_classes()[1]
    options = FusionOptions(tau=0.01)

    e_v, saliency = forward_video(frames, heatmaps, words, small_encoders, options)

    f = pose_gate(encode_poses(heatmaps, small_encoders.pose_encoder), encode_frames(frames, small_encoders.frame_encoder))
    expected = temporal_saliency(f, words, 0.01)
    assert e_v.shape == (8,)
    assert torch.allclose(saliency.s, expected.s, rtol=0.0, atol=1e-12)
    assert torch.allclose(e_v, aggregate(f, expected), rtol=0.0, atol=1e-12)


def test_category_embeddings_follow_the_mask(small_encoders: EncoderSet) -> None:
    words, categories = category_embeddings(small_encoders, FusionOptions())
    masked_words, table = category_embeddings(small_encoders, FusionOptions(mask=ABLATION_MODES["Video+Pose"]))

    assert categories.shape == (2, 8)
    assert torch.allclose(categories[0], words[0].mean(dim=0))
    assert table is small_encoders.class_table
    assert all(torch.count_nonzero(item) == 0 for item in masked_words)


def test_score_categories_conditions_on_each_class() -> None:
    rng = np.random.default_rng(11)
    v, p = _random(rng, 4, 3), _random(rng, 4, 3)
    words = [_random(rng, 2, 3), _random(rng, 1, 3)]
    categories = _random(rng, 2, 3)
    options = FusionOptions(tau=0.1)

    index, scores = score_categories(v, p, words, categories, options)

    expected = torch.stack([cosine_similarity(fuse(v, p, words[c], options)[0], categories[c]) for c in range(2)])
    assert torch.allclose(scores, expected, rtol=0.0, atol=1e-12)
    assert index == int(torch.argmax(expected))


@pytest.mark.parametrize(("tau", "eps", "tolerance"), [(1.0, 1e-5, 1e-4), (0.01, 1e-6, 1e-3)])
def test_randomized_fusion_gradients(tau: float, eps: float, tolerance: float) -> None:
    rng = np.random.default_rng(12)
    steps, count, dim = 3, 2, 3
    for _ in range(100):
        words = _random(rng, count, dim)
        direction = _random(rng, dim)

        def objective(x: torch.Tensor) -> torch.Tensor:
            p, v = x.view(2, steps, dim)
            f = pose_gate(p, v)
            return (aggregate(f, temporal_saliency(f, words, tau)) * direction).sum()

        assert grad_check(objective, _random(rng, 2 * steps * dim), eps=eps) < tolerance


def test_randomized_cosine_gradients() -> None:
    rng = np.random.default_rng(21)
    for _ in range(100):
        dim = int(rng.integers(2, 5))
        rows = rng.normal(size=(2, dim))
        rows *= rng.uniform(0.5, 2.0, size=(2, 1)) / np.linalg.norm(rows, axis=1, keepdims=True)

        def objective(x: torch.Tensor) -> torch.Tensor:
            return cosine_similarity(x[:dim], x[dim:])

        assert grad_check(objective, as_tensor(rows.reshape(-1))) < 1e-4


def test_fuse_bundle_matches_fuse(small_encoders: EncoderSet) -> None:
    generator = torch.Generator().manual_seed(3)
    frames = torch.rand(3, 16, 16, 3, dtype=DTYPE, generator=generator)
    heatmaps = torch.rand(3, 16, 16, 1, dtype=DTYPE, generator=generator)

    bundle = small_encoders.bundle(frames, heatmaps, "wave hand")

    words, class_emb = small_encoders.encode_classes()[1]
    assert torch.equal(bundle.words, words) and torch.equal(bundle.class_emb, class_emb)
    for mask in ABLATION_MODES.values():
        options = FusionOptions(tau=0.05, mask=mask)
        e_v, saliency = fuse_bundle(bundle, options)
        expected, expected_saliency = fuse(bundle.frames, bundle.poses, bundle.words, options)
        assert torch.equal(e_v, expected)
        assert torch.equal(saliency.s, expected_saliency.s)


def test_bundle_rejects_mismatched_dimensions() -> None:
    rows = torch.ones(3, 4, dtype=DTYPE)

    with pytest.raises(ShapeError):
        EmbeddingBundle(frames=rows, poses=rows, words=torch.ones(2, 5, dtype=DTYPE), class_emb=torch.ones(4, dtype=DTYPE))
    with pytest.raises(ShapeError):
        EmbeddingBundle(frames=rows, poses=rows[:2], words=rows, class_emb=rows[0])
