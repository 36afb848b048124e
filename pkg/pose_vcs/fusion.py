"""Pose-guided video concept spotting.

Frame embeddings are gated by their pose embeddings, weighted by a text-conditioned temporal
saliency and pooled into one video embedding that is scored against category embeddings by
cosine similarity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch

from .config import MODALITIES, RunConfig
from .encoders import EncoderSet, encode_frames, encode_poses
from .models import EmbeddingBundle, SaliencyWeights, SimilarityMatrix
from .numerics import (
    NumericalError,
    ShapeError,
    elementwise,
    ensure_finite,
    matmul,
    require_same_shape,
    softmax,
)

LOGGER = logging.getLogger(__name__)

# Rows of the ablation table, in report order.
ABLATION_MODES: dict[str, frozenset[str]] = {
    "Pose+Text": frozenset({"pose", "text"}),
    "Video+Text": frozenset({"video", "text"}),
    "Video+Pose": frozenset({"video", "pose"}),
    "Video+Pose+Text": frozenset(MODALITIES),
}


@dataclass(slots=True)
class FusionOptions:
    tau: float = 0.01
    mask: frozenset[str] = field(default_factory=lambda: frozenset(MODALITIES))
    literal_eq45: bool = False
    constant_value: float = 0.0
    video_constant_value: float = 1.0

    def __post_init__(self) -> None:
        if not self.mask:
            raise ValueError("At least one modality must be enabled")

    @classmethod
    def from_config(cls, config: RunConfig, mask: frozenset[str] | None = None) -> "FusionOptions":
        return cls(
            tau=config.tau_saliency,
            mask=config.mask if mask is None else frozenset(mask),
            literal_eq45=config.literal_eq45,
            constant_value=config.constant_vector_value,
            video_constant_value=config.video_constant_value,
        )


def pose_gate(p: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """f_n = sigmoid(p_n) * v_n, row by row."""

    require_same_shape(p, v, "pose_gate")
    return elementwise("mul", elementwise("sigmoid", p), v)


def temporal_saliency(f: torch.Tensor, words: torch.Tensor, tau: float) -> SaliencyWeights:
    """Average over words of a softmax over frames of the scaled frame-word dot products."""

    if tau <= 0:
        raise NumericalError("Saliency temperature must be positive")
    if f.dim() != 2 or words.dim() != 2 or f.shape[0] < 1 or words.shape[0] < 1:
        raise ShapeError(f"Need (T, d) frames and (N, d) words, got {tuple(f.shape)} and {tuple(words.shape)}")
    logits = elementwise("scale", matmul(words, f.transpose(0, 1)), factor=1.0 / tau)
    weights = softmax(logits, axis=1).mean(dim=0)
    return SaliencyWeights(s=ensure_finite(weights, "temporal saliency"), tau=tau)


def uniform_saliency(num_frames: int, tau: float, like: torch.Tensor) -> SaliencyWeights:
    return SaliencyWeights(s=torch.full((num_frames,), 1.0 / num_frames, dtype=like.dtype), tau=tau)


def aggregate(f: torch.Tensor, saliency: SaliencyWeights) -> torch.Tensor:
    """e_v = sum_n s_n * f_n."""

    if saliency.s.dim() != 1 or saliency.s.shape[0] != f.shape[0]:
        raise ShapeError(f"{saliency.s.shape[0]} saliency weights for {f.shape[0]} frames")
    return matmul(saliency.s.view(1, -1), f)[0]


def _require_nonzero(vectors: torch.Tensor, what: str) -> torch.Tensor:
    norms = vectors.norm(dim=-1)
    if bool((norms == 0).any()):
        raise NumericalError(f"{what} has a zero-norm vector")
    return norms


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    require_same_shape(a, b, "cosine_similarity")
    norm_a = _require_nonzero(a, "cosine_similarity")
    norm_b = _require_nonzero(b, "cosine_similarity")
    return ((a * b).sum(dim=-1) / (norm_a * norm_b)).clamp(-1.0, 1.0)


def similarity_matrix(video_embs: torch.Tensor, categories: torch.Tensor) -> SimilarityMatrix:
    """(B, d) video embeddings against (M, d) categories -> (B, M) cosine similarities."""

    _require_nonzero(video_embs, "video embeddings")
    _require_nonzero(categories, "category embeddings")
    video = video_embs / video_embs.norm(dim=-1, keepdim=True)
    cats = categories / categories.norm(dim=-1, keepdim=True)
    return SimilarityMatrix(scores=matmul(video, cats.transpose(0, 1)).clamp(-1.0, 1.0))


def _first_argmax(scores: torch.Tensor) -> int:
    best = scores.max()
    return int(torch.nonzero(scores == best)[0, 0])


def classify(e_v: torch.Tensor, categories: torch.Tensor) -> tuple[int, torch.Tensor]:
    """Top-1 category by cosine similarity; ties go to the lowest index."""

    if categories.dim() != 2 or categories.shape[0] < 1:
        raise ShapeError("classify needs at least one category row")
    scores = similarity_matrix(e_v.view(1, -1), categories).scores[0]
    return _first_argmax(scores), scores


def classify_conditioned(video_embs: torch.Tensor, categories: torch.Tensor) -> tuple[int, torch.Tensor]:
    """Like ``classify`` when row c of ``video_embs`` was pooled with category c's words."""

    require_same_shape(video_embs, categories, "classify_conditioned")
    scores = cosine_similarity(video_embs, categories)
    return _first_argmax(scores), scores


def _constant_like(reference: torch.Tensor, value: float) -> torch.Tensor:
    return torch.full_like(reference, value)


def fuse(
    v: torch.Tensor, p: torch.Tensor, words: torch.Tensor, options: FusionOptions
) -> tuple[torch.Tensor, SaliencyWeights]:
    """Gate, score and pool one clip's embeddings; masked modalities become constants."""

    if "video" not in options.mask:
        v = _constant_like(v, options.video_constant_value)
    if "pose" not in options.mask:
        p = _constant_like(p, options.constant_value)
    f = pose_gate(p, v)
    pooled_rows = v if options.literal_eq45 else f
    if "text" in options.mask:
        saliency = temporal_saliency(pooled_rows, words, options.tau)
    else:
        saliency = uniform_saliency(pooled_rows.shape[0], options.tau, pooled_rows)
    return aggregate(pooled_rows, saliency), saliency


def fuse_bundle(bundle: EmbeddingBundle, options: FusionOptions) -> tuple[torch.Tensor, SaliencyWeights]:
    return fuse(bundle.frames, bundle.poses, bundle.words, options)


def forward_video(
    frames: torch.Tensor,
    heatmaps: torch.Tensor,
    words: torch.Tensor,
    encoders: EncoderSet,
    options: FusionOptions,
) -> tuple[torch.Tensor, SaliencyWeights]:
    """Encode one clip and fuse it: returns (e_v, saliency)."""

    v = encode_frames(frames, encoders.frame_encoder)
    p = encode_poses(heatmaps, encoders.pose_encoder)
    return fuse(v, p, words, options)


def encode_clips(frames: torch.Tensor, heatmaps: torch.Tensor, encoders: EncoderSet) -> tuple[torch.Tensor, torch.Tensor]:
    """(B, T, H, W, C) inputs -> (B, T, d) frame and pose embeddings in one encoder pass each."""

    batch, steps = frames.shape[:2]
    v = encode_frames(frames.reshape(batch * steps, *frames.shape[2:]), encoders.frame_encoder)
    p = encode_poses(heatmaps.reshape(batch * steps, *heatmaps.shape[2:]), encoders.pose_encoder)
    return v.view(batch, steps, -1), p.view(batch, steps, -1)


def category_embeddings(encoders: EncoderSet, options: FusionOptions) -> tuple[list[torch.Tensor], torch.Tensor]:
    """Word sets and (M, d) category embeddings, recomputed from the live encoders."""

    encoded = encoders.encode_classes()
    if "text" in options.mask:
        return [item[0] for item in encoded], torch.stack([item[1] for item in encoded])
    return [_constant_like(item[0], options.constant_value) for item in encoded], encoders.class_table


def score_categories(
    v: torch.Tensor, p: torch.Tensor, words: list[torch.Tensor], categories: torch.Tensor, options: FusionOptions
) -> tuple[int, torch.Tensor]:
    """Pool the clip once per candidate category (saliency conditioned on its words) and score it."""

    if "text" not in options.mask:
        e_v, _ = fuse(v, p, words[0], options)
        return classify(e_v, categories)
    pooled = torch.stack([fuse(v, p, class_words, options)[0] for class_words in words])
    return classify_conditioned(pooled, categories)
