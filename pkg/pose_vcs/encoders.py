"""Trainable frame, pose and word encoders plus checkpoint IO.

The vision encoder is a small pre-norm transformer over non-overlapping patches; each frame
is encoded independently. The text encoder is the same transformer over word tokens without
positional embeddings, so repeated words produce identical rows.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Iterable

import torch
from einops import rearrange, repeat
from einops.layers.torch import Rearrange
from torch import nn

from .config import ConfigError, RunConfig
from .models import EmbeddingBundle
from .numerics import DTYPE, ShapeError, ensure_finite, load_tensor, save_tensor

LOGGER = logging.getLogger(__name__)

ARCHITECTURE_FILE = "architecture.json"


class UnknownWordError(ConfigError):
    def __init__(self, word: str) -> None:
        super().__init__(f"Word {word!r} is not in the text encoder vocabulary")
        self.word = word


def _uniform_fan_in(weight: torch.Tensor) -> None:
    bound = 1.0 / math.sqrt(weight.shape[1])
    nn.init.uniform_(weight, -bound, bound)


def _init_module(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Embedding)):
        _uniform_fan_in(module.weight)
        if getattr(module, "bias", None) is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class MLP(nn.Module):
    def __init__(self, dim: int, hidden_dim: int) -> None:
        super().__init__()
        self.net = nn.Sequential(
            nn.LayerNorm(dim),
            nn.Linear(dim, hidden_dim),
            nn.GELU(),
            nn.Linear(hidden_dim, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class MSA(nn.Module):
    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        if dim % heads:
            raise ShapeError(f"width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.norm = nn.LayerNorm(dim)
        self.to_qkv = nn.Linear(dim, dim * 3)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm(x)
        q, k, v = (
            rearrange(part, "b n (h d) -> b h n d", h=self.heads) for part in self.to_qkv(x).chunk(3, dim=-1)
        )
        attn = torch.softmax(torch.matmul(q, k.transpose(-1, -2)) * self.scale, dim=-1)
        out = rearrange(torch.matmul(attn, v), "b h n d -> b n (h d)")
        return self.to_out(out)


class Transformer(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int) -> None:
        super().__init__()
        self.blocks = nn.ModuleList(
            nn.ModuleList([MSA(dim, heads), MLP(dim, dim * 2)]) for _ in range(depth)
        )
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for attention, mlp in self.blocks:
            x = attention(x) + x
            x = mlp(x) + x
        return self.norm(x)


class VisionEncoder(nn.Module):
    """f(.|theta): (B, H, W, C) images in [0, 1] -> (B, d) embeddings."""

    def __init__(
        self,
        *,
        image_size: tuple[int, int],
        patch_size: int,
        width: int,
        depth: int,
        heads: int,
        embed_dim: int,
        channels: int = 3,
    ) -> None:
        super().__init__()
        height, width_px = image_size
        if patch_size <= 0 or height % patch_size or width_px % patch_size:
            raise ShapeError(f"Image {height}x{width_px} is not divisible into {patch_size}px patches")
        self.architecture = {
            "kind": "vision",
            "image_size": [height, width_px],
            "patch_size": patch_size,
            "width": width,
            "depth": depth,
            "heads": heads,
            "embed_dim": embed_dim,
            "channels": channels,
        }
        self.patch_size = patch_size
        self.channels = channels
        num_patches = (height // patch_size) * (width_px // patch_size)
        self.to_patch_embedding = nn.Sequential(
            Rearrange("b (h p1) (w p2) c -> b (h w) (p1 p2 c)", p1=patch_size, p2=patch_size),
            nn.Linear(channels * patch_size**2, width),
        )
        self.cls_token = nn.Parameter(torch.zeros(1, 1, width))
        self.pos_embedding = nn.Parameter(torch.zeros(1, num_patches + 1, width))
        self.transformer = Transformer(width, depth, heads)
        self.proj = nn.Linear(width, embed_dim)
        self.apply(_init_module)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embedding, std=0.02)
        self.to(DTYPE)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4:
            raise ShapeError(f"Expected (B, H, W, C) images, got {tuple(images.shape)}")
        if images.shape[1] % self.patch_size or images.shape[2] % self.patch_size:
            raise ShapeError(f"Image extents {tuple(images.shape[1:3])} are not divisible by {self.patch_size}")
        if images.shape[-1] != self.channels:
            # single-channel pose images are replicated to the patch embedding's channel count
            images = repeat(images[..., :1], "b h w 1 -> b h w c", c=self.channels)
        tokens = self.to_patch_embedding(images.to(DTYPE))
        cls_tokens = repeat(self.cls_token, "1 1 d -> b 1 d", b=tokens.shape[0])
        tokens = torch.cat((cls_tokens, tokens), dim=1) + self.pos_embedding[:, : tokens.shape[1] + 1]
        return self.proj(self.transformer(tokens)[:, 0])


class TextEncoder(nn.Module):
    """g(.|phi): whitespace-tokenized class names -> per-word (N, d) embeddings."""

    def __init__(self, vocabulary: Iterable[str], *, width: int, depth: int, heads: int, embed_dim: int) -> None:
        super().__init__()
        self.vocabulary = sorted(set(vocabulary))
        if not self.vocabulary:
            raise ConfigError("The text encoder needs a non-empty vocabulary")
        self.index = {word: position for position, word in enumerate(self.vocabulary)}
        self.architecture = {
            "kind": "text",
            "vocabulary": self.vocabulary,
            "width": width,
            "depth": depth,
            "heads": heads,
            "embed_dim": embed_dim,
        }
        self.token_embedding = nn.Embedding(len(self.vocabulary), width)
        self.transformer = Transformer(width, depth, heads)
        self.proj = nn.Linear(width, embed_dim)
        self.apply(_init_module)
        self.to(DTYPE)

    def tokenize(self, class_name: str) -> list[int]:
        words = tokenize(class_name)
        if not words:
            raise ConfigError("Class name is empty after tokenization")
        ids: list[int] = []
        for word in words:
            if word not in self.index:
                raise UnknownWordError(word)
            ids.append(self.index[word])
        return ids

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        tokens = self.token_embedding(token_ids.view(1, -1))
        return self.proj(self.transformer(tokens))[0]


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def build_vocabulary(class_names: Iterable[str]) -> list[str]:
    return sorted({word for name in class_names for word in tokenize(name)})


def encode_frames(frames: torch.Tensor, encoder: VisionEncoder) -> torch.Tensor:
    """(T, H, W, 3) frames in [0, 1] -> (T, d) frame embeddings v_n."""

    if frames.dim() != 4 or frames.shape[-1] != 3:
        raise ShapeError(f"Frames must be (T, H, W, 3), got {tuple(frames.shape)}")
    return ensure_finite(encoder(frames), "frame encoder")


def encode_poses(heatmaps: torch.Tensor, encoder: VisionEncoder) -> torch.Tensor:
    """(T, H, W, 1) reduced heatmaps scaled to [0, 1] -> (T, d) pose embeddings p_n."""

    if heatmaps.dim() != 4 or heatmaps.shape[-1] != 1:
        raise ShapeError(f"Heatmaps must be (T, H, W, 1), got {tuple(heatmaps.shape)}")
    return ensure_finite(encoder(heatmaps), "pose encoder")


def encode_words(class_name: str, encoder: TextEncoder, class_embed: str = "mean") -> tuple[torch.Tensor, torch.Tensor]:
    """Word embeddings t_k of a class name and its class embedding e_c."""

    ids = torch.tensor(encoder.tokenize(class_name), dtype=torch.long)
    words = ensure_finite(encoder(ids), "text encoder")
    if class_embed == "mean":
        class_emb = words.mean(dim=0)
    elif class_embed == "last_word":
        class_emb = words[-1]
    else:
        raise ConfigError(f"Unknown class_embed mode {class_embed!r}")
    return words, class_emb


class EncoderSet(nn.Module):
    """The three encoders of a run plus the text-free class table used when text is masked."""

    def __init__(self, config: RunConfig, class_names: list[str], image_size: tuple[int, int]) -> None:
        super().__init__()
        self.class_names = list(class_names)
        self.class_embed = config.class_embed
        vision_kwargs = dict(
            image_size=image_size,
            patch_size=config.patch_size,
            width=config.width,
            depth=config.layers,
            heads=config.heads,
            embed_dim=config.embed_dim,
        )
        self.frame_encoder = VisionEncoder(**vision_kwargs)
        self.share_vision_weights = config.share_vision_weights
        self.pose_encoder = self.frame_encoder if config.share_vision_weights else VisionEncoder(**vision_kwargs)
        self.text_encoder = TextEncoder(
            build_vocabulary(class_names),
            width=config.width,
            depth=config.layers,
            heads=config.heads,
            embed_dim=config.embed_dim,
        )
        bound = 1.0 / math.sqrt(config.embed_dim)
        self.class_table = nn.Parameter(
            torch.empty(len(class_names), config.embed_dim, dtype=DTYPE).uniform_(-bound, bound)
        )

    def encode_classes(self) -> list[tuple[torch.Tensor, torch.Tensor]]:
        return [encode_words(name, self.text_encoder, self.class_embed) for name in self.class_names]

    def bundle(self, frames: torch.Tensor, heatmaps: torch.Tensor, class_name: str) -> EmbeddingBundle:
        words, class_emb = encode_words(class_name, self.text_encoder, self.class_embed)
        return EmbeddingBundle(
            frames=encode_frames(frames, self.frame_encoder),
            poses=encode_poses(heatmaps, self.pose_encoder),
            words=words,
            class_emb=class_emb,
        )


def save_encoder(encoder: nn.Module, directory: Path) -> Path:
    """One named tensor file per parameter plus the architecture descriptor."""

    directory.mkdir(parents=True, exist_ok=True)
    descriptor = dict(getattr(encoder, "architecture", {}))
    descriptor["tensors"] = {}
    for name, tensor in encoder.state_dict().items():
        save_tensor(tensor, directory / f"{name}.bin")
        descriptor["tensors"][name] = list(tensor.shape)
    (directory / ARCHITECTURE_FILE).write_text(json.dumps(descriptor, indent=2), encoding="utf-8")
    return directory


def load_encoder_weights(encoder: nn.Module, directory: Path) -> None:
    descriptor_path = directory / ARCHITECTURE_FILE
    if not descriptor_path.exists():
        raise ConfigError(f"{directory} has no {ARCHITECTURE_FILE}")
    descriptor = json.loads(descriptor_path.read_text(encoding="utf-8"))
    expected = {name: list(tensor.shape) for name, tensor in encoder.state_dict().items()}
    stored = descriptor.get("tensors", {})
    if stored != expected:
        mismatched = sorted(name for name in set(stored) | set(expected) if stored.get(name) != expected.get(name))
        raise ConfigError(f"Checkpoint {directory} does not match the encoder architecture: {mismatched}")
    state = {}
    for name, shape in stored.items():
        tensor = load_tensor(directory / f"{name}.bin")
        if list(tensor.shape) != shape:
            raise ConfigError(f"{directory}/{name}.bin has shape {list(tensor.shape)}, descriptor says {shape}")
        state[name] = tensor
    encoder.load_state_dict(state)
    LOGGER.debug("Loaded %d tensors from %s", len(state), directory)


def save_encoder_set(encoders: EncoderSet, directory: Path) -> Path:
    save_encoder(encoders.frame_encoder, directory / "frame_encoder")
    if not encoders.share_vision_weights:
        save_encoder(encoders.pose_encoder, directory / "pose_encoder")
    save_encoder(encoders.text_encoder, directory / "text_encoder")
    save_tensor(encoders.class_table, directory / "class_table.bin")
    return directory


def load_encoder_set(encoders: EncoderSet, directory: Path, *, include_class_table: bool = True) -> None:
    load_encoder_weights(encoders.frame_encoder, directory / "frame_encoder")
    if not encoders.share_vision_weights:
        load_encoder_weights(encoders.pose_encoder, directory / "pose_encoder")
    load_encoder_weights(encoders.text_encoder, directory / "text_encoder")
    if include_class_table:
        table = load_tensor(directory / "class_table.bin")
        if table.shape != encoders.class_table.shape:
            raise ConfigError(f"class_table shape {tuple(table.shape)} does not match {tuple(encoders.class_table.shape)}")
        with torch.no_grad():
            encoders.class_table.copy_(table)
