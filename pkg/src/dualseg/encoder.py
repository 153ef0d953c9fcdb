"""Shared hierarchical image encoder.

Two transformer stages with 2x token pooling between them: stage 1 runs at
half the final patch stride, stage 2 at the full stride, so a 256px input
with patch 16 yields a 16x16 token grid. Global attention, no positional
embeddings anywhere — the trunk is permutation-equivariant over tokens,
which makes token-level translation consistency an exact architectural
property rather than something learned.

Adapters are attached after construction so that a trunk built with and
without them consumes the RNG stream identically; with zero-initialized
up-projections the adapter-equipped encoder reproduces the plain trunk
bit for bit.
"""

from __future__ import annotations

import torch
from torch import nn

from .blocks import Adapter, EncoderBlock
from .checkpoint import load_container, load_module_tensors
from .config import ExperimentConfig
from .errors import CorruptFileError, ShapeError, TopologyMismatchError, VersionMismatchError


class HierarchicalEncoder(nn.Module):
    def __init__(self, config: ExperimentConfig, with_adapters: bool = True):
        super().__init__()
        self.patch_size = config.patch_size
        dim1 = config.embed_dim // 2
        dim2 = config.embed_dim
        self.patch_embed = nn.Conv2d(3, dim1, kernel_size=config.patch_size // 2,
                                     stride=config.patch_size // 2)
        self.stage1 = nn.ModuleList(
            EncoderBlock(dim1, config.num_heads, config.mlp_ratio)
            for _ in range(config.encoder_depths[0]))
        self.merge = nn.Linear(4 * dim1, dim2)
        self.stage2 = nn.ModuleList(
            EncoderBlock(dim2, config.num_heads, config.mlp_ratio)
            for _ in range(config.encoder_depths[1]))
        self.norm = nn.LayerNorm(dim2)
        if with_adapters:
            self.attach_adapters(config.adapter_reduction)

    def attach_adapters(self, reduction: int) -> None:
        for block in list(self.stage1) + list(self.stage2):
            block.adapter = Adapter(block.norm1.normalized_shape[0], reduction)

    def encode(self, images: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        """Images [B,3,H,W] -> (tokens [B, (H/patch)*(W/patch), C], grid shape)."""
        _, _, h, w = images.shape
        if h % self.patch_size or w % self.patch_size:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {self.patch_size}")
        x = self.patch_embed(images)                       # [B, C/2, 2gh, 2gw]
        b, c1, fh, fw = x.shape
        x = x.flatten(2).transpose(1, 2)                   # [B, 4N, C/2]
        for block in self.stage1:
            x = block(x)
        # 2x2 pooling by concatenation + linear merge
        x = x.view(b, fh, fw, c1)
        x = x.view(b, fh // 2, 2, fw // 2, 2, c1).permute(0, 1, 3, 2, 4, 5)
        x = x.reshape(b, (fh // 2) * (fw // 2), 4 * c1)
        x = self.merge(x)
        for block in self.stage2:
            x = block(x)
        return self.norm(x), (fh // 2, fw // 2)

    forward = encode

    # --- fine-tuning contract ---

    def adapter_parameters(self):
        for block in list(self.stage1) + list(self.stage2):
            if block.adapter is not None:
                yield from block.adapter.parameters()

    def freeze_backbone_enable_adapters(self) -> float:
        """Freeze the trunk, keep adapters trainable; returns trainable fraction."""
        adapter_ids = {id(p) for p in self.adapter_parameters()}
        for p in self.parameters():
            p.requires_grad_(id(p) in adapter_ids)
        total = sum(p.numel() for p in self.parameters())
        trainable = sum(p.numel() for p in self.parameters() if p.requires_grad)
        return trainable / total

    def load_pretrained(self, path: str) -> None:
        """Load encoder tensors from a checkpoint container written by this repo."""
        try:
            _, tensors = load_container(path)
        except (CorruptFileError, VersionMismatchError) as e:
            raise TopologyMismatchError(f"{path}: unreadable encoder checkpoint ({e})") from e
        prefix = "encoder."
        if any(name.startswith(prefix) for name in tensors):
            tensors = {name[len(prefix):]: t for name, t in tensors.items()
                       if name.startswith(prefix)}
        load_module_tensors(self, tensors, context=f"encoder checkpoint {path}")
