"""Mask-conditioned prompt encoder.

Turns each task's coarse binary mask logits plus the shared image tokens
into a per-task prior constraint c with the token shape [B, N, C]:

    t = up(LN(scan(dwconv(down(h)))))          temporal branch, over tokens
    s = SA(expand(GELU(LN(tokenize(m)))))      spatial branch, over the mask
    c = LN(s + CrossAttention(Q=s, K=t, V=t))  fusion

The temporal branch has no gating and no SiLU. Its depthwise conv is
causal and residual (x + conv(x)), so zeroing the conv kernel leaves the
sequence unchanged and the branch degenerates to up∘LN∘scan∘down — the
degenerate form unit tests rely on. All branch projections are bias-free:
a zero token sequence stays exactly zero through the whole branch at init.

Learned positional embeddings exist on both fusion inputs but are applied
to queries/keys only, never values.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .blocks import Attention
from .config import ExperimentConfig
from .errors import ShapeError
from .ssm import SelectiveSSM


class TemporalBranch(nn.Module):
    def __init__(self, dim: int, inner_dim: int, state_dim: int):
        super().__init__()
        self.down = nn.Linear(dim, inner_dim, bias=False)
        self.conv = nn.Conv1d(inner_dim, inner_dim, kernel_size=3,
                              groups=inner_dim, bias=False)
        self.ssm = SelectiveSSM(inner_dim, state_dim)
        self.norm = nn.LayerNorm(inner_dim)
        self.up = nn.Linear(inner_dim, dim, bias=False)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        x = self.down(h)
        # causal depthwise conv over the token sequence, residual-added
        padded = F.pad(x.transpose(1, 2), (2, 0))
        x = x + self.conv(padded).transpose(1, 2)
        x = self.ssm(x)
        return self.up(self.norm(x))


class SpatialBranch(nn.Module):
    """Patch-tokenize mask logits at stride 16, expand channels, self-attend."""

    def __init__(self, in_channels: int, dim: int, num_heads: int, num_tokens: int,
                 stride: int = 16):
        super().__init__()
        mid = dim // 2
        self.stride = stride
        self.tokenize = nn.Conv2d(in_channels, mid, kernel_size=stride, stride=stride)
        self.norm_mid = nn.LayerNorm(mid)
        self.act = nn.GELU()
        self.expand = nn.Linear(mid, dim)   # the 1x1 channel-expansion conv
        self.pos = nn.Parameter(torch.randn(num_tokens, dim) * 0.02)
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)

    def forward(self, mask_logits: torch.Tensor, keep_weights: bool = False) -> torch.Tensor:
        _, _, h, w = mask_logits.shape
        if h % self.stride or w % self.stride:
            raise ShapeError(f"mask {h}x{w} not divisible by tokenization stride {self.stride}")
        x = self.tokenize(mask_logits).flatten(2).transpose(1, 2)   # [B, N, mid]
        x = self.expand(self.act(self.norm_mid(x)))
        a = self.norm_attn(x)
        return x + self.attn(a, a, a, q_pos=self.pos, k_pos=self.pos,
                             keep_weights=keep_weights)


class PromptEncoder(nn.Module):
    def __init__(self, config: ExperimentConfig):
        super().__init__()
        dim = config.embed_dim
        self.image_size = config.image_size
        self.num_tokens = config.num_tokens
        self.temporal = TemporalBranch(dim, dim // 2, config.ssm_state_dim)
        self.spatial = SpatialBranch(2, dim, config.num_heads, config.num_tokens,
                                     stride=config.patch_size)
        self.fuse_attn = Attention(dim, config.num_heads)
        self.fuse_norm = nn.LayerNorm(dim)
        self.pos_t = nn.Parameter(torch.randn(config.num_tokens, dim) * 0.02)

    def fuse(self, s: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """c = LN(s + CrossAttention(Q from s, K/V from t))."""
        return self.fuse_norm(
            s + self.fuse_attn(s, t, t, q_pos=self.spatial.pos, k_pos=self.pos_t))

    def _upsample(self, mask_logits: torch.Tensor) -> torch.Tensor:
        if mask_logits.shape[-2:] != (self.image_size, self.image_size):
            mask_logits = F.interpolate(mask_logits, size=(self.image_size, self.image_size),
                                        mode="bilinear", align_corners=False)
        return mask_logits

    def encode_prompts(self, h: torch.Tensor, m_sem: torch.Tensor, m_ins: torch.Tensor,
                       enabled: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-task constraints (c_sem, c_ins); zeros of the right shape when disabled.

        Mask logits may come in at any resolution (forward 1 emits quarter
        resolution); they are bilinearly upsampled to image size before
        tokenization.
        """
        if not enabled:
            zeros = h.new_zeros(h.shape)
            return zeros, zeros
        t = self.temporal(h)
        c_sem = self.fuse(self.spatial(self._upsample(m_sem)), t)
        c_ins = self.fuse(self.spatial(self._upsample(m_ins)), t)
        return c_sem, c_ins

    forward = encode_prompts
