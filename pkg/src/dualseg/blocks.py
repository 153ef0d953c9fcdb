"""Shared transformer building blocks.

The attention module is hand-rolled (rather than nn.MultiheadAttention)
for two reasons: tests need the attention weights, and positional
embeddings are added to queries/keys only — values never carry position,
so a constant value sequence stays constant through attention.
"""

from __future__ import annotations

import torch
from torch import nn


class Attention(nn.Module):
    """Multi-head attention over [B, N, C] sequences."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        assert dim % num_heads == 0, "dim must divide evenly across heads"
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self._last_weights: torch.Tensor | None = None

    def forward(self, q_in: torch.Tensor, k_in: torch.Tensor, v_in: torch.Tensor,
                q_pos: torch.Tensor | None = None,
                k_pos: torch.Tensor | None = None,
                keep_weights: bool = False) -> torch.Tensor:
        b, nq, c = q_in.shape
        nk = k_in.shape[1]
        q = self.q_proj(q_in if q_pos is None else q_in + q_pos)
        k = self.k_proj(k_in if k_pos is None else k_in + k_pos)
        v = self.v_proj(v_in)
        q = q.view(b, nq, self.num_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, nk, self.num_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, nk, self.num_heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        self._last_weights = attn.detach() if keep_weights else None
        out = (attn @ v).transpose(1, 2).reshape(b, nq, c)
        return self.out_proj(out)

    @property
    def last_weights(self) -> torch.Tensor | None:
        """[B, heads, Nq, Nk] from the most recent keep_weights=True call."""
        return self._last_weights


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Adapter(nn.Module):
    """Bottleneck adapter; the up-projection starts at zero so the residual
    contribution is exactly zero until trained."""

    def __init__(self, dim: int, reduction: int):
        super().__init__()
        hidden = max(1, dim // reduction)
        self.down = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.up = nn.Linear(hidden, dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.up(self.act(self.down(x)))


class EncoderBlock(nn.Module):
    """Pre-norm transformer block; an optional adapter refines the FFN output.

    No positional embeddings anywhere in the trunk: token translation
    consistency of the encoder depends on it.
    """

    def __init__(self, dim: int, num_heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * mlp_ratio)
        self.adapter: Adapter | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a = self.norm1(x)
        x = x + self.attn(a, a, a)
        y = self.mlp(self.norm2(x))
        if self.adapter is not None:
            y = y + self.adapter(y)
        return x + y
