"""Dual-head mask decoder with cross-task guidance.

Each head owns a small query set. Decoding per head, with tokens = h (+)
the OTHER task's prior constraint:

    q' = CrossAttn(Q = SelfAttn(q), K/V = tokens)    then an MLP refine
    g  = CrossAttn(Q = tokens, K/V = q')             reverse direction

Mask logits are dot products between per-slot linear projections of q'
and pixel-decoded features; slots are routed to output channels by
explicit role names. Both training forwards call the very same modules,
so parameter sharing across forwards holds by construction (and the
instrumentation log lets tests assert it by identity).

Forward 1 runs promptless and emits quarter-resolution binary logits plus
the aligned class-agnostic distributions; forward 2 emits the final
semantic map and the instance binary/hv/type maps at full resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from .blocks import Attention, Mlp
from .config import ExperimentConfig
from .errors import ModeError, RoleMismatchError, ShapeError

SEMANTIC = "semantic"
INSTANCE = "instance"


def semantic_roles(num_semantic_classes: int) -> list[str]:
    return [f"sem_class_{i}" for i in range(num_semantic_classes)]


def instance_roles(num_instance_classes: int) -> list[str]:
    return (["ins_bin_bg", "ins_bin_fg", "ins_hv_h", "ins_hv_v"]
            + [f"ins_type_{i}" for i in range(num_instance_classes + 1)])


def validate_roles(roles: list[str], config: ExperimentConfig, head_tag: str) -> None:
    if len(set(roles)) != len(roles):
        raise RoleMismatchError(f"{head_tag} head: duplicate slot roles")
    expected = (semantic_roles(config.num_semantic_classes) if head_tag == SEMANTIC
                else instance_roles(config.num_instance_classes))
    if roles != expected:
        raise RoleMismatchError(
            f"{head_tag} head: slot roles {roles} do not match config counts "
            f"(expected {expected})")


@dataclass
class DecoderOutputs:
    mode: str
    y_bin: dict[str, torch.Tensor] = field(default_factory=dict)    # head -> [B,2,H/4,W/4]
    y_prob: dict[str, torch.Tensor] = field(default_factory=dict)   # head -> [B,K_align,gh,gw]
    final_sem: torch.Tensor | None = None                           # [B,K_sem,H,W]
    final_ins: dict[str, torch.Tensor] | None = None                # binary/hv/type at [B,.,H,W]


@dataclass
class CallRecord:
    mode: str
    constraint_absmax: float
    param_ids: tuple[int, ...]


class _TiedInitConvT(nn.ConvTranspose2d):
    """2x2 stride-2 transposed conv whose four taps start equal, so a
    constant map stays constant at initialization."""

    def __init__(self, cin: int, cout: int):
        super().__init__(cin, cout, kernel_size=2, stride=2)
        with torch.no_grad():
            base = torch.randn(cin, cout, 1, 1) * (cin ** -0.5)
            self.weight.copy_(base.expand(-1, -1, 2, 2))
            self.bias.zero_()


class PixelDecoder(nn.Module):
    """Token grid -> quarter-resolution features plus a bilinear full-res path."""

    def __init__(self, dim: int, pixel_dim: int):
        super().__init__()
        self.up1 = _TiedInitConvT(dim, dim // 2)
        self.act = nn.GELU()
        self.up2 = _TiedInitConvT(dim // 2, pixel_dim)

    def forward(self, g: torch.Tensor, grid: tuple[int, int]) -> tuple[torch.Tensor, torch.Tensor]:
        b, n, c = g.shape
        gh, gw = grid
        x = g.transpose(1, 2).reshape(b, c, gh, gw)
        quarter = self.up2(self.act(self.up1(x)))
        full = F.interpolate(quarter, scale_factor=4, mode="bilinear", align_corners=False)
        return quarter, full


class DecoderBlock(nn.Module):
    """Query self-attention, cross-attention into tokens, MLP refine, then
    the reverse cross-attention updating the tokens."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: int):
        super().__init__()
        self.norm_q1 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, num_heads)
        self.norm_q2 = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, num_heads)
        self.norm_q3 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * mlp_ratio)
        self.norm_t = nn.LayerNorm(dim)
        self.reverse_attn = Attention(dim, num_heads)

    def forward(self, q: torch.Tensor, tokens: torch.Tensor,
                pos: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a = self.norm_q1(q)
        q = q + self.self_attn(a, a, a)
        q = q + self.cross_attn(self.norm_q2(q), tokens, tokens, k_pos=pos)
        q = q + self.mlp(self.norm_q3(q))
        tokens = tokens + self.reverse_attn(self.norm_t(tokens), q, q, q_pos=pos)
        return q, tokens


class TaskHead(nn.Module):
    def __init__(self, config: ExperimentConfig, head_tag: str,
                 roles: list[str] | None = None):
        super().__init__()
        self.head_tag = head_tag
        if roles is None:
            roles = (semantic_roles(config.num_semantic_classes) if head_tag == SEMANTIC
                     else instance_roles(config.num_instance_classes))
        validate_roles(roles, config, head_tag)
        self.roles = roles
        dim = config.embed_dim
        self.queries = nn.Parameter(torch.randn(len(roles), dim) * 0.02)
        self.pos = nn.Parameter(torch.randn(config.num_tokens, dim) * 0.02)
        self.blocks = nn.ModuleList(
            DecoderBlock(dim, config.num_heads, config.mlp_ratio)
            for _ in range(config.decoder_depth))
        self.slot_weight = nn.Parameter(torch.randn(len(roles), dim, config.pixel_dim) * 0.02)
        # bias-free so an uninformative (zero) embedding maps to uniform
        self.prob_proj = nn.Linear(dim, config.align_classes, bias=False)
        self.pixel = PixelDecoder(dim, config.pixel_dim)

    def decode(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """tokens [B,N,C] (= h (+) c_other) -> (refined queries, task embedding g)."""
        q = self.queries.unsqueeze(0).expand(tokens.shape[0], -1, -1)
        for block in self.blocks:
            q, tokens = block(q, tokens, self.pos)
        return q, tokens

    def predict_masks(self, features: torch.Tensor, q_refined: torch.Tensor) -> torch.Tensor:
        """logits[b,k,y,x] = <slot_k(q'_k), features[b,:,y,x]>, one channel per slot."""
        slots = torch.einsum("bqc,qcd->bqd", q_refined, self.slot_weight)
        return torch.einsum("bqd,bdhw->bqhw", slots, features)

    def to_probability(self, g: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        """Aligned class-agnostic distribution on the token grid, channel-softmaxed."""
        b, n, _ = g.shape
        logits = self.prob_proj(g).transpose(1, 2).reshape(b, -1, *grid)
        return torch.softmax(logits, dim=1)


class DualDecoder(nn.Module):
    def __init__(self, config: ExperimentConfig):
        super().__init__()
        self.config = config
        self.heads = nn.ModuleDict({
            SEMANTIC: TaskHead(config, SEMANTIC),
            INSTANCE: TaskHead(config, INSTANCE),
        })
        self.call_log: list[CallRecord] = []

    def reset_instrumentation(self) -> None:
        self.call_log = []

    @property
    def invocations(self) -> int:
        return len(self.call_log)

    def _guided_tokens(self, h: torch.Tensor, c_other: torch.Tensor | None) -> torch.Tensor:
        if c_other is None:
            return h
        if c_other.shape != h.shape:
            raise ShapeError(f"constraint shape {tuple(c_other.shape)} does not match "
                             f"tokens {tuple(h.shape)}")
        return h + c_other

    def decoder_forward(self, h: torch.Tensor, c_sem: torch.Tensor | None,
                        c_ins: torch.Tensor | None, mode: str,
                        grid: tuple[int, int]) -> DecoderOutputs:
        """Run both heads. Cross-wiring: the semantic head sees c_ins and the
        instance head sees c_sem. forward1 must be promptless."""
        if mode not in ("forward1", "forward2"):
            raise ModeError(f"unknown decoder mode '{mode}'")
        absmax = max(
            float(c.detach().abs().max()) if c is not None and c.numel() else 0.0
            for c in (c_sem, c_ins, h.new_zeros(1)))
        if mode == "forward1" and absmax > 0.0:
            raise ModeError("forward1 runs without prompts; got nonzero constraints")
        if mode == "forward1" or not self.config.enable_guidance:
            c_sem = c_ins = None

        self.call_log.append(CallRecord(
            mode=mode, constraint_absmax=absmax,
            param_ids=tuple(id(head.queries) for head in self.heads.values())))

        outputs = DecoderOutputs(mode=mode)
        routes = {SEMANTIC: c_ins, INSTANCE: c_sem}
        for tag, c_other in routes.items():
            head = self.heads[tag]
            q_ref, g = head.decode(self._guided_tokens(h, c_other))
            quarter, full = head.pixel(g, grid)
            if mode == "forward1":
                logits_q = head.predict_masks(quarter, q_ref)
                if tag == SEMANTIC:
                    # collapse the class softmax to bg-vs-foreground: exact
                    # category merge is logsumexp over the merged logits
                    bg = logits_q[:, :1]
                    fg = torch.logsumexp(logits_q[:, 1:], dim=1, keepdim=True)
                    outputs.y_bin[tag] = torch.cat([bg, fg], dim=1)
                else:
                    outputs.y_bin[tag] = logits_q[:, 0:2]
                outputs.y_prob[tag] = head.to_probability(g, grid)
            else:
                logits_f = head.predict_masks(full, q_ref)
                if tag == SEMANTIC:
                    outputs.final_sem = logits_f
                else:
                    outputs.final_ins = {
                        "binary": logits_f[:, 0:2],
                        "hv": logits_f[:, 2:4],
                        "type": logits_f[:, 4:],
                    }
        return outputs

    forward = decoder_forward
