"""Training objectives.

Composition (lambda1 weights the forward-1 terms):

    total = lambda1 * (scc + bm) + seg_sem + seg_ins

* scc: per-pixel KL between the two heads' aligned distributions, log
  base 2 as the consistency term is defined; direction is fixed
  semantic -> instance (a config switch turns on symmetric/Jeffreys form).
* bm: sum of the two heads' binary-cross-entropy means (natural log).
* seg_sem: multiclass CE + macro soft-Dice, equal weights.
* seg_ins: Dice + Focal(gamma=2) on binary and type channels, MSE on hv
  over foreground, and MSGE — MSE between 5x5-Sobel spatial gradients of
  predicted vs target hv over foreground. The Sobel conv uses replicate
  padding so a constant offset provably leaves gradients unchanged.

Numerical conventions: every log argument is clamped at 1e-8; Dice
denominators carry a 1e-6 smooth term (numerator too, so an absent class
scores a perfect Dice instead of a guaranteed miss).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import torch
from torch.nn import functional as F

from .errors import LabelRangeError, ShapeMismatchError

EPS_LOG = 1.0e-8
EPS_DICE = 1.0e-6


# ---------------------------------------------------------------------------
# forward-1 terms


def scc_loss(p_sem: torch.Tensor, p_ins: torch.Tensor, symmetric: bool = False) -> torch.Tensor:
    """Mean over pixels of KL(p_sem || p_ins) in bits (log2)."""
    if p_sem.shape != p_ins.shape:
        raise ShapeMismatchError(f"{tuple(p_sem.shape)} vs {tuple(p_ins.shape)}")
    p = p_sem.clamp_min(EPS_LOG)
    q = p_ins.clamp_min(EPS_LOG)
    kl = (p * (torch.log2(p) - torch.log2(q))).sum(dim=1)
    if symmetric:
        kl = kl + (q * (torch.log2(q) - torch.log2(p))).sum(dim=1)
    return kl.mean()


def _bce(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    # clamp both log arguments: in float32, 1 - 1e-8 rounds to 1.0, so
    # clamping p alone would still let log(1-p) hit -inf
    p = prob.clamp(EPS_LOG, 1.0 - EPS_LOG)
    return -(target * torch.log(p)
             + (1.0 - target) * torch.log((1.0 - p).clamp_min(EPS_LOG))).mean()


def bm_loss(p_sem: torch.Tensor, p_ins: torch.Tensor,
            target_sem: torch.Tensor, target_ins: torch.Tensor) -> torch.Tensor:
    """Sum of per-head BCE means over foreground probabilities (natural log).

    Inputs are probabilities in (0,1); targets are binary maps at the same
    (quarter) resolution.
    """
    if p_sem.shape != target_sem.shape or p_ins.shape != target_ins.shape:
        raise ShapeMismatchError(
            f"binary-mask shapes: pred {tuple(p_sem.shape)}/{tuple(p_ins.shape)} vs "
            f"target {tuple(target_sem.shape)}/{tuple(target_ins.shape)}")
    return _bce(p_sem, target_sem) + _bce(p_ins, target_ins)


# ---------------------------------------------------------------------------
# forward-2 segmentation terms


def _soft_dice_loss(logits: torch.Tensor, target_onehot: torch.Tensor) -> torch.Tensor:
    """1 - macro-average soft Dice over classes (batch pooled per class)."""
    prob = torch.softmax(logits, dim=1)
    dims = (0, 2, 3)
    inter = (prob * target_onehot).sum(dims)
    denom = prob.sum(dims) + target_onehot.sum(dims)
    dice = (2.0 * inter + EPS_DICE) / (denom + EPS_DICE)
    return 1.0 - dice.mean()


def _focal_loss(logits: torch.Tensor, labels: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Mean of -(1-p_t)^gamma log(p_t); no class weighting."""
    logp = torch.log_softmax(logits, dim=1)
    logp_t = logp.gather(1, labels.unsqueeze(1)).squeeze(1)
    p_t = logp_t.exp()
    return (-((1.0 - p_t) ** gamma) * logp_t.clamp_min(math.log(EPS_LOG))).mean()


def _check_labels(labels: torch.Tensor, num_classes: int, what: str) -> None:
    if labels.numel() == 0:
        return
    lo, hi = int(labels.min()), int(labels.max())
    if lo < 0 or hi >= num_classes:
        raise LabelRangeError(f"{what}: labels span [{lo}, {hi}] but only "
                              f"{num_classes} classes are configured")


def sem_seg_loss(logits: torch.Tensor,
                 labels: torch.Tensor) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Mean CE + macro soft-Dice on the semantic logits."""
    if logits.shape[0] != labels.shape[0] or logits.shape[-2:] != labels.shape[-2:]:
        raise ShapeMismatchError(f"logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    _check_labels(labels, logits.shape[1], "semantic targets")
    ce = F.cross_entropy(logits, labels)
    onehot = F.one_hot(labels, logits.shape[1]).permute(0, 3, 1, 2).float()
    dice = _soft_dice_loss(logits, onehot)
    return ce + dice, {"ce": ce, "dice": dice}


def _sobel_kernels(device: torch.device, dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    """5x5 smoothed-gradient pair: k[i,j] = x / (x^2 + y^2) and its transpose."""
    rng = torch.arange(-2, 3, device=device, dtype=dtype)
    x, y = torch.meshgrid(rng, rng, indexing="xy")
    kh = x / (x ** 2 + y ** 2 + 1e-12)
    kv = y / (x ** 2 + y ** 2 + 1e-12)
    return kh, kv


def hv_gradients(hv: torch.Tensor) -> torch.Tensor:
    """d/dx of the horizontal map and d/dy of the vertical map, [B,2,H,W].

    Replicate padding: a globally constant shift of hv adds a constant map,
    whose gradient under replicate-pad convolution is exactly zero.
    """
    kh, kv = _sobel_kernels(hv.device, hv.dtype)
    weight = torch.stack([kh, kv]).unsqueeze(1)           # [2,1,5,5]
    padded = F.pad(hv, (2, 2, 2, 2), mode="replicate")
    return F.conv2d(padded, weight, groups=2)


def ins_seg_loss(binary_logits: torch.Tensor, hv_pred: torch.Tensor,
                 type_logits: torch.Tensor, binary_target: torch.Tensor,
                 hv_target: torch.Tensor,
                 type_target: torch.Tensor) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Dice + Focal on binary and type channels; MSE + MSGE on hv over foreground."""
    if (binary_logits.shape != binary_target.shape or hv_pred.shape != hv_target.shape
            or type_logits.shape[-2:] != type_target.shape[-2:]):
        raise ShapeMismatchError(
            f"instance-loss shapes: binary {tuple(binary_logits.shape)} vs "
            f"{tuple(binary_target.shape)}, hv {tuple(hv_pred.shape)} vs "
            f"{tuple(hv_target.shape)}, type {tuple(type_logits.shape)} vs "
            f"{tuple(type_target.shape)}")
    _check_labels(type_target, type_logits.shape[1], "instance type targets")

    fg_labels = (binary_target[:, 1] > 0.5).long()
    dice = (_soft_dice_loss(binary_logits, binary_target)
            + _soft_dice_loss(type_logits,
                              F.one_hot(type_target, type_logits.shape[1])
                              .permute(0, 3, 1, 2).float()))
    focal = _focal_loss(binary_logits, fg_labels) + _focal_loss(type_logits, type_target)

    fg = binary_target[:, 1:2] > 0.5
    n_fg = fg.sum()
    if n_fg > 0:
        mse = ((hv_pred - hv_target) ** 2 * fg).sum() / (2 * n_fg)
        grad_diff = (hv_gradients(hv_pred) - hv_gradients(hv_target)) ** 2
        msge = (grad_diff * fg).sum() / (2 * n_fg)
    else:
        mse = hv_pred.sum() * 0.0
        msge = hv_pred.sum() * 0.0
    total = dice + focal + mse + msge
    return total, {"dice": dice, "focal": focal, "mse": mse, "msge": msge}


# ---------------------------------------------------------------------------
# composition


@dataclass
class LossReport:
    scc: float
    bm: float
    seg_sem: float
    seg_ins: float
    total: float
    lambda1: float
    sem_ce: float = 0.0
    sem_dice: float = 0.0
    ins_dice: float = 0.0
    ins_focal: float = 0.0
    ins_mse: float = 0.0
    ins_msge: float = 0.0

    def check(self) -> None:
        expected = self.lambda1 * (self.scc + self.bm) + self.seg_sem + self.seg_ins
        if abs(self.total - expected) > 1e-6:
            raise AssertionError(f"loss composition broken: total={self.total}, "
                                 f"expected {expected}")

    def to_json_line(self, **extra) -> str:
        record = {**extra, **self.__dict__}
        return json.dumps(record, sort_keys=True)


def total_loss(scc: torch.Tensor, bm: torch.Tensor, seg_sem: torch.Tensor,
               seg_ins: torch.Tensor, lambda1: float) -> torch.Tensor:
    return lambda1 * (scc + bm) + seg_sem + seg_ins
