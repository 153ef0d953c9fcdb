"""Full model: shared encoder, prompt encoder, dual-head decoder.

The training protocol runs the decoder twice with the same parameters:
forward 1 is promptless and produces each head's coarse binary logits,
which the prompt encoder turns into per-task constraints; forward 2 then
decodes with cross-wired constraints. Gradients flow through the whole
loop unless detach_prompts is set.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import ExperimentConfig
from .decoder import INSTANCE, SEMANTIC, DecoderOutputs, DualDecoder
from .encoder import HierarchicalEncoder
from .prompts import PromptEncoder


@dataclass
class ForwardBundle:
    tokens: torch.Tensor
    grid: tuple[int, int]
    first: DecoderOutputs | None     # None when co-training is disabled
    second: DecoderOutputs
    c_sem: torch.Tensor | None
    c_ins: torch.Tensor | None


class DualSegModel(nn.Module):
    def __init__(self, config: ExperimentConfig):
        super().__init__()
        self.config = config
        self.encoder = HierarchicalEncoder(config)
        self.prompt_encoder = PromptEncoder(config)
        self.decoder = DualDecoder(config)

    def run_forwards(self, images: torch.Tensor) -> ForwardBundle:
        """Encode once, then the (up to) two decoding forwards."""
        h, grid = self.encoder.encode(images)
        if not self.config.enable_cotraining:
            out2 = self.decoder.decoder_forward(h, None, None, "forward2", grid)
            return ForwardBundle(h, grid, None, out2, None, None)
        out1 = self.decoder.decoder_forward(h, None, None, "forward1", grid)
        m_sem = out1.y_bin[SEMANTIC]
        m_ins = out1.y_bin[INSTANCE]
        if self.config.detach_prompts:
            m_sem, m_ins = m_sem.detach(), m_ins.detach()
        c_sem, c_ins = self.prompt_encoder.encode_prompts(
            h, m_sem, m_ins, enabled=self.config.enable_prompts)
        out2 = self.decoder.decoder_forward(h, c_sem, c_ins, "forward2", grid)
        return ForwardBundle(h, grid, out1, out2, c_sem, c_ins)

    @torch.no_grad()
    def predict(self, images: torch.Tensor) -> ForwardBundle:
        was_training = self.training
        self.eval()
        try:
            return self.run_forwards(images)
        finally:
            self.train(was_training)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(config: ExperimentConfig) -> DualSegModel:
    """Seeded construction so identical configs give identical weights."""
    torch.manual_seed(config.seed)
    return DualSegModel(config)
