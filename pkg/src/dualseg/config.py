"""Experiment configuration.

A single frozen dataclass drives the whole pipeline. Configs round-trip
through JSON exactly; unknown keys are rejected (typos should fail loudly,
not train silently with defaults).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class ExperimentConfig:
    # --- geometry ---
    image_size: int = 256          # square inputs; reference setting is 1024
    patch_size: int = 16           # final token stride; stage 1 runs at patch_size // 2
    embed_dim: int = 96            # token width after stage 2

    # --- task structure ---
    num_semantic_classes: int = 3  # includes background (class 0)
    num_instance_classes: int = 2  # excludes background
    align_classes: int = 2         # channels of the coarse probability-alignment maps

    # --- model size (desk-scale choices; scale up for real runs) ---
    num_heads: int = 4
    mlp_ratio: int = 4
    encoder_depths: tuple[int, int] = (2, 2)
    adapter_reduction: int = 4     # bottleneck ratio of the backbone adapters
    ssm_state_dim: int = 16        # state size of the selective scan
    decoder_depth: int = 1         # decoder blocks per head
    pixel_dim: int = 32            # channel width of the upsampled pixel features

    # --- optimization ---
    lambda1: float = 0.5           # weight on the cross-task consistency + binary-mask terms
    lr: float = 1.0e-4
    lr_decay: float = 0.98         # exponential, per epoch
    batch_size: int = 4
    epochs: int = 100
    seed: int = 0

    # --- collaboration toggles (the three ablation axes) ---
    enable_prompts: bool = True    # mask-conditioned prompt encoder (zero constraints when off)
    enable_guidance: bool = True   # decoder attends to the other task's constraints when on
    enable_cotraining: bool = True # two-forward training loop + its loss terms when on

    # --- training variants ---
    freeze_backbone: bool = False  # freeze encoder trunk, train adapters only
    detach_prompts: bool = False   # stop gradients flowing into the forward-1 masks
    symmetric_kl: bool = False     # Jeffreys (both directions) instead of semantic->instance

    # --- postprocessing ---
    fg_threshold: float = 0.5
    edge_threshold: float = 0.4
    min_instance_area: int = 10

    # --- infrastructure ---
    metrics_backend: str = "reference"  # "reference" | "kernel"

    def __post_init__(self) -> None:
        def require(ok: bool, field: str, why: str) -> None:
            if not ok:
                raise ValidationError(f"config field '{field}': {why}")

        require(self.image_size > 0, "image_size", "must be positive")
        require(self.patch_size > 0, "patch_size", "must be positive")
        require(self.image_size % self.patch_size == 0, "image_size",
                f"{self.image_size} not divisible by patch_size {self.patch_size}")
        require(self.patch_size % 2 == 0, "patch_size",
                "must be even (stage 1 tokenizes at half the final stride)")
        require(self.embed_dim > 0, "embed_dim", "must be positive")
        require(self.embed_dim % (2 * self.num_heads) == 0, "embed_dim",
                f"{self.embed_dim} must be divisible by 2 * num_heads = {2 * self.num_heads}")
        require(self.num_semantic_classes >= 2, "num_semantic_classes",
                "needs background plus at least one class")
        require(self.num_instance_classes >= 1, "num_instance_classes", "must be >= 1")
        require(self.align_classes >= 2, "align_classes", "must be >= 2")
        require(self.num_heads >= 1, "num_heads", "must be >= 1")
        require(self.mlp_ratio >= 1, "mlp_ratio", "must be >= 1")
        require(len(self.encoder_depths) == 2 and all(d >= 1 for d in self.encoder_depths),
                "encoder_depths", "must be two positive stage depths")
        require(self.adapter_reduction >= 1, "adapter_reduction", "must be >= 1")
        require(self.ssm_state_dim >= 1, "ssm_state_dim", "must be >= 1")
        require(self.decoder_depth >= 1, "decoder_depth", "must be >= 1")
        require(self.pixel_dim >= 1, "pixel_dim", "must be >= 1")
        require(self.lambda1 >= 0.0, "lambda1", "must be >= 0")
        require(self.lr > 0.0, "lr", "must be positive")
        require(0.0 < self.lr_decay <= 1.0, "lr_decay", "must lie in (0, 1]")
        require(self.batch_size >= 1, "batch_size", "must be >= 1")
        require(self.epochs >= 1, "epochs", "must be >= 1")
        require(0.0 < self.fg_threshold < 1.0, "fg_threshold", "must lie in (0, 1)")
        require(0.0 <= self.edge_threshold <= 1.0, "edge_threshold", "must lie in [0, 1]")
        require(self.min_instance_area >= 0, "min_instance_area", "must be >= 0")
        require(self.metrics_backend in ("reference", "kernel"), "metrics_backend",
                "must be 'reference' or 'kernel'")

    # --- derived quantities ---

    @property
    def token_grid(self) -> int:
        """Side length of the final token grid (image_size / patch_size)."""
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.token_grid * self.token_grid

    @property
    def num_queries_sem(self) -> int:
        """One query per semantic class."""
        return self.num_semantic_classes

    @property
    def num_queries_ins(self) -> int:
        """2 binary + 2 offset-map + (classes + background) type queries."""
        return 2 + 2 + (self.num_instance_classes + 1)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_depths"] = list(self.encoder_depths)
        return d


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from a plain dict, rejecting unknown keys."""
    unknown = sorted(set(raw) - set(_FIELD_TYPES))
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
    clean = dict(raw)
    if "encoder_depths" in clean:
        depths = clean["encoder_depths"]
        if not isinstance(depths, (list, tuple)):
            raise ValidationError("config field 'encoder_depths': must be a list of two ints")
        clean["encoder_depths"] = tuple(depths)
    return ExperimentConfig(**clean)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a JSON config file. Raises ParseError / ValidationError."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return config_from_dict(raw)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
