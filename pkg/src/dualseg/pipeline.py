"""Training, evaluation, checkpointing, and the ablation harness.

One training step: encode the batch once, run the promptless forward to
get coarse binary masks, turn those into per-task constraints, run the
constrained forward, and apply a single Adam update to the summed loss.
Validation selects the best model by mean panoptic quality.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import ExperimentConfig, config_from_dict
from .data import Sample, derive_instance_targets
from .decoder import INSTANCE, SEMANTIC
from .errors import NonFiniteLossError, ShapeMismatchError, ValidationError
from .losses import LossReport, bm_loss, ins_seg_loss, scc_loss, sem_seg_loss, total_loss
from .metrics import MetricReport, aggregate_reports, evaluate_sample
from .model import DualSegModel, build_model
from .postprocess import InstancePrediction, instances_from_maps

# (prompts, guidance, cotraining) rows of the ablation table, baseline first
ABLATION_GRID = [
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
]


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    lr_current: float = 0.0
    best_val_metric: float = -math.inf
    rng_state: np.ndarray | None = None      # torch RNG snapshot, captured on save

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "step": self.step, "lr_current": self.lr_current,
                "best_val_metric": self.best_val_metric}


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    state: TrainState
    config: ExperimentConfig


@dataclass
class Batch:
    ids: list[str]
    images: torch.Tensor           # [B,3,H,W]
    sem_labels: torch.Tensor       # [B,H,W] long
    ins_binary: torch.Tensor       # [B,2,H,W] one-hot float
    hv: torch.Tensor               # [B,2,H,W]
    type_labels: torch.Tensor      # [B,H,W] long
    fg_sem_quarter: torch.Tensor   # [B,H/4,W/4] binary float
    fg_ins_quarter: torch.Tensor   # [B,H/4,W/4] binary float


def make_batch(samples: list[Sample], image_size: int) -> Batch:
    """Stack samples and derive every training target."""
    images, sems, bins, hvs, types = [], [], [], [], []
    for s in samples:
        s.validate()
        if s.semantic.shape != (image_size, image_size):
            raise ShapeMismatchError(
                f"sample '{s.sample_id}': size {s.semantic.shape}, expected "
                f"({image_size}, {image_size}); resize before batching")
        binary, hv, type_map = derive_instance_targets(s.instance_ids, s.instance_classes)
        images.append(torch.from_numpy(s.image))
        sems.append(torch.from_numpy(s.semantic.astype(np.int64)))
        bins.append(torch.from_numpy(binary))
        hvs.append(torch.from_numpy(hv))
        types.append(torch.from_numpy(type_map.astype(np.int64)))
    sem_labels = torch.stack(sems)
    ins_binary = torch.stack(bins)
    return Batch(
        ids=[s.sample_id for s in samples],
        images=torch.stack(images),
        sem_labels=sem_labels,
        ins_binary=ins_binary,
        hv=torch.stack(hvs),
        type_labels=torch.stack(types),
        # nearest (top-left) 4x downsample matches the coarse-head resolution
        fg_sem_quarter=(sem_labels[:, ::4, ::4] > 0).float(),
        fg_ins_quarter=ins_binary[:, 1, ::4, ::4],
    )


class Trainer:
    def __init__(self, config: ExperimentConfig, model: DualSegModel | None = None,
                 log_path: str | Path | None = None):
        self.config = config
        self.model = model if model is not None else build_model(config)
        if config.freeze_backbone:
            self.model.encoder.freeze_backbone_enable_adapters()
        self.optimizer = torch.optim.Adam(
            (p for p in self.model.parameters() if p.requires_grad), lr=config.lr)
        self.state = TrainState(lr_current=config.lr)
        self.best: Checkpoint | None = None
        self.log_path = Path(log_path) if log_path is not None else None
        self.log_lines: list[str] = []

    # -- schedule -----------------------------------------------------------

    def lr_for_epoch(self, epoch: int) -> float:
        return self.config.lr * self.config.lr_decay ** epoch

    def _apply_lr(self, epoch: int) -> None:
        lr = self.lr_for_epoch(epoch)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.state.lr_current = lr

    # -- one optimisation step ----------------------------------------------

    def compute_losses(self, batch: Batch) -> tuple[torch.Tensor, LossReport]:
        bundle = self.model.run_forwards(batch.images)
        cfg = self.config
        if bundle.first is not None:
            scc = scc_loss(bundle.first.y_prob[SEMANTIC], bundle.first.y_prob[INSTANCE],
                           symmetric=cfg.symmetric_kl)
            bm = bm_loss(bundle.first.y_bin[SEMANTIC].softmax(dim=1)[:, 1],
                         bundle.first.y_bin[INSTANCE].softmax(dim=1)[:, 1],
                         batch.fg_sem_quarter, batch.fg_ins_quarter)
        else:
            scc = batch.images.new_zeros(())
            bm = batch.images.new_zeros(())
        sem, sem_parts = sem_seg_loss(bundle.second.final_sem, batch.sem_labels)
        ins, ins_parts = ins_seg_loss(
            bundle.second.final_ins["binary"], bundle.second.final_ins["hv"],
            bundle.second.final_ins["type"], batch.ins_binary, batch.hv, batch.type_labels)
        total = total_loss(scc, bm, sem, ins, cfg.lambda1)

        def f(t: torch.Tensor) -> float:
            return float(t.detach())

        report = LossReport(
            scc=f(scc), bm=f(bm), seg_sem=f(sem), seg_ins=f(ins),
            total=f(total), lambda1=cfg.lambda1,
            sem_ce=f(sem_parts["ce"]), sem_dice=f(sem_parts["dice"]),
            ins_dice=f(ins_parts["dice"]), ins_focal=f(ins_parts["focal"]),
            ins_mse=f(ins_parts["mse"]), ins_msge=f(ins_parts["msge"]))
        return total, report

    def train_step(self, batch: Batch) -> LossReport:
        self.model.train()
        total, report = self.compute_losses(batch)
        if not torch.isfinite(total):
            raise NonFiniteLossError(
                f"non-finite loss {float(total.detach())} at step {self.state.step} "
                f"on batch {batch.ids}")
        report.check()
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        self.state.step += 1
        return report

    # -- epochs ---------------------------------------------------------------

    def _log(self, report: LossReport, epoch: int) -> None:
        line = report.to_json_line(step=self.state.step, epoch=epoch,
                                   lr=self.state.lr_current)
        self.log_lines.append(line)
        if self.log_path is not None:
            with open(self.log_path, "a") as f:
                f.write(line + "\n")

    def fit(self, train_samples: list[Sample], val_samples: list[Sample] | None = None,
            epochs: int | None = None, patience: int | None = None,
            target_metric: float | None = None,
            progress: bool = False) -> Checkpoint:
        """Train with exponential LR decay; return the best-by-mean-PQ checkpoint.

        `patience`/`target_metric` stop early once validation stalls or the
        target is reached; with no validation split the final model wins.
        """
        if not train_samples:
            raise ValidationError("training split is empty")
        epochs = self.config.epochs if epochs is None else epochs
        stale = 0
        for epoch in range(self.state.epoch, epochs):
            self.state.epoch = epoch
            self._apply_lr(epoch)
            order = np.random.default_rng(self.config.seed * 100003 + epoch).permutation(
                len(train_samples))
            t0 = time.monotonic()
            for lo in range(0, len(order), self.config.batch_size):
                chunk = [train_samples[i] for i in order[lo:lo + self.config.batch_size]]
                report = self.train_step(make_batch(chunk, self.config.image_size))
                self._log(report, epoch)
            score = None
            if val_samples:
                score = self.evaluate(val_samples).mean_pq
                if score > self.state.best_val_metric:
                    self.state.best_val_metric = score
                    self.best = self.snapshot()
                    stale = 0
                else:
                    stale += 1
            if progress:
                dt = time.monotonic() - t0
                msg = f"epoch {epoch}: loss {report.total:.4f} lr {self.state.lr_current:.3e}"
                if score is not None:
                    msg += f" val mean_pq {score:.4f}"
                print(msg + f" ({dt:.1f}s)")
            self.state.epoch = epoch + 1
            self._apply_lr(epoch + 1)
            if score is not None and target_metric is not None and score >= target_metric:
                break
            if patience is not None and stale > patience:
                break
        if self.best is None:
            self.best = self.snapshot()
        return self.best

    # -- evaluation -----------------------------------------------------------

    def predict_sample(self, sample: Sample) -> tuple[np.ndarray, InstancePrediction]:
        """Semantic argmax map plus post-processed instances for one sample."""
        batch = make_batch([sample], self.config.image_size)
        bundle = self.model.predict(batch.images)
        sem_pred = bundle.second.final_sem[0].argmax(dim=0).numpy().astype(np.int32)
        ins = bundle.second.final_ins
        pred = instances_from_maps(
            ins["binary"][0].softmax(dim=0).numpy(), ins["hv"][0].numpy(),
            ins["type"][0].numpy(), fg_threshold=self.config.fg_threshold,
            edge_threshold=self.config.edge_threshold,
            min_instance_area=self.config.min_instance_area)
        return sem_pred, pred

    def evaluate(self, samples: list[Sample]) -> MetricReport:
        from .kernel_bridge import resolve_backend
        cfg = self.config
        backend = resolve_backend(cfg.metrics_backend)
        per_image = []
        for sample in samples:
            sem_pred, pred = self.predict_sample(sample)
            per_image.append(evaluate_sample(
                sem_pred, pred.label_map, pred.classes,
                sample.semantic, sample.instance_ids, sample.instance_classes,
                cfg.num_semantic_classes, cfg.num_instance_classes, backend=backend))
        return aggregate_reports(per_image)

    # -- persistence ----------------------------------------------------------

    def snapshot(self) -> Checkpoint:
        state = copy.copy(self.state)
        state.rng_state = torch.get_rng_state().numpy().copy()
        return Checkpoint(tensors=ckpt.module_tensors(self.model), state=state,
                          config=self.config)

    def save_checkpoint(self, path: str | Path, checkpoint: Checkpoint | None = None) -> None:
        save_checkpoint(path, checkpoint if checkpoint is not None else self.snapshot())

    def load_checkpoint(self, path: str | Path) -> Checkpoint:
        loaded = load_checkpoint(path)
        self.restore(loaded)
        return loaded

    def restore(self, checkpoint: Checkpoint) -> None:
        ckpt.load_module_tensors(self.model,
                                 {k: v for k, v in checkpoint.tensors.items()},
                                 context="checkpoint")
        self.state = copy.copy(checkpoint.state)
        if self.state.rng_state is not None:
            torch.set_rng_state(torch.from_numpy(
                np.ascontiguousarray(self.state.rng_state)))
        self._apply_lr(self.state.epoch)


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> None:
    tensors = {f"model/{k}": v for k, v in checkpoint.tensors.items()}
    if checkpoint.state.rng_state is not None:
        tensors["train_state/torch_rng"] = checkpoint.state.rng_state
    meta = {"kind": "checkpoint", "config": checkpoint.config.to_dict(),
            "state": checkpoint.state.to_dict()}
    ckpt.save_container(path, tensors, meta=meta)


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, tensors = ckpt.load_container(path)
    meta = header["meta"]
    state = TrainState(**meta["state"])
    state.rng_state = tensors.pop("train_state/torch_rng", None)
    model_tensors = {k[len("model/"):]: v for k, v in tensors.items()
                     if k.startswith("model/")}
    return Checkpoint(tensors=model_tensors, state=state,
                      config=config_from_dict(meta["config"]))


def load_trainer(path: str | Path, log_path: str | Path | None = None) -> Trainer:
    """Rebuild a trainer (model + schedule position) from a checkpoint file."""
    loaded = load_checkpoint(path)
    trainer = Trainer(loaded.config, log_path=log_path)
    trainer.restore(loaded)
    return trainer


# -- ablation harness ---------------------------------------------------------


def run_ablation(base_config: ExperimentConfig, train_samples: list[Sample],
                 val_samples: list[Sample], test_samples: list[Sample],
                 epochs: int | None = None, progress: bool = False) -> list[dict]:
    """Train and score every on/off combination of the three framework parts.

    Rows follow ABLATION_GRID order: baseline first, full model last. Every
    run starts from the same seed so rows differ only in the toggles.
    """
    rows = []
    for prompts, guidance, cotraining in ABLATION_GRID:
        config = base_config.replace(enable_prompts=prompts, enable_guidance=guidance,
                                     enable_cotraining=cotraining)
        trainer = Trainer(config)
        best = trainer.fit(train_samples, val_samples, epochs=epochs, progress=progress)
        trainer.restore(best)
        report = trainer.evaluate(test_samples)
        row = {"prompts": prompts, "guidance": guidance, "cotraining": cotraining,
               "mean_pq": report.mean_pq, **report.macro}
        rows.append(row)
        if progress:
            flags = "".join("+-"[not v] for v in (prompts, guidance, cotraining))
            print(f"ablation {flags}: mean_pq {row['mean_pq']:.4f}")
    return rows
