"""Collaborative dual-task segmentation: semantic + instance heads that
prompt each other through a two-forward training loop."""

from .config import ExperimentConfig, config_from_dict, load_config, save_config
from .data import (FolderDataset, GeneratorSpec, Sample, derive_instance_targets,
                   generate_sample, load_folder_dataset, resize_sample, save_dataset,
                   split_indices)
from .losses import LossReport
from .metrics import MetricReport, aggregate_reports, evaluate_sample
from .model import DualSegModel, ForwardBundle, build_model
from .pipeline import Batch, Checkpoint, Trainer, TrainState, load_checkpoint, \
    load_trainer, make_batch, run_ablation, save_checkpoint
from .postprocess import InstancePrediction, instances_from_maps

__version__ = "0.1.0"

__all__ = [
    "Batch", "Checkpoint", "DualSegModel", "ExperimentConfig", "FolderDataset",
    "ForwardBundle", "GeneratorSpec", "InstancePrediction", "LossReport",
    "MetricReport", "Sample", "TrainState", "Trainer", "aggregate_reports",
    "build_model", "config_from_dict", "derive_instance_targets", "evaluate_sample",
    "generate_sample", "instances_from_maps", "load_checkpoint", "load_config",
    "load_folder_dataset", "load_trainer", "make_batch", "resize_sample",
    "run_ablation", "save_checkpoint", "save_config", "save_dataset",
    "split_indices", "__version__",
]
