"""Command-line entry point.

Subcommands: gen-data, train, eval, predict, ablate, report. Every
ExperimentConfig field is exposed as a same-named flag (underscores as
dashes); precedence is defaults < config file (--config or the
DUALSEG_CONFIG environment variable) < flags. Commands exit 0 on
success and nonzero with a one-line stderr diagnostic on failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict, load_config, save_config
from .data import (FolderDataset, GeneratorSpec, Sample, generate_sample, resize_sample,
                   save_dataset)
from .errors import DualsegError, ValidationError
from .metrics import MetricReport
from .pipeline import Trainer, load_trainer, run_ablation

CONFIG_ENV = "DUALSEG_CONFIG"


# -- config plumbing ----------------------------------------------------------


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            group.add_argument(flag, dest=f.name, default=None,
                               action=argparse.BooleanOptionalAction)
        elif isinstance(f.default, tuple):
            group.add_argument(flag, dest=f.name, default=None, metavar="N,N",
                               type=lambda s: [int(v) for v in s.split(",")])
        elif isinstance(f.default, int):
            group.add_argument(flag, dest=f.name, default=None, type=int)
        elif isinstance(f.default, float):
            group.add_argument(flag, dest=f.name, default=None, type=float)
        else:
            group.add_argument(flag, dest=f.name, default=None, type=str)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    base = load_config(path).to_dict() if path else {}
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            base[f.name] = value
    return config_from_dict(base)


def load_split_samples(data_dir: str, split: str, config: ExperimentConfig,
                       seed: int | None = None) -> list[Sample]:
    dataset = FolderDataset(data_dir, seed=config.seed if seed is None else seed,
                            split=split)
    return [resize_sample(s, config.image_size) for s in dataset]


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    if args.n < 10:
        raise ValidationError("need at least 10 samples for a nonempty split")
    if args.spec:
        spec = GeneratorSpec(**json.loads(Path(args.spec).read_text()))
    else:
        spec = GeneratorSpec.for_image_size(args.image_size)
    samples = []
    for i in range(args.n):
        sample = generate_sample(args.seed + i, spec)
        sample.sample_id = f"sample_{i:04d}"
        samples.append(sample)
    save_dataset(samples, args.out, seed=args.seed)
    (Path(args.out) / "generator_spec.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_samples = load_split_samples(args.data, "train", config)
    val_samples = load_split_samples(args.data, "val", config)
    save_config(config, out / "config.json")
    trainer = Trainer(config, log_path=out / "train_log.jsonl")
    best = trainer.fit(train_samples, val_samples, epochs=args.epochs_override,
                       patience=args.patience, target_metric=args.target_metric,
                       progress=not args.quiet)
    trainer.save_checkpoint(out / "checkpoint_last.dsck")
    trainer.save_checkpoint(out / "checkpoint_best.dsck", best)
    print(f"best val mean_pq {trainer.state.best_val_metric:.4f}; "
          f"checkpoints in {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    trainer = load_trainer(args.checkpoint)
    samples = load_split_samples(args.data, args.split, trainer.config)
    report = trainer.evaluate(samples)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report.save(report_path)
    macro = {k: v for k, v in report.macro.items() if v is not None}
    line = "  ".join(f"{k} {v:.4f}" for k, v in sorted(macro.items()))
    print(f"{args.split} ({report.num_images} images): {line}")
    return 0


def _save_gray(path: Path, arr: np.ndarray) -> None:
    from PIL import Image
    Image.fromarray(arr).save(path)


def cmd_predict(args: argparse.Namespace) -> int:
    from PIL import Image

    trainer = load_trainer(args.checkpoint)
    config = trainer.config
    img = Image.open(args.image).convert("RGB")
    img = img.resize((config.image_size, config.image_size), Image.BILINEAR)
    image = np.asarray(img, np.float32).transpose(2, 0, 1) / 255.0
    sample = Sample(image=image,
                    semantic=np.zeros(image.shape[1:], np.int32),
                    instance_ids=np.zeros(image.shape[1:], np.int32),
                    sample_id=Path(args.image).stem)
    sem_pred, pred = trainer.predict_sample(sample)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = sample.sample_id
    _save_gray(out / f"{stem}_semantic.png", sem_pred.astype(np.uint8))
    _save_gray(out / f"{stem}_instances.png", pred.label_map.astype(np.uint16))
    _overlay_figure(image, sem_pred, pred.label_map, out / f"{stem}_overlay.png")
    print(f"{pred.num_instances} instances; outputs in {out}")
    return 0


def _overlay_figure(image: np.ndarray, sem: np.ndarray, ids: np.ndarray,
                    path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from skimage.segmentation import find_boundaries

    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    rgb = image.transpose(1, 2, 0)
    axes[0].imshow(rgb)
    axes[0].set_title("input")
    axes[1].imshow(rgb)
    axes[1].imshow(np.ma.masked_equal(sem, 0), alpha=0.5, cmap="tab10",
                   interpolation="nearest", vmin=0, vmax=9)
    axes[1].set_title("semantic")
    axes[2].imshow(rgb)
    axes[2].imshow(np.ma.masked_equal(ids, 0), alpha=0.45, cmap="tab20",
                   interpolation="nearest")
    boundaries = find_boundaries(ids, mode="outer")
    axes[2].imshow(np.ma.masked_equal(boundaries.astype(np.uint8), 0), cmap="gray_r",
                   interpolation="nearest")
    axes[2].set_title("instances")
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


ABLATION_COLUMNS = ["prompts", "guidance", "cotraining", "mean_pq", "dice", "miou",
                    "f1", "aji", "pq", "sq", "rq"]


def _format_table(rows: list[dict], columns: list[str]) -> str:
    def fmt(v) -> str:
        if isinstance(v, bool):
            return "+" if v else "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return "" if v is None else str(v)

    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def cmd_ablate(args: argparse.Namespace) -> int:
    config = build_config(args)
    train_samples = load_split_samples(args.data, "train", config)
    val_samples = load_split_samples(args.data, "val", config)
    test_samples = load_split_samples(args.data, "test", config)
    rows = run_ablation(config, train_samples, val_samples, test_samples,
                        epochs=args.epochs_override, progress=not args.quiet)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    table = _format_table(rows, ABLATION_COLUMNS)
    (out / "ablation.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for spec in args.metrics:
        label, _, path = spec.rpartition("=")
        report = MetricReport.load(path)
        reports.append((label or Path(path).stem, report))

    rows = [{"run": label, "mean_pq": rep.mean_pq,
             **{k: v for k, v in rep.macro.items()}} for label, rep in reports]
    columns = ["run", "mean_pq", "dice", "miou", "hd", "f1", "aji", "pq", "sq", "rq"]
    table = _format_table(rows, columns)
    (out / "metrics.txt").write_text(table + "\n")
    with open(out / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)

    metric_names = ["dice", "miou", "f1", "aji", "pq"]
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(metric_names), 4))
    width = 0.8 / max(len(reports), 1)
    xs = np.arange(len(metric_names))
    for i, (label, rep) in enumerate(reports):
        vals = [rep.macro.get(m) or 0.0 for m in metric_names]
        ax.bar(xs + i * width, vals, width, label=label)
    ax.set_xticks(xs + width * (len(reports) - 1) / 2)
    ax.set_xticklabels(metric_names)
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "metric_bars.png", dpi=120)
    plt.close(fig)

    if args.panels:
        from PIL import Image
        images = [np.asarray(Image.open(p).convert("RGB")) for p in args.panels]
        fig, axes = plt.subplots(len(images), 1, figsize=(10, 3.4 * len(images)))
        axes = np.atleast_1d(axes)
        for ax, img, p in zip(axes, images, args.panels):
            ax.imshow(img)
            ax.set_title(Path(p).stem, fontsize=9)
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(out / "overlay_panels.png", dpi=120)
        plt.close(fig)

    print(table)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualseg", description="Collaborative dual-task segmentation toolkit")
    parser.add_argument("--debug", action="store_true",
                        help="show full tracebacks instead of one-line errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired-mask dataset")
    p.add_argument("--out", required=True, help="output dataset folder")
    p.add_argument("--n", type=int, required=True, help="number of samples (>= 10)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--spec", help="JSON file with GeneratorSpec fields")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset folder")
    p.add_argument("--config", help=f"JSON config file (or ${CONFIG_ENV})")
    p.add_argument("--data", required=True, help="dataset folder")
    p.add_argument("--out", required=True, help="output folder for checkpoints + logs")
    p.add_argument("--epochs-override", type=int, default=None,
                   help="train this many epochs regardless of the config value")
    p.add_argument("--patience", type=int, default=None,
                   help="stop after this many epochs without val improvement")
    p.add_argument("--target-metric", type=float, default=None,
                   help="stop once val mean PQ reaches this value")
    p.add_argument("--quiet", action="store_true")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--report", required=True, help="output metric-report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment one image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input RGB image")
    p.add_argument("--out", default="predictions", help="output folder")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train/score all 8 toggle combinations")
    p.add_argument("--config", help=f"JSON config file (or ${CONFIG_ENV})")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output folder for the table")
    p.add_argument("--epochs-override", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="merge metric reports into figures + tables")
    p.add_argument("--metrics", nargs="+", required=True,
                   help="metric-report JSON paths, optionally label=path")
    p.add_argument("--panels", nargs="*", default=[],
                   help="overlay images (from predict) to tile into one figure")
    p.add_argument("--out", required=True, help="output folder")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DualsegError, OSError) as e:
        if args.debug:
            raise
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:                      # never a stack trace without --debug
        if args.debug:
            raise
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
