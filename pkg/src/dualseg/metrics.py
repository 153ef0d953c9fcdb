"""Reference evaluation metrics.

Semantic: Dice, mIoU, Hausdorff (full symmetric HD, not HD95).
Instance: object-level F1, AJI, panoptic quality.

These are the ground truth the optional native kernel is checked against,
so clarity beats speed everywhere here. Documented conventions:

* dice/miou/f1/aji/pq are 1.0 when the class is empty in both prediction
  and ground truth (vacuously perfect);
* hausdorff raises EmptyMaskError instead, and report aggregation skips
  the value (a distance to nothing has no meaningful zero);
* instance matching for F1/PQ uses strict IoU > 0.5, which makes matches
  provably one-to-one;
* AJI matches each ground-truth instance greedily to the best-IoU unused
  prediction, processing ground truths by descending area (ties by first
  raster pixel) so results never depend on id numbering;
* dataset-level values are per-image metrics averaged across images.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMaskError, ShapeMismatchError

REPORT_VERSION = 1


# ---------------------------------------------------------------------------
# semantic metrics


def _class_masks(pred: np.ndarray, gt: np.ndarray, class_id: int) -> tuple[np.ndarray, np.ndarray]:
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs gt {gt.shape}")
    return pred == class_id, gt == class_id


def dice(pred: np.ndarray, gt: np.ndarray, class_id: int) -> float:
    """2|P∩G| / (|P|+|G|); 1.0 when the class is absent from both."""
    p, g = _class_masks(pred, gt, class_id)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def miou(pred: np.ndarray, gt: np.ndarray, class_id: int) -> float:
    """|P∩G| / |P∪G|; 1.0 when the class is absent from both."""
    p, g = _class_masks(pred, gt, class_id)
    union = int((p | g).sum())
    if union == 0:
        return 1.0
    return int((p & g).sum()) / union


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Coordinates [N, 2] of foreground pixels with >= 1 four-neighbor background.

    Pixels outside the image count as background, so foreground touching the
    image border is boundary.
    """
    m = np.pad(mask.astype(bool), 1)
    all_fg_neighbors = (m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:])
    return np.argwhere(mask.astype(bool) & ~all_fg_neighbors)


def hausdorff(pred: np.ndarray, gt: np.ndarray, class_id: int) -> float:
    """Symmetric max-min Euclidean distance between boundary pixel sets, in pixels."""
    p, g = _class_masks(pred, gt, class_id)
    bp = boundary_pixels(p)
    bg = boundary_pixels(g)
    if len(bp) == 0 or len(bg) == 0:
        raise EmptyMaskError(
            f"class {class_id}: empty {'prediction' if len(bp) == 0 else 'ground truth'} mask")
    d_pg, _ = cKDTree(bg).query(bp)
    d_gp, _ = cKDTree(bp).query(bg)
    return float(max(d_pg.max(), d_gp.max()))


# ---------------------------------------------------------------------------
# instance-map bookkeeping


@dataclass
class LabelStats:
    """Per-id areas / first raster pixel, and pairwise overlaps of two maps."""

    gt_areas: dict[int, int]
    pred_areas: dict[int, int]
    gt_first: dict[int, int]
    pred_first: dict[int, int]
    overlaps: dict[tuple[int, int], int]

    def iou(self, g: int, p: int) -> float:
        inter = self.overlaps.get((g, p), 0)
        if inter == 0:
            return 0.0
        return inter / (self.gt_areas[g] + self.pred_areas[p] - inter)


def _areas_and_first(ids: np.ndarray) -> tuple[dict[int, int], dict[int, int]]:
    flat = ids.ravel()
    values, first, counts = np.unique(flat, return_index=True, return_counts=True)
    areas = {int(v): int(c) for v, c in zip(values, counts) if v != 0}
    firsts = {int(v): int(f) for v, f in zip(values, first) if v != 0}
    return areas, firsts


def label_stats(gt: np.ndarray, pred: np.ndarray) -> LabelStats:
    """Single pass over both maps; background (id 0) excluded everywhere."""
    if gt.shape != pred.shape:
        raise ShapeMismatchError(f"gt {gt.shape} vs pred {pred.shape}")
    gt_areas, gt_first = _areas_and_first(gt)
    pred_areas, pred_first = _areas_and_first(pred)
    both = (gt.ravel() > 0) & (pred.ravel() > 0)
    keys = gt.ravel()[both].astype(np.int64) << 32 | pred.ravel()[both].astype(np.int64)
    uniq, counts = np.unique(keys, return_counts=True)
    overlaps = {(int(k >> 32), int(k & 0xFFFFFFFF)): int(c) for k, c in zip(uniq, counts)}
    return LabelStats(gt_areas, pred_areas, gt_first, pred_first, overlaps)


def filter_by_class(ids: np.ndarray, classes: dict[int, int], class_id: int) -> np.ndarray:
    """Zero out every instance whose class differs from class_id."""
    keep = {i for i, c in classes.items() if c == class_id}
    if not keep:
        return np.zeros_like(ids)
    return np.where(np.isin(ids, sorted(keep)), ids, 0)


# ---------------------------------------------------------------------------
# instance metrics


def _matched_pairs(stats: LabelStats) -> list[tuple[int, int, float]]:
    """Greedy descending-IoU one-to-one matching, strict IoU > 0.5.

    Above 0.5 a ground truth can overlap that strongly with only one
    prediction (and vice versa), so the greedy result equals the optimal
    matching; ties cannot occur between admissible candidates.
    """
    candidates = []
    for (g, p), inter in stats.overlaps.items():
        iou = stats.iou(g, p)
        if iou > 0.5:
            candidates.append((iou, -inter, stats.gt_first[g], stats.pred_first[p], g, p))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2], t[3]))
    matched_g: set[int] = set()
    matched_p: set[int] = set()
    pairs = []
    for iou, _, _, _, g, p in candidates:
        if g in matched_g or p in matched_p:
            continue
        matched_g.add(g)
        matched_p.add(p)
        pairs.append((g, p, iou))
    return pairs


def object_f1(pred_ids: np.ndarray, gt_ids: np.ndarray, *,
              pred_classes: dict[int, int] | None = None,
              gt_classes: dict[int, int] | None = None,
              class_id: int | None = None) -> float:
    """Object-level F1 = 2TP / (2TP + FP + FN) under IoU > 0.5 matching.

    With class_id given, both maps are restricted to instances of that class
    first. 1.0 when both restricted maps are empty.
    """
    if class_id is not None:
        pred_ids = filter_by_class(pred_ids, pred_classes or {}, class_id)
        gt_ids = filter_by_class(gt_ids, gt_classes or {}, class_id)
    stats = label_stats(gt_ids, pred_ids)
    n_gt, n_pred = len(stats.gt_areas), len(stats.pred_areas)
    if n_gt == 0 and n_pred == 0:
        return 1.0
    tp = len(_matched_pairs(stats))
    return 2.0 * tp / (2.0 * tp + (n_pred - tp) + (n_gt - tp))


def aji(pred_ids: np.ndarray, gt_ids: np.ndarray) -> float:
    """Aggregated Jaccard index over all instances (class-agnostic).

    Each ground truth instance is matched to the unused prediction with the
    highest IoU; unmatched ground truths contribute their area to the
    denominator, and so does every prediction left unused.
    """
    stats = label_stats(gt_ids, pred_ids)
    if not stats.gt_areas and not stats.pred_areas:
        return 1.0
    preds_by_gt: dict[int, list[int]] = {}
    for (g, p) in stats.overlaps:
        preds_by_gt.setdefault(g, []).append(p)

    # content-based processing order: area desc, then first raster pixel
    order = sorted(stats.gt_areas, key=lambda g: (-stats.gt_areas[g], stats.gt_first[g]))
    used: set[int] = set()
    numerator = 0
    denominator = 0
    for g in order:
        best = None
        for p in preds_by_gt.get(g, []):
            if p in used:
                continue
            key = (stats.iou(g, p), stats.overlaps[(g, p)], -stats.pred_first[p])
            if best is None or key > best[0]:
                best = (key, p)
        if best is None:
            denominator += stats.gt_areas[g]
            continue
        p = best[1]
        used.add(p)
        inter = stats.overlaps[(g, p)]
        numerator += inter
        denominator += stats.gt_areas[g] + stats.pred_areas[p] - inter
    for p, area in stats.pred_areas.items():
        if p not in used:
            denominator += area
    if denominator == 0:
        return 1.0
    return numerator / denominator


def panoptic_quality(pred_ids: np.ndarray, gt_ids: np.ndarray, *,
                     pred_classes: dict[int, int] | None = None,
                     gt_classes: dict[int, int] | None = None,
                     class_id: int | None = None) -> tuple[float, float, float]:
    """(pq, sq, rq) with strict IoU > 0.5 matching.

    rq = TP / (TP + FP/2 + FN/2), sq = mean matched IoU (0 without matches),
    and pq is computed as sq * rq so the factorization holds exactly.
    (1, 1, 1) when both maps are empty.
    """
    if class_id is not None:
        pred_ids = filter_by_class(pred_ids, pred_classes or {}, class_id)
        gt_ids = filter_by_class(gt_ids, gt_classes or {}, class_id)
    stats = label_stats(gt_ids, pred_ids)
    n_gt, n_pred = len(stats.gt_areas), len(stats.pred_areas)
    if n_gt == 0 and n_pred == 0:
        return 1.0, 1.0, 1.0
    pairs = _matched_pairs(stats)
    tp = len(pairs)
    denom = tp + 0.5 * (n_pred - tp) + 0.5 * (n_gt - tp)
    rq = tp / denom
    sq = sum(iou for _, _, iou in pairs) / tp if tp else 0.0
    return sq * rq, sq, rq


def semantic_pq(pred: np.ndarray, gt: np.ndarray, class_id: int) -> tuple[float, float, float]:
    """PQ for a semantic class, treating its whole region as one segment."""
    p = (pred == class_id).astype(np.int32)
    g = (gt == class_id).astype(np.int32)
    return panoptic_quality(p, g)


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricReport:
    """Per-class metrics averaged over a set of images, plus macro means."""

    semantic: dict[str, dict[str, float | None]] = field(default_factory=dict)
    instance: dict[str, dict[str, float]] = field(default_factory=dict)
    panoptic: dict[str, dict[str, float]] = field(default_factory=dict)
    macro: dict[str, float | None] = field(default_factory=dict)
    num_images: int = 0
    version: int = REPORT_VERSION

    @property
    def mean_pq(self) -> float:
        values = [v["pq"] for v in self.panoptic.values() if v.get("pq") is not None]
        return float(np.mean(values)) if values else 0.0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        raw = json.loads(text)
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        return cls.from_json(Path(path).read_text())


def evaluate_sample(pred_sem: np.ndarray, pred_ids: np.ndarray, pred_classes: dict[int, int],
                    gt_sem: np.ndarray, gt_ids: np.ndarray, gt_classes: dict[int, int],
                    num_semantic_classes: int, num_instance_classes: int,
                    backend=None) -> dict:
    """All per-class metrics for one image. Missing values are None.

    `backend` may supply accelerated hausdorff/object_f1/aji/panoptic_quality
    with these same signatures; the remaining metrics stay in-process.
    """
    b = backend if backend is not None else sys.modules[__name__]
    out: dict = {"semantic": {}, "instance": {}, "panoptic": {}}
    for k in range(1, num_semantic_classes):
        try:
            hd = b.hausdorff(pred_sem, gt_sem, k)
        except EmptyMaskError:
            hd = None
        pq, sq, rq = semantic_pq(pred_sem, gt_sem, k)
        out["semantic"][str(k)] = {
            "dice": dice(pred_sem, gt_sem, k),
            "miou": miou(pred_sem, gt_sem, k),
            "hd": hd,
        }
        out["panoptic"][f"semantic_{k}"] = {"pq": pq, "sq": sq, "rq": rq}
    for k in range(1, num_instance_classes + 1):
        f1 = b.object_f1(pred_ids, gt_ids, pred_classes=pred_classes,
                         gt_classes=gt_classes, class_id=k)
        aji_k = b.aji(filter_by_class(pred_ids, pred_classes, k),
                      filter_by_class(gt_ids, gt_classes, k))
        pq, sq, rq = b.panoptic_quality(pred_ids, gt_ids, pred_classes=pred_classes,
                                        gt_classes=gt_classes, class_id=k)
        out["instance"][str(k)] = {"f1": f1, "aji": aji_k}
        out["panoptic"][f"instance_{k}"] = {"pq": pq, "sq": sq, "rq": rq}
    out["aji_all"] = b.aji(pred_ids, gt_ids)
    return out


def aggregate_reports(per_image: list[dict]) -> MetricReport:
    """Average per-image metric dicts, skipping missing (None) entries."""

    def mean_over(path: tuple[str, str, str]) -> float | None:
        vals = [img[path[0]][path[1]][path[2]] for img in per_image
                if img[path[0]].get(path[1], {}).get(path[2]) is not None]
        return float(np.mean(vals)) if vals else None

    report = MetricReport(num_images=len(per_image))
    if not per_image:
        return report
    sample = per_image[0]
    for k in sample["semantic"]:
        report.semantic[k] = {m: mean_over(("semantic", k, m)) for m in ("dice", "miou", "hd")}
    for k in sample["instance"]:
        report.instance[k] = {m: mean_over(("instance", k, m)) for m in ("f1", "aji")}
    for k in sample["panoptic"]:
        report.panoptic[k] = {m: mean_over(("panoptic", k, m)) for m in ("pq", "sq", "rq")}

    def macro(group: dict, name: str) -> float | None:
        vals = [v[name] for v in group.values() if v.get(name) is not None]
        return float(np.mean(vals)) if vals else None

    report.macro = {
        "dice": macro(report.semantic, "dice"),
        "miou": macro(report.semantic, "miou"),
        "hd": macro(report.semantic, "hd"),
        "f1": macro(report.instance, "f1"),
        "aji": macro(report.instance, "aji"),
        "pq": macro(report.panoptic, "pq"),
        "sq": macro(report.panoptic, "sq"),
        "rq": macro(report.panoptic, "rq"),
        "aji_all": float(np.mean([img["aji_all"] for img in per_image])),
    }
    return report
