"""Instance extraction from binary/hv/type maps.

Watershed recipe: threshold foreground, build an edge-energy map from the
hv spatial gradients (instance interiors are smooth ramps, boundaries are
jumps), grow low-energy seed components with a marker watershed, drop
tiny fragments, then vote per-instance classes. Degenerate inputs yield
an empty prediction; nothing here raises.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.segmentation import watershed

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)


@dataclass
class InstancePrediction:
    label_map: np.ndarray                               # int32 [H,W], labels 1..M contiguous
    classes: dict[int, int] = field(default_factory=dict)
    confidences: dict[int, float] = field(default_factory=dict)
    centroids: dict[int, tuple[float, float]] = field(default_factory=dict)

    @property
    def num_instances(self) -> int:
        return len(self.classes)


def _sobel_kernels() -> tuple[np.ndarray, np.ndarray]:
    rng = np.arange(-2, 3, dtype=np.float64)
    x, y = np.meshgrid(rng, rng)
    kh = x / (x ** 2 + y ** 2 + 1e-12)
    kv = y / (x ** 2 + y ** 2 + 1e-12)
    return kh, kv


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    return (x - lo) / (hi - lo + 1e-8)


def edge_energy(hv: np.ndarray) -> np.ndarray:
    """Max of the min-max-normalized Sobel-5 gradient magnitudes of the hv maps."""
    kh, kv = _sobel_kernels()
    gh = np.abs(ndimage.correlate(hv[0].astype(np.float64), kh, mode="nearest"))
    gv = np.abs(ndimage.correlate(hv[1].astype(np.float64), kv, mode="nearest"))
    return np.maximum(_minmax(gh), _minmax(gv))


def instances_from_maps(binary_prob: np.ndarray, hv: np.ndarray, type_logits: np.ndarray,
                        fg_threshold: float = 0.5, edge_threshold: float = 0.4,
                        min_instance_area: int = 10,
                        debug: dict | None = None) -> InstancePrediction:
    """binary_prob [2,H,W] softmaxed, hv [2,H,W], type_logits [K_ins+1,H,W]."""
    fg_prob = binary_prob[1]
    fg = fg_prob >= fg_threshold
    h, w = fg.shape
    labels = np.zeros((h, w), np.int32)
    if fg.any():
        energy = edge_energy(hv)
        markers, _ = ndimage.label(fg & (energy < edge_threshold), structure=FOUR_CONN)
        labels = watershed(energy, markers=markers, mask=fg).astype(np.int32)
        if debug is not None:
            debug.update(energy=energy, markers=markers, fg=fg)

    # drop fragments below the area floor
    if labels.max() > 0:
        counts = np.bincount(labels.ravel())
        small = np.flatnonzero(counts < min_instance_area)
        labels[np.isin(labels, small)] = 0

    # contiguous relabel in raster order of first appearance
    out = np.zeros_like(labels)
    old_ids = np.unique(labels)
    old_ids = old_ids[old_ids > 0]
    order = sorted(old_ids, key=lambda i: int(np.flatnonzero(labels.ravel() == i)[0]))
    for new_id, old_id in enumerate(order, start=1):
        out[labels == old_id] = new_id

    # per-instance class vote over the type argmax, background votes excluded
    type_prob = np.exp(type_logits - type_logits.max(axis=0, keepdims=True))
    type_prob = type_prob / type_prob.sum(axis=0, keepdims=True)
    argmax_map = type_prob.argmax(axis=0)
    pred = InstancePrediction(label_map=out)
    for k in range(1, out.max() + 1):
        mask = out == k
        votes = np.bincount(argmax_map[mask], minlength=type_logits.shape[0])
        mean_prob = type_prob[:, mask].mean(axis=1)
        candidates = votes[1:]
        if candidates.max() > 0:
            best_votes = candidates.max()
            tied = [c + 1 for c in np.flatnonzero(candidates == best_votes)]
            cls = max(tied, key=lambda c: (mean_prob[c], -c))
        else:
            cls = int(mean_prob[1:].argmax()) + 1
        ys, xs = np.nonzero(mask)
        pred.classes[k] = int(cls)
        pred.confidences[k] = float(fg_prob[mask].mean())
        pred.centroids[k] = (float(ys.mean()), float(xs.mean()))
    return pred
