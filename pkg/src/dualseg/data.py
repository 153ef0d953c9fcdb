"""Synthetic paired semantic+instance data, training targets, and folder IO.

The generator builds scenes where blob-shaped semantic regions contain
elliptical instances, and the instance class distribution depends on the
enclosing region class. That regional interdependence is the signal the
collaborative training loop is supposed to exploit, so the generator
enforces it by construction: every instance lives inside (and is clipped
to) semantic foreground.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import GeneratorError, MissingFileError, ShapeMismatchError, ValidationError


# ---------------------------------------------------------------------------
# sample container


@dataclass
class Sample:
    """One image with paired masks. Arrays are unbatched ([C,H,W] / [H,W])."""

    image: np.ndarray            # float32 [3, H, W], values in [0, 1]
    semantic: np.ndarray         # int32 [H, W], 0 = background
    instance_ids: np.ndarray     # int32 [H, W], 0 = background, >0 = instance id
    instance_classes: dict[int, int] = field(default_factory=dict)  # id -> class in [1, K_ins]
    sample_id: str = ""

    def validate(self) -> None:
        h, w = self.semantic.shape
        if self.image.shape != (3, h, w) or self.instance_ids.shape != (h, w):
            raise ShapeMismatchError(
                f"sample '{self.sample_id}': image {self.image.shape[1:]} vs "
                f"semantic {self.semantic.shape} vs instance {self.instance_ids.shape}")
        present = set(int(k) for k in np.unique(self.instance_ids)) - {0}
        missing = present - set(self.instance_classes)
        if missing:
            raise ShapeMismatchError(
                f"sample '{self.sample_id}': instance ids {sorted(missing)} have no class entry")
        for k in sorted(present):
            # default ndimage structuring element = 4-connectivity
            _, pieces = ndimage.label(self.instance_ids == k)
            if pieces != 1:
                raise ValidationError(
                    f"sample '{self.sample_id}': instance {k} splits into {pieces} "
                    "4-connected pieces")


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class GeneratorSpec:
    image_size: int = 256
    num_regions: int = 3
    region_radius: tuple[float, float] = (40.0, 70.0)
    region_margin: float = 0.8           # min center distance to the edge, in region radii
    num_region_classes: int = 2          # semantic classes excluding background
    region_waviness: float = 0.45        # ripple amplitude on region outlines
    num_instances: int = 6
    instance_radius: tuple[float, float] = (7.0, 14.0)
    instance_aspect: tuple[float, float] = (0.6, 1.0)   # minor/major axis ratio
    num_instance_classes: int = 2
    class_affinity: float = 0.8          # P(instance class == class preferred by its region)
    touching_fraction: float = 0.25      # cap on the fraction of instances touching another
    texture: float = 0.05                # low-frequency shading amplitude on the rendered image
    noise: float = 0.05                  # pixel noise amplitude on the rendered image

    @classmethod
    def for_image_size(cls, n: int, **overrides) -> "GeneratorSpec":
        """Defaults with all radii scaled to the requested resolution."""
        base = dict(
            image_size=n,
            region_radius=(0.16 * n, 0.27 * n),
            instance_radius=(0.028 * n, 0.055 * n),
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["region_radius"] = list(self.region_radius)
        d["instance_radius"] = list(self.instance_radius)
        d["instance_aspect"] = list(self.instance_aspect)
        return d


def _check_spec(spec: GeneratorSpec) -> None:
    n = spec.image_size
    if spec.num_regions < 1:
        raise GeneratorError("need at least one semantic region")
    if spec.region_radius[0] > spec.region_radius[1] or spec.region_radius[0] <= 0:
        raise GeneratorError(f"bad region_radius range {spec.region_radius}")
    if spec.instance_radius[0] > spec.instance_radius[1] or spec.instance_radius[0] <= 0:
        raise GeneratorError(f"bad instance_radius range {spec.instance_radius}")
    if spec.region_radius[1] >= n / 2:
        raise GeneratorError(f"region radius {spec.region_radius[1]} too large for image {n}")
    if spec.instance_radius[1] >= spec.region_radius[0]:
        raise GeneratorError(
            f"instances (radius up to {spec.instance_radius[1]}) do not fit inside "
            f"regions (radius from {spec.region_radius[0]})")
    if not (0.0 <= spec.touching_fraction <= 1.0):
        raise GeneratorError(f"touching_fraction {spec.touching_fraction} outside [0, 1]")
    lo, hi = spec.instance_aspect
    if not (0.0 < lo <= hi <= 1.0):
        raise GeneratorError(f"instance_aspect {spec.instance_aspect} must satisfy "
                             "0 < low <= high <= 1")
    if spec.num_region_classes < 1 or spec.num_instance_classes < 1:
        raise GeneratorError("need at least one region class and one instance class")
    if spec.texture < 0.0 or spec.noise < 0.0:
        raise GeneratorError("texture and noise amplitudes must be non-negative")
    if spec.region_waviness < 0.0:
        raise GeneratorError("region_waviness must be non-negative")
    if spec.region_margin < 0.0:
        raise GeneratorError("region_margin must be non-negative")
    if 2.0 * spec.region_margin * spec.region_radius[1] >= n:
        raise GeneratorError(
            f"region_margin {spec.region_margin} leaves no room for centers of "
            f"radius-{spec.region_radius[1]} regions in a {n}px image")


def _ellipse_mask(h: int, w: int, cy: float, cx: float,
                  a: float, b: float, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx - cx) * math.cos(angle) + (yy - cy) * math.sin(angle)
    v = -(xx - cx) * math.sin(angle) + (yy - cy) * math.cos(angle)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _keep_component(mask: np.ndarray, y: int, x: int) -> np.ndarray:
    """4-connected component of mask containing (y, x); empty if (y, x) outside."""
    if not mask[y, x]:
        return np.zeros_like(mask)
    labels, _ = ndimage.label(mask, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    return labels == labels[y, x]


def _touches_other(mask: np.ndarray, others: np.ndarray) -> bool:
    """True if mask is 4-adjacent to (or overlaps) nonzero pixels of others."""
    grown = ndimage.binary_dilation(
        mask, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool))
    return bool(np.any(grown & (others > 0)))


def generate_sample(seed: int, spec: GeneratorSpec) -> Sample:
    """Deterministic synthetic scene: blob regions with elliptical instances inside.

    Raises GeneratorError when the spec is unsatisfiable (instances larger than
    regions, regions larger than the image, or placement keeps failing).
    """
    _check_spec(spec)
    rng = np.random.default_rng(seed)
    n = spec.image_size

    # --- semantic regions: anisotropic bumps + a smoothed noise field, thresholded
    semantic = np.zeros((n, n), np.int32)
    region_info: list[tuple[int, int, int]] = []   # (cy, cx, class)
    for _ in range(spec.num_regions):
        r = rng.uniform(*spec.region_radius)
        margin = spec.region_margin * r
        cy = float(rng.uniform(margin, n - margin))
        cx = float(rng.uniform(margin, n - margin))
        a = r * rng.uniform(0.85, 1.15)
        b = r * rng.uniform(0.6, 0.95)
        angle = rng.uniform(0, math.pi)
        yy, xx = np.mgrid[0:n, 0:n]
        u = (xx - cx) * math.cos(angle) + (yy - cy) * math.sin(angle)
        v = -(xx - cx) * math.sin(angle) + (yy - cy) * math.cos(angle)
        q = (u / a) ** 2 + (v / b) ** 2
        ripple = ndimage.gaussian_filter(rng.standard_normal((n, n)), sigma=max(2.0, r / 3))
        ripple = ripple / (np.abs(ripple).max() + 1e-9)
        blob = (q + spec.region_waviness * ripple) < 1.0
        blob = _keep_component(blob, int(round(cy)), int(round(cx)))
        if not blob.any():
            continue
        cls = int(rng.integers(1, spec.num_region_classes + 1))
        semantic[blob] = cls
        region_info.append((int(round(cy)), int(round(cx)), cls))
    if not region_info:
        raise GeneratorError("no semantic region survived thresholding; enlarge region_radius")

    # --- instances: ellipses clipped to semantic foreground, non-overlapping
    ids = np.zeros((n, n), np.int32)
    classes: dict[int, int] = {}
    fg_coords = np.argwhere(semantic > 0)
    touch_budget = int(math.floor(spec.touching_fraction * spec.num_instances))
    touches_used = 0
    for k in range(1, spec.num_instances + 1):
        placed = False
        for _ in range(300):
            py, px = fg_coords[rng.integers(len(fg_coords))]
            if ids[py, px] != 0:
                continue
            a = rng.uniform(*spec.instance_radius)
            b = a * rng.uniform(*spec.instance_aspect)
            angle = rng.uniform(0, math.pi)
            mask = _ellipse_mask(n, n, float(py), float(px), a, b, angle)
            mask &= semantic > 0
            mask &= ids == 0
            mask = _keep_component(mask, py, px)
            if mask.sum() < 4:
                continue
            ys, xs = np.nonzero(mask)
            gy, gx = int(round(ys.mean())), int(round(xs.mean()))
            if semantic[gy, gx] == 0 or ids[gy, gx] != 0:
                continue   # clipped shape drifted off foreground
            if _touches_other(mask, ids):
                if touches_used >= touch_budget:
                    continue
                touches_used += 1
            ids[mask] = k
            region_cls = int(semantic[gy, gx])
            preferred = 1 + (region_cls - 1) % spec.num_instance_classes
            if spec.num_instance_classes == 1 or rng.uniform() < spec.class_affinity:
                cls = preferred
            else:
                others = [c for c in range(1, spec.num_instance_classes + 1) if c != preferred]
                cls = int(others[rng.integers(len(others))])
            classes[k] = cls
            placed = True
            break
        if not placed:
            raise GeneratorError(
                f"could not place instance {k}/{spec.num_instances}; "
                "regions too small or too crowded for the requested instances")

    # --- render: per-class tints, instance shading, low-frequency texture, noise
    region_palette = np.array(
        [[0.86, 0.82, 0.88]] +
        [[0.78 - 0.10 * (c % 3), 0.66 + 0.08 * ((c + 1) % 3), 0.74 - 0.06 * (c % 2)]
         for c in range(1, spec.num_region_classes + 1)], np.float32)
    image = region_palette[np.minimum(semantic, len(region_palette) - 1)]
    image = image.transpose(2, 0, 1).copy()

    texture = ndimage.gaussian_filter(rng.standard_normal((n, n)), sigma=9.0)
    texture = texture / (np.abs(texture).max() + 1e-9)
    image += spec.texture * texture[None]

    inst_palette = np.array(
        [[0.36 + 0.12 * (c % 2), 0.22 + 0.10 * ((c + 1) % 3), 0.46 - 0.08 * (c % 3)]
         for c in range(1, spec.num_instance_classes + 1)], np.float32)
    for k, cls in classes.items():
        m = ids == k
        shade = float(rng.uniform(0.85, 1.1))
        image[:, m] = (inst_palette[cls - 1] * shade)[:, None]

    image += rng.normal(0.0, spec.noise, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    return Sample(image=image, semantic=semantic, instance_ids=ids,
                  instance_classes=classes, sample_id=f"seed{seed}")


# ---------------------------------------------------------------------------
# instance training targets


def derive_instance_targets(ids: np.ndarray,
                            classes: dict[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """HoverNet-style targets from an instance id map.

    Returns (binary_map [2,H,W] one-hot bg/fg, hv_maps [2,H,W] in [-1,1],
    type_map [H,W] in [0, K_ins]). Horizontal/vertical values are
    (x-cx)/max|x-cx| and (y-cy)/max|y-cy| inside each instance's extent,
    zero on background.
    """
    h, w = ids.shape
    hv = np.zeros((2, h, w), np.float32)
    type_map = np.zeros((h, w), np.int32)
    for k in np.unique(ids):
        if k == 0:
            continue
        ys, xs = np.nonzero(ids == k)
        cx, cy = xs.mean(), ys.mean()
        dx, dy = xs - cx, ys - cy
        mx = np.abs(dx).max()
        my = np.abs(dy).max()
        hv[0, ys, xs] = dx / mx if mx > 0 else 0.0
        hv[1, ys, xs] = dy / my if my > 0 else 0.0
        type_map[ys, xs] = classes.get(int(k), 1)
    fg = ids > 0
    binary = np.stack([~fg, fg]).astype(np.float32)
    return binary, hv, type_map


# ---------------------------------------------------------------------------
# splits and folder layout


def split_indices(n: int, seed: int) -> dict[str, list[int]]:
    """Seeded 7:1:2 partition: sizes floor(0.7n) / floor(0.1n) / rest."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(0.7 * n))
    n_val = int(math.floor(0.1 * n))
    return {
        "train": sorted(int(i) for i in perm[:n_train]),
        "val": sorted(int(i) for i in perm[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in perm[n_train + n_val:]),
    }


def save_dataset(samples: list[Sample], root: str | Path, seed: int) -> None:
    """Write samples in the documented folder layout with a split manifest.

    Layout: images/<id>.png (RGB), semantic/<id>.png (8-bit labels),
    instance/<id>.png (16-bit ids) + instance/<id>.json (id -> class),
    manifest.json (sample ids + split assignment).
    """
    root = Path(root)
    for sub in ("images", "semantic", "instance"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    splits = split_indices(len(samples), seed)
    index_to_split = {i: name for name, idx in splits.items() for i in idx}
    manifest = {"version": 1, "seed": seed, "samples": []}
    for i, s in enumerate(samples):
        sid = s.sample_id or f"sample_{i:04d}"
        rgb = np.clip(np.round(s.image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(rgb).save(root / "images" / f"{sid}.png")
        Image.fromarray(s.semantic.astype(np.uint8)).save(root / "semantic" / f"{sid}.png")
        Image.fromarray(s.instance_ids.astype(np.uint16)).save(root / "instance" / f"{sid}.png")
        (root / "instance" / f"{sid}.json").write_text(
            json.dumps({str(k): v for k, v in sorted(s.instance_classes.items())}))
        manifest["samples"].append({"id": sid, "split": index_to_split[i]})
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


class FolderDataset:
    """Lazy dataset over the documented folder layout.

    Uses manifest.json for split assignment when present; otherwise derives
    a seeded 7:1:2 split over the sorted image filenames.
    """

    def __init__(self, root: str | Path, seed: int = 0, split: str | None = None,
                 _entries: list[tuple[str, str]] | None = None):
        self.root = Path(root)
        if _entries is not None:
            self.entries = _entries
        else:
            self.entries = self._index(seed)
        if split is not None:
            self.entries = [(sid, sp) for sid, sp in self.entries if sp == split]

    def _index(self, seed: int) -> list[tuple[str, str]]:
        images_dir = self.root / "images"
        manifest_path = self.root / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
            entries = [(s["id"], s["split"]) for s in manifest["samples"]]
        else:
            if not images_dir.is_dir():
                raise MissingFileError(f"{images_dir} does not exist")
            sids = sorted(p.stem for p in images_dir.glob("*.png"))
            splits = split_indices(len(sids), seed)
            by_index = {i: name for name, idx in splits.items() for i in idx}
            entries = [(sid, by_index[i]) for i, sid in enumerate(sids)]
        if not entries:
            raise MissingFileError(f"{self.root}: no samples found")
        for sid, _ in entries:
            for rel in (f"images/{sid}.png", f"semantic/{sid}.png",
                        f"instance/{sid}.png", f"instance/{sid}.json"):
                if not (self.root / rel).exists():
                    raise MissingFileError(f"sample '{sid}': missing {self.root / rel}")
        return entries

    def subset(self, split: str) -> "FolderDataset":
        return FolderDataset(self.root, split=split,
                             _entries=[e for e in self.entries if e[1] == split])

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> Sample:
        sid, _ = self.entries[i]
        image = np.asarray(Image.open(self.root / "images" / f"{sid}.png"),
                           np.float32).transpose(2, 0, 1) / 255.0
        semantic = np.asarray(Image.open(self.root / "semantic" / f"{sid}.png"), np.int32)
        ids = np.asarray(Image.open(self.root / "instance" / f"{sid}.png"), np.int32)
        classes_raw = json.loads((self.root / "instance" / f"{sid}.json").read_text())
        sample = Sample(image=image, semantic=semantic, instance_ids=ids,
                        instance_classes={int(k): int(v) for k, v in classes_raw.items()},
                        sample_id=sid)
        if image.shape[1:] != semantic.shape or semantic.shape != ids.shape:
            raise ShapeMismatchError(
                f"sample '{sid}': image {image.shape[1:]}, semantic {semantic.shape}, "
                f"instance {ids.shape} disagree")
        return sample

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def load_folder_dataset(root: str | Path, seed: int = 0) -> FolderDataset:
    return FolderDataset(root, seed=seed)


def resize_sample(sample: Sample, size: int) -> Sample:
    """Bilinear image / nearest mask resize onto a square grid."""
    h, w = sample.semantic.shape
    if h == size and w == size:
        return sample
    img = Image.fromarray(
        np.clip(np.round(sample.image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8))
    img = img.resize((size, size), Image.BILINEAR)
    image = np.asarray(img, np.float32).transpose(2, 0, 1) / 255.0
    sem = Image.fromarray(sample.semantic.astype(np.int32), mode="I")
    sem = np.asarray(sem.resize((size, size), Image.NEAREST), np.int32)
    inst = Image.fromarray(sample.instance_ids.astype(np.int32), mode="I")
    inst = np.asarray(inst.resize((size, size), Image.NEAREST), np.int32)
    return Sample(image=image, semantic=sem, instance_ids=inst,
                  instance_classes=dict(sample.instance_classes), sample_id=sample.sample_id)
