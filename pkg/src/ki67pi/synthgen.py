"""Synthetic Ki67-stained patches with exact centroid ground truth.

Positive nuclei are rendered brown, negative nuclei blue, on a pink textured
background. A configurable share of patches carries only clutter (dust,
streaks, overstained smears) and no nuclei.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage as ndi

from .annotations import AnnotatedImage, CentroidLabel, Klass, save_annotations

MAX_PLACEMENT_ATTEMPTS = 1000

BACKGROUND_RGB = (232.0, 192.0, 206.0)
POS_RGB = (140.0, 82.0, 44.0)
NEG_RGB = (88.0, 100.0, 172.0)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 256
    n_neg_range: tuple[int, int] = (6, 16)
    n_pos_range: tuple[int, int] = (2, 8)
    nucleus_radius_range: tuple[float, float] = (4.0, 6.0)
    overlap_fraction: float = 0.1
    distractor_fraction: float = 0.12
    noise_sigma: float = 4.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_neg_range", "n_pos_range", "nucleus_radius_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be a nonempty non-negative interval, got {(lo, hi)}")
        if self.nucleus_radius_range[0] <= 0:
            raise ValueError("nucleus radii must be positive")
        for name in ("overlap_fraction", "distractor_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.image_size < 1 or self.noise_sigma < 0:
            raise ValueError("image_size must be positive and noise_sigma non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for name in ("n_neg_range", "n_pos_range", "nucleus_radius_range"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _background(size, rng):
    texture = ndi.gaussian_filter(rng.normal(0.0, 1.0, (size, size)), 6.0, mode="wrap")
    texture /= texture.std() + 1e-12
    img = np.empty((size, size, 3))
    for c, base in enumerate(BACKGROUND_RGB):
        img[..., c] = base + 9.0 * texture
    return img


def _place_centers(radii, size, overlap_fraction, rng):
    centers = []
    for i, r in enumerate(radii):
        lo, hi = r, size - 1 - r
        if lo > hi:
            raise GenerationError(f"nucleus of radius {r} does not fit in a {size}px image")
        clustered = bool(centers) and rng.random() < overlap_fraction
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            if clustered:
                j = int(rng.integers(len(centers)))
                dist = rng.uniform(r, 1.5 * r)
                angle = rng.uniform(0.0, 2.0 * math.pi)
                cy = centers[j][0] + dist * math.sin(angle)
                cx = centers[j][1] + dist * math.cos(angle)
            else:
                cy, cx = rng.uniform(lo, hi, size=2)
            cy, cx = round(cy), round(cx)
            if not (lo <= cy <= hi and lo <= cx <= hi):
                continue
            # the clustered nucleus may touch its chosen partner but never sits on anyone else
            ok = all(
                math.hypot(cy - py, cx - px) > (r + radii[k] if not clustered or k != j else 0.9 * r)
                for k, (py, px) in enumerate(centers)
            )
            if ok:
                centers.append((cy, cx))
                break
        else:
            raise GenerationError(f"could not place nucleus {i} after {MAX_PLACEMENT_ATTEMPTS} attempts")
    return centers


def _render_nucleus(img, cy, cx, r, rgb, rng):
    size = img.shape[0]
    elong = rng.uniform(0.85, 1.15)
    theta = rng.uniform(0.0, math.pi)
    a, b = r * elong, r / elong
    ext = int(math.ceil(max(a, b))) + 2
    y0, y1 = max(cy - ext, 0), min(cy + ext + 1, size)
    x0, x1 = max(cx - ext, 0), min(cx + ext + 1, size)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = yy - cy, xx - cx
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    alpha = np.clip((1.0 - rho) * r / 1.2 + 0.5, 0.0, 1.0) * 0.92
    shade = np.asarray(rgb) * rng.uniform(0.88, 1.1) + rng.normal(0.0, 6.0, (y1 - y0, x1 - x0, 1))
    region = img[y0:y1, x0:x1]
    region[:] = region * (1.0 - alpha[..., None]) + shade * alpha[..., None]


def _render_clutter(img, rng):
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(4, 12))):  # dust specks
        cy, cx = rng.uniform(0, size, 2)
        rad = rng.uniform(0.8, 2.5)
        alpha = np.clip(rad - np.hypot(yy - cy, xx - cx), 0.0, 1.0)[..., None] * 0.8
        img[:] = img * (1 - alpha) + 40.0 * alpha
    for _ in range(int(rng.integers(1, 4))):  # overstained smears
        cy, cx = rng.uniform(0, size, 2)
        sy, sx = rng.uniform(10, 40, 2)
        alpha = 0.5 * np.exp(-(((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))[..., None]
        img[:] = img * (1 - alpha) + np.array([190.0, 110.0, 160.0]) * alpha
    for _ in range(int(rng.integers(0, 3))):  # fibre streaks
        angle = rng.uniform(0, math.pi)
        offset = rng.uniform(-size / 3, size / 3)
        d = (xx - size / 2) * math.sin(angle) - (yy - size / 2) * math.cos(angle) - offset
        alpha = 0.35 * np.exp(-(d / 1.5) ** 2)[..., None]
        img[:] = img * (1 - alpha) + np.array([170.0, 120.0, 150.0]) * alpha


def generate_image(config: SynthConfig, rng: np.random.Generator | int | None = None,
                   image_id: str = "", distractor: bool | None = None) -> AnnotatedImage:
    """Render one patch. ``rng`` defaults to a generator seeded with ``config.seed``."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(config.seed if rng is None else int(rng))
    size = config.image_size
    img = _background(size, rng)
    if distractor is None:
        distractor = rng.random() < config.distractor_fraction

    labels = []
    if distractor:
        _render_clutter(img, rng)
    else:
        n_neg = int(rng.integers(config.n_neg_range[0], config.n_neg_range[1] + 1))
        n_pos = int(rng.integers(config.n_pos_range[0], config.n_pos_range[1] + 1))
        klasses = np.array([Klass.KI67_NEG] * n_neg + [Klass.KI67_POS] * n_pos, dtype=object)
        rng.shuffle(klasses)
        radii = list(rng.uniform(*config.nucleus_radius_range, size=len(klasses)))
        centers = _place_centers(radii, size, config.overlap_fraction, rng)
        for (cy, cx), r, klass in zip(centers, radii, klasses):
            _render_nucleus(img, cy, cx, r, POS_RGB if klass is Klass.KI67_POS else NEG_RGB, rng)
            labels.append(CentroidLabel(int(cx), int(cy), klass))

    img += rng.normal(0.0, config.noise_sigma, img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return AnnotatedImage(pixels, labels, image_id)


def generate_dataset(config: SynthConfig, n: int, seed: int | None = None, prefix: str = "synth"):
    """``n`` patches from one seeded stream; image ids are ``{prefix}_{i:04d}``."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return [generate_image(config, rng, f"{prefix}_{i:04d}") for i in range(n)]


def split_counts(n: int, fractions) -> list[int]:
    """Largest-remainder apportionment of ``n`` items over ``fractions``; ties go to the earlier split."""
    fractions = [float(f) for f in fractions]
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


SPLIT_NAMES = ("train", "val", "test")


def write_dataset(out_dir, images, fractions=(0.62, 0.20, 0.18), seed: int = 0) -> Path:
    """Write PNGs, annotation CSVs and ``manifest.csv`` (image, annotations, split)."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    counts = split_counts(len(images), fractions)
    order = np.random.default_rng(seed).permutation(len(images))
    split_of = {}
    start = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for idx in order[start : start + count]:
            split_of[int(idx)] = name
        start += count

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "annotations", "split"])
        for i, item in enumerate(images):
            img_rel = Path("images") / f"{item.image_id}.png"
            ann_rel = Path("annotations") / f"{item.image_id}.csv"
            Image.fromarray(item.pixels).save(out_dir / img_rel)
            save_annotations(out_dir / ann_rel, item.labels)
            writer.writerow([img_rel.as_posix(), ann_rel.as_posix(), split_of[i]])
    return manifest


def read_manifest(path) -> list[dict]:
    """Rows of a manifest with paths resolved against its directory."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["image"] = path.parent / row["image"]
        row["annotations"] = path.parent / row["annotations"]
    return rows
