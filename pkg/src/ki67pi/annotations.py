"""Centroid annotations and their Gaussian heatmap encoding."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_SIGMA = 2.0
POS_CHANNEL = 0  # red
NEG_CHANNEL = 1  # green


class AnnotationParseError(ValueError):
    pass


class AnnotationBoundsError(ValueError):
    pass


class Klass(enum.Enum):
    KI67_POS = "pos"
    KI67_NEG = "neg"

    @property
    def channel(self) -> int:
        return POS_CHANNEL if self is Klass.KI67_POS else NEG_CHANNEL

    @classmethod
    def parse(cls, token: str) -> "Klass":
        try:
            return cls(token.strip().lower())
        except ValueError:
            raise AnnotationParseError(f"unknown class {token!r}, expected 'pos' or 'neg'") from None


@dataclass(frozen=True)
class CentroidLabel:
    x: int
    y: int
    klass: Klass

    def in_bounds(self, shape) -> bool:
        return 0 <= self.y < shape[0] and 0 <= self.x < shape[1]


@dataclass
class AnnotatedImage:
    pixels: np.ndarray
    labels: list[CentroidLabel] = field(default_factory=list)
    image_id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 pixels, got shape {self.pixels.shape}")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("image must be at least 1 x 1")
        for label in self.labels:
            if not label.in_bounds(self.pixels.shape):
                raise AnnotationBoundsError(f"{label} lies outside image {self.pixels.shape[:2]}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


def load_annotations(path, image_shape=None) -> list[CentroidLabel]:
    """Read an ``x,y,class`` CSV. A leading header row is optional.

    Raises AnnotationParseError for malformed rows and AnnotationBoundsError for
    coordinates outside ``image_shape`` (H, W); both name the offending line.
    """
    labels = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "x":
                continue
            if len(row) != 3:
                raise AnnotationParseError(f"{path}:{lineno}: expected 3 fields x,y,class, got {len(row)}")
            try:
                x, y = int(row[0]), int(row[1])
                klass = Klass.parse(row[2])
            except (ValueError, AnnotationParseError) as exc:
                raise AnnotationParseError(f"{path}:{lineno}: {exc}") from None
            label = CentroidLabel(x, y, klass)
            if x < 0 or y < 0 or (image_shape is not None and not label.in_bounds(image_shape)):
                raise AnnotationBoundsError(
                    f"{path}:{lineno}: ({x}, {y}) outside image of shape {tuple(image_shape or ())}"
                )
            labels.append(label)
    return labels


def save_annotations(path, labels) -> None:
    """Write labels (or any ``(x, y, klass)`` triples) in the format load_annotations reads."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "class"])
        for x, y, klass in (_as_triple(l) for l in labels):
            writer.writerow([x, y, Klass(klass).value])


def _as_triple(label):
    if isinstance(label, CentroidLabel):
        return label.x, label.y, label.klass
    return label


def gaussian_encode(image_shape, labels, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Render labels as unit-peak Gaussians, one class per channel.

    Each label contributes exp(-d^2 / (2 sigma^2)) within a radius of
    ceil(3 sigma); same-class overlaps take the per-pixel maximum. The blue
    channel stays zero. Returns an H x W x 3 float32 array in [0, 1].
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = int(image_shape[0]), int(image_shape[1])
    target = np.zeros((h, w, 3), dtype=np.float32)
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    d2 = dy**2 + dx**2
    kernel = np.where(d2 <= radius**2, np.exp(-d2 / (2.0 * sigma**2)), 0.0).astype(np.float32)

    for label in labels:
        x, y, klass = _as_triple(label)
        if not (0 <= y < h and 0 <= x < w):
            raise AnnotationBoundsError(f"label ({x}, {y}) outside image of shape {(h, w)}")
        y0, y1 = max(y - radius, 0), min(y + radius + 1, h)
        x0, x1 = max(x - radius, 0), min(x + radius + 1, w)
        patch = kernel[y0 - y + radius : y1 - y + radius, x0 - x + radius : x1 - x + radius]
        view = target[y0:y1, x0:x1, Klass(klass).channel]
        np.maximum(view, patch, out=view)

    return np.clip(target, 0.0, 1.0, out=target)


def save_heatmap(path, heatmap: np.ndarray) -> None:
    """Persist an H x W x 3 heatmap as float32 ``.npy`` (the header carries shape and dtype)."""
    heatmap = np.asarray(heatmap, dtype=np.float32)
    if heatmap.ndim != 3 or heatmap.shape[2] != 3:
        raise ValueError(f"heatmap must be H x W x 3, got {heatmap.shape}")
    with open(path, "wb") as fh:
        np.save(fh, heatmap, allow_pickle=False)


def load_heatmap(path) -> np.ndarray:
    heatmap = np.load(Path(path), allow_pickle=False)
    if heatmap.dtype != np.float32 or heatmap.ndim != 3 or heatmap.shape[2] != 3:
        raise ValueError(f"{path}: not an H x W x 3 float32 heatmap ({heatmap.dtype}, {heatmap.shape})")
    return heatmap
