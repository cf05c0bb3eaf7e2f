"""Heatmap to classed centroids: channel split, Otsu, median filter, watershed."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi
from skimage.feature import peak_local_max
from skimage.segmentation import watershed

from .annotations import Klass

N_LEVELS = 256
DEFAULT_MEDIAN_KERNEL = 3
DEFAULT_MIN_DISTANCE = 5
DEFAULT_MIN_AREA = 4
DEFAULT_MIN_FOREGROUND_FRACTION = 1e-4
DEFAULT_MIN_THRESHOLD = 0.1


class ChannelOrigin(enum.Enum):
    RED_POS = "red_pos"
    GREEN_NEG = "green_neg"


@dataclass
class BinaryMask:
    values: np.ndarray
    channel_origin: ChannelOrigin | None = None
    threshold: float | None = None

    @property
    def shape(self):
        return self.values.shape


@dataclass
class DetectionSet:
    detections: list[tuple[int, int, Klass]] = field(default_factory=list)
    source_image_id: str = ""

    def __len__(self):
        return len(self.detections)

    def of_class(self, klass: Klass) -> list[tuple[int, int]]:
        return [(x, y) for x, y, k in self.detections if k is klass]

    def counts(self) -> tuple[int, int]:
        """(n_pos, n_neg)"""
        n_pos = sum(1 for *_, k in self.detections if k is Klass.KI67_POS)
        return n_pos, len(self.detections) - n_pos

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "class"])
            for x, y, k in self.detections:
                writer.writerow([x, y, k.value])


def split_channels(pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (positive, negative) maps clipped to [0, 1]; the blue channel is dropped."""
    pred = np.asarray(pred)
    if pred.ndim != 3 or pred.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 heatmap, got shape {pred.shape}")
    return np.clip(pred[..., 0], 0.0, 1.0), np.clip(pred[..., 1], 0.0, 1.0)


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] reals onto the integer levels 0..255."""
    return np.rint(np.clip(values, 0.0, 1.0) * (N_LEVELS - 1)).astype(np.int64)


def otsu_level(levels: np.ndarray) -> int | None:
    """Otsu's threshold over integer levels 0..255, or None for a degenerate histogram.

    The between-class variance of threshold t (class 0 is ``level <= t``) is
    w0 * w1 * (mu0 - mu1)^2 = (n1*S0 - n0*S1)^2 / (N^2 * n0 * n1), with n the
    class counts and S the class level sums. Candidates are compared exactly in
    integer arithmetic, so ties resolve to the lowest t deterministically.
    """
    hist = np.bincount(levels.ravel(), minlength=N_LEVELS)[:N_LEVELS]
    n0 = np.cumsum(hist)
    s0 = np.cumsum(hist * np.arange(N_LEVELS))
    total_n, total_s = int(n0[-1]), int(s0[-1])
    best_t, best_num, best_den = None, 0, 1
    for t in range(N_LEVELS - 1):
        a_n, a_s = int(n0[t]), int(s0[t])
        b_n, b_s = total_n - a_n, total_s - a_s
        if a_n == 0 or b_n == 0:
            continue
        num = (b_n * a_s - a_n * b_s) ** 2
        den = a_n * b_n
        # num/den > best_num/best_den, strict so the first maximizer wins
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_threshold(values: np.ndarray, channel_origin: ChannelOrigin | None = None) -> BinaryMask:
    """Binarize a [0, 1] map with Otsu's method on 256 levels.

    Pixels whose level is strictly above the chosen level are foreground. A
    map with a single occupied level gives an empty mask.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("otsu_threshold needs a nonempty map")
    levels = quantize(values)
    t = otsu_level(levels)
    if t is None:
        return BinaryMask(np.zeros(values.shape, dtype=bool), channel_origin, None)
    return BinaryMask(levels > t, channel_origin, t / (N_LEVELS - 1))


def median_filter(mask: BinaryMask | np.ndarray, kernel: int = DEFAULT_MEDIAN_KERNEL) -> BinaryMask:
    """Majority vote over kernel x kernel windows with reflected edges."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"median kernel must be a positive odd integer, got {kernel}")
    if not isinstance(mask, BinaryMask):
        mask = BinaryMask(np.asarray(mask, dtype=bool))
    if kernel == 1:
        return BinaryMask(mask.values.copy(), mask.channel_origin, mask.threshold)
    filtered = ndi.median_filter(mask.values.astype(np.uint8), size=kernel, mode="reflect")
    return BinaryMask(filtered.astype(bool), mask.channel_origin, mask.threshold)


def watershed_separate(mask: BinaryMask | np.ndarray, values: np.ndarray | None = None,
                       min_distance: int = DEFAULT_MIN_DISTANCE) -> np.ndarray:
    """Split touching blobs: watershed on the negated distance transform.

    Seeds are distance-transform maxima at least ``min_distance`` apart. Only
    the mask geometry drives the split; ``values`` is accepted for shape
    checking. Every 4-connected component keeps at least one label.
    """
    m = mask.values if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    if values is not None and np.shape(values) != m.shape:
        raise ValueError(f"mask shape {m.shape} and map shape {np.shape(values)} differ")
    labels = np.zeros(m.shape, dtype=np.int32)
    if not m.any():
        return labels
    components, n_components = ndi.label(m)
    dist = ndi.distance_transform_edt(m)
    peaks = peak_local_max(dist, min_distance=min_distance, labels=components, exclude_border=False)
    markers = np.zeros(m.shape, dtype=np.int32)
    markers[tuple(peaks.T)] = np.arange(1, len(peaks) + 1)
    labels = watershed(-dist, markers, mask=m).astype(np.int32)
    # components that got no seed (e.g. flat slivers) still count once
    next_label = len(peaks) + 1
    for comp in range(1, n_components + 1):
        region = components == comp
        if not labels[region].any():
            labels[region] = next_label
            next_label += 1
    return labels


def extract_centroids(labels: np.ndarray, klass: Klass, min_area: int = DEFAULT_MIN_AREA):
    """One (x, y, klass) per label at its rounded pixel-mass centroid; small labels are dropped."""
    ids = np.unique(labels)
    ids = ids[ids > 0]
    if ids.size == 0:
        return []
    areas = ndi.sum_labels(np.ones_like(labels), labels, ids)
    centers = ndi.center_of_mass(np.ones_like(labels), labels, ids)
    out = []
    for area, (cy, cx) in zip(areas, centers):
        if area < min_area:
            continue
        out.append((int(math.floor(cx + 0.5)), int(math.floor(cy + 0.5)), klass))
    return out


def detect_channel(values, klass: Klass, median_kernel=DEFAULT_MEDIAN_KERNEL,
                   min_distance=DEFAULT_MIN_DISTANCE, min_area=DEFAULT_MIN_AREA,
                   min_foreground_fraction=DEFAULT_MIN_FOREGROUND_FRACTION,
                   min_threshold=DEFAULT_MIN_THRESHOLD):
    origin = ChannelOrigin.RED_POS if klass is Klass.KI67_POS else ChannelOrigin.GREEN_NEG
    mask = otsu_threshold(values, origin)
    if mask.threshold is None or mask.threshold < min_threshold:
        return []
    if mask.values.mean() < min_foreground_fraction:
        return []
    mask = median_filter(mask, median_kernel)
    labels = watershed_separate(mask, values, min_distance)
    return extract_centroids(labels, klass, min_area)


def detect(pred: np.ndarray, image_id: str = "", **params) -> DetectionSet:
    """Full post-processing of a stitched H x W x 3 prediction.

    Each class channel is processed independently; negatives are listed
    before positives. Keyword arguments are forwarded to ``detect_channel``.
    """
    pos_map, neg_map = split_channels(pred)
    dets = detect_channel(neg_map, Klass.KI67_NEG, **params)
    dets += detect_channel(pos_map, Klass.KI67_POS, **params)
    return DetectionSet(dets, image_id)
