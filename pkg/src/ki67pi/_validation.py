"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np

from .annotations import CentroidLabel, Klass


def check_image(image, name="image") -> np.ndarray:
    """Return ``image`` as an H x W x 3 array (uint8, or float in [0, 1])."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must be H x W x 3, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} is empty")
    if arr.dtype == np.uint8:
        return arr
    if not np.issubdtype(arr.dtype, np.floating):
        raise TypeError(f"{name} must be uint8 or floating point, got {arr.dtype}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or inf")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"floating-point {name} must lie in [0, 1]")
    return arr.astype(np.float32, copy=False)


def check_images(X) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = [X]
    images = [check_image(x, f"X[{i}]") for i, x in enumerate(X)]
    if not images:
        raise ValueError("no images given")
    return images


def check_labels(labels, shape, name="labels") -> list[CentroidLabel]:
    out = []
    for item in labels:
        if not isinstance(item, CentroidLabel):
            x, y, klass = item
            item = CentroidLabel(int(x), int(y), Klass(klass))
        if not item.in_bounds(shape):
            raise ValueError(f"{name}: {item} outside image of shape {tuple(shape[:2])}")
        out.append(item)
    return out


def check_label_sets(y, images) -> list[list[CentroidLabel]]:
    y = list(y)
    if len(y) != len(images):
        raise ValueError(f"got {len(images)} images but {len(y)} label sets")
    return [check_labels(lbls, img.shape, f"y[{i}]") for i, (lbls, img) in enumerate(zip(y, images))]


def check_heatmap(heatmap, name="heatmap") -> np.ndarray:
    arr = np.asarray(heatmap, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must be H x W x 3, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or inf")
    return arr
