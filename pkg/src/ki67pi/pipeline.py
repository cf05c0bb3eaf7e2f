"""Whole-image inference: tile, regress, stitch, post-process, count."""
from __future__ import annotations

import numpy as np
import torch

from .metrics import PIRecord
from .postprocess import DetectionSet, detect
from .tiling import DEFAULT_TILE_SIZE, extract_tiles, plan_tiles, stitch_tiles
from .uvnet import UVNet, image_to_tensor


def predict_heatmap(image: np.ndarray, model: UVNet, tile_size: int = DEFAULT_TILE_SIZE,
                    batch_size: int = 4) -> np.ndarray:
    """Regress an H x W x 3 heatmap for an image of any size.

    Tiles are processed independently and the full-size prediction is
    reassembled before any post-processing, so a nucleus on a seam is seen
    once in the stitched map.
    """
    plan = plan_tiles(image.shape[:2], tile_size)
    tiles = extract_tiles(image, plan)
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    outputs = []
    try:
        with torch.no_grad():
            for start in range(0, len(tiles), batch_size):
                x = image_to_tensor(np.stack(tiles[start : start + batch_size])).to(dtype)
                out = model(x).permute(0, 2, 3, 1).numpy().astype(np.float32)
                outputs.extend(out)
    finally:
        model.train(was_training)
    return stitch_tiles(outputs, plan)


def predict_image(image: np.ndarray, model: UVNet, image_id: str = "",
                  tile_size: int = DEFAULT_TILE_SIZE, **detect_params):
    """Return (heatmap, DetectionSet, PIRecord) for one image."""
    heatmap = predict_heatmap(image, model, tile_size)
    dets = detect(heatmap, image_id, **detect_params)
    n_pos, n_neg = dets.counts()
    return heatmap, dets, PIRecord(image_id, n_pos, n_neg)
