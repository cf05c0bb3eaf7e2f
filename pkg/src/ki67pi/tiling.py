"""Non-overlapping tiling of large images and reconstruction of full-size outputs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_TILE_SIZE = 256


@dataclass(frozen=True)
class TilePlan:
    image_shape: tuple[int, int]
    tile_size: int
    grid: tuple[tuple[int, int], ...]
    pad_bottom: int
    pad_right: int

    @property
    def padded_shape(self) -> tuple[int, int]:
        return self.image_shape[0] + self.pad_bottom, self.image_shape[1] + self.pad_right

    @property
    def n_rows(self) -> int:
        return self.padded_shape[0] // self.tile_size

    @property
    def n_cols(self) -> int:
        return self.padded_shape[1] // self.tile_size

    def __len__(self):
        return len(self.grid)


def plan_tiles(image_shape, tile_size: int = DEFAULT_TILE_SIZE) -> TilePlan:
    h, w = int(image_shape[0]), int(image_shape[1])
    if h < 1 or w < 1:
        raise ValueError(f"image shape must be at least 1 x 1, got {(h, w)}")
    if tile_size < 1:
        raise ValueError(f"tile_size must be >= 1, got {tile_size}")
    rows, cols = math.ceil(h / tile_size), math.ceil(w / tile_size)
    grid = tuple((r * tile_size, c * tile_size) for r in range(rows) for c in range(cols))
    return TilePlan((h, w), tile_size, grid, rows * tile_size - h, cols * tile_size - w)


def _pad(image, plan):
    pad = [(0, plan.pad_bottom), (0, plan.pad_right)] + [(0, 0)] * (image.ndim - 2)
    if not (plan.pad_bottom or plan.pad_right):
        return image
    # numpy's "reflect" needs at least 2 samples along a padded axis and cannot
    # exceed the axis length in one pass; "symmetric" handles 1-pixel axes and
    # np.pad repeats the reflection for pads longer than the image.
    mode = "reflect" if min(image.shape[:2]) > 1 else "symmetric"
    return np.pad(image, pad, mode=mode)


def extract_tiles(image: np.ndarray, plan: TilePlan) -> list[np.ndarray]:
    """Cut the reflection-padded image into tiles in row-major grid order."""
    image = np.asarray(image)
    if tuple(image.shape[:2]) != tuple(plan.image_shape):
        raise ValueError(f"image shape {image.shape[:2]} does not match plan {plan.image_shape}")
    padded = _pad(image, plan)
    t = plan.tile_size
    return [padded[r : r + t, c : c + t].copy() for r, c in plan.grid]


def stitch_tiles(tiles, plan: TilePlan) -> np.ndarray:
    tiles = list(tiles)
    if len(tiles) != len(plan.grid):
        raise ValueError(f"got {len(tiles)} tiles, plan expects {len(plan.grid)}")
    t = plan.tile_size
    first = np.asarray(tiles[0])
    out = np.empty(plan.padded_shape + first.shape[2:], dtype=first.dtype)
    for (r, c), tile in zip(plan.grid, tiles):
        tile = np.asarray(tile)
        if tile.shape[:2] != (t, t):
            raise ValueError(f"tile at {(r, c)} has shape {tile.shape[:2]}, expected {(t, t)}")
        out[r : r + t, c : c + t] = tile
    h, w = plan.image_shape
    return out[:h, :w]
