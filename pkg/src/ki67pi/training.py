"""Training loop: Huber regression of Gaussian heatmaps with Adam."""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage as ndi

from .uvnet import UVNet, image_to_tensor, save_checkpoint

log = logging.getLogger(__name__)

AUGMENTATIONS = frozenset({"hflip", "vflip", "scale"})
SCALE_RANGE = (0.8, 1.2)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    learning_rate: float = 1e-3
    huber_delta: float = 1.0
    augmentations: tuple[str, ...] = ("hflip", "vflip", "scale")
    seed: int = 0
    split: tuple[float, float, float] = (0.62, 0.20, 0.18)
    sigma: float = 2.0
    deterministic: bool = True

    def __post_init__(self):
        self.augmentations = tuple(self.augmentations)
        self.split = tuple(float(s) for s in self.split)
        unknown = set(self.augmentations) - AUGMENTATIONS
        if unknown:
            raise ValueError(f"unknown augmentations {sorted(unknown)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (self.learning_rate > 0 and self.huber_delta > 0 and self.sigma > 0):
            raise ValueError("learning_rate, huber_delta and sigma must be positive")
        if len(self.split) != 3 or any(s <= 0 for s in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split must be three positive fractions summing to 1, got {self.split}")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Load from a JSON object whose keys are TrainConfig field names."""
        with open(path) as fh:
            data = json.load(fh)
        data = data.get("train", data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"{path}: unknown training keys {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentations"] = list(self.augmentations)
        d["split"] = list(self.split)
        return d


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                writer.writerow([i, repr(t), repr(v)])


def huber_loss(pred, target, delta: float = 1.0):
    """Mean elementwise Huber loss. Works on numpy arrays and torch tensors."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if tuple(pred.shape) != tuple(target.shape):
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if isinstance(pred, torch.Tensor):
        err = (pred - target).abs()
        return torch.where(err <= delta, 0.5 * err**2, delta * (err - 0.5 * delta)).mean()
    err = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    return float(np.mean(np.where(err <= delta, 0.5 * err**2, delta * (err - 0.5 * delta))))


def _rescale(arr, scale):
    """Isotropic zoom about the centre, keeping the array shape (reflect at borders)."""
    h, w = arr.shape[:2]
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    matrix = np.diag([1.0 / scale, 1.0 / scale])
    offset = centre - matrix @ centre
    out = np.empty(arr.shape, dtype=np.float64)
    for c in range(arr.shape[2]):
        out[..., c] = ndi.affine_transform(arr[..., c].astype(np.float64), matrix, offset,
                                           order=1, mode="reflect")
    return out


def augment_sample(image, target, rng: np.random.Generator, hflip_p=0.5, vflip_p=0.5,
                   scale_range=SCALE_RANGE, augmentations=AUGMENTATIONS):
    """Apply the same random flips and zoom to an image and its heatmap."""
    if image.shape[:2] != target.shape[:2]:
        raise ValueError(f"image {image.shape[:2]} and target {target.shape[:2]} are not aligned")
    # draw every variate regardless of which augmentations are enabled so the
    # random stream does not depend on the configuration
    do_h = rng.random() < hflip_p
    do_v = rng.random() < vflip_p
    scale = rng.uniform(*scale_range)
    if "hflip" in augmentations and do_h:
        image, target = image[:, ::-1], target[:, ::-1]
    if "vflip" in augmentations and do_v:
        image, target = image[::-1], target[::-1]
    if "scale" in augmentations and scale != 1.0:
        dtype = image.dtype
        image = _rescale(image, scale)
        if dtype == np.uint8:
            image = np.clip(np.rint(image), 0, 255)
        image = image.astype(dtype)
        target = np.clip(_rescale(target, scale), 0.0, 1.0).astype(target.dtype)
    return np.ascontiguousarray(image), np.ascontiguousarray(target)


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def _to_batch(images, targets):
    x = image_to_tensor(np.stack(images))
    y = torch.from_numpy(np.ascontiguousarray(np.stack(targets).transpose(0, 3, 1, 2))).float()
    return x, y


def evaluate_loss(model, dataset, config: TrainConfig) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(dataset), config.batch_size):
            chunk = dataset[start : start + config.batch_size]
            x, y = _to_batch([s[0] for s in chunk], [s[1] for s in chunk])
            total += float(huber_loss(model(x), y, config.huber_delta)) * len(chunk)
            count += len(chunk)
    return total / count


def train(model: UVNet, dataset, config: TrainConfig, val_dataset=None, checkpoint_path=None):
    """Fit ``model`` on (image, heatmap) pairs.

    Each epoch runs ceil(N / batch_size) Adam steps over a seeded shuffle and
    then scores the validation set (the training set when none is given).
    The returned model carries the weights of the best validation epoch, which
    are also written to ``checkpoint_path`` when provided.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training dataset is empty")
    val_dataset = list(val_dataset) if val_dataset else dataset
    seed_everything(config.seed, config.deterministic)
    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history = TrainHistory()
    best_state, best_loss = None, math.inf
    steps = math.ceil(len(dataset) / config.batch_size)

    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(len(dataset))
        running = 0.0
        for step in range(steps):
            idx = order[step * config.batch_size : (step + 1) * config.batch_size]
            pairs = [augment_sample(*dataset[i], rng, augmentations=config.augmentations) for i in idx]
            x, y = _to_batch([p[0] for p in pairs], [p[1] for p in pairs])
            optimizer.zero_grad()
            loss = huber_loss(model(x), y, config.huber_delta)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step + 1}")
            loss.backward()
            optimizer.step()
            running += loss.item() * len(idx)
        history.train_loss.append(running / len(dataset))
        val = evaluate_loss(model, val_dataset, config)
        history.val_loss.append(val)
        log.info("epoch %d/%d train %.6g val %.6g", epoch, config.epochs, history.train_loss[-1], val)
        if val < best_loss:
            best_loss, history.best_epoch = val, epoch
            best_state = copy.deepcopy(model.state_dict())
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model, epoch=epoch, val_loss=val)

    model.load_state_dict(best_state)
    model.eval()
    return model, history
