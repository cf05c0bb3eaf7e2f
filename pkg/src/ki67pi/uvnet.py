"""UV-Net: a U-shaped encoder/decoder whose convolution blocks are dense V-Blocks.

A V-Block with ``f`` input channels runs four stages. Each stage is a 1x1
bottleneck convolution with ``f`` filters followed by a 3x3 convolution with
``k = f / 4`` filters; the ``k`` new maps are concatenated onto the stage
input, so the block ends with ``f + 4k = 2f`` channels.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

VBLOCK_STAGES = 4


class ConfigurationError(ValueError):
    """Raised for architecture hyperparameters that violate the block contracts."""


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class VBlockConfig:
    f: int

    def __post_init__(self):
        if self.f < 4 or self.f % VBLOCK_STAGES:
            raise ConfigurationError(f"V-Block input channels must be a positive multiple of 4, got f={self.f}")

    @property
    def k(self) -> int:
        return self.f // VBLOCK_STAGES

    @property
    def stages(self) -> int:
        return VBLOCK_STAGES

    @property
    def out_channels(self) -> int:
        return self.f + self.stages * self.k


@dataclass(frozen=True)
class UVNetConfig:
    base_f: int = 16
    depth: int = 4
    in_channels: int = 3
    out_channels: int = 3
    batch_norm: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigurationError(f"depth must be >= 1, got {self.depth}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        VBlockConfig(self.base_f)

    def encoder_channels(self) -> list[int]:
        """V-Block input channels per encoder level, then the bottleneck."""
        return [self.base_f * 2**i for i in range(self.depth + 1)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UVNetConfig":
        return cls(**d)


def vblock_channel_schedule(config: VBlockConfig | int) -> list[int]:
    """Channel count entering each stage, followed by the block output.

    >>> vblock_channel_schedule(16)
    [16, 20, 24, 28, 32]
    """
    if not isinstance(config, VBlockConfig):
        config = VBlockConfig(int(config))
    return [config.f + s * config.k for s in range(config.stages)] + [config.out_channels]


def _conv(in_ch, out_ch, kernel, batch_norm):
    layers = [nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2)]
    if batch_norm:
        layers.append(nn.BatchNorm2d(out_ch))
    layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class VBlock(nn.Module):
    def __init__(self, f: int, batch_norm: bool = False):
        super().__init__()
        self.config = VBlockConfig(f)
        schedule = vblock_channel_schedule(self.config)
        self.stages = nn.ModuleList(
            nn.Sequential(
                _conv(schedule[s], f, 1, batch_norm),
                _conv(f, self.config.k, 3, batch_norm),
            )
            for s in range(self.config.stages)
        )

    @property
    def in_channels(self) -> int:
        return self.config.f

    @property
    def out_channels(self) -> int:
        return self.config.out_channels

    def forward(self, x):
        if x.shape[1] != self.config.f:
            raise ValueError(f"V-Block expects {self.config.f} input channels, got {x.shape[1]}")
        for stage in self.stages:
            x = torch.cat([x, stage(x)], dim=1)
        return x


class _DecoderLevel(nn.Module):
    def __init__(self, f: int, batch_norm: bool):
        super().__init__()
        # incoming features have 4f channels, the matching skip has 2f
        self.reduce = _conv(4 * f, 2 * f, 1, batch_norm)
        self.fuse = _conv(4 * f, f, 1, batch_norm)
        self.block = VBlock(f, batch_norm)

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.reduce(x)
        x = self.fuse(torch.cat([x, skip], dim=1))
        return self.block(x)


class UVNet(nn.Module):
    """Heatmap regressor mapping an N x C x H x W image batch to N x 3 x H x W."""

    def __init__(self, config: UVNetConfig | None = None):
        super().__init__()
        self.config = config or UVNetConfig()
        c = self.config
        bn = c.batch_norm
        widths = c.encoder_channels()
        self.stem = _conv(c.in_channels, c.base_f, 3, bn)
        self.encoder = nn.ModuleList(VBlock(w, bn) for w in widths[:-1])
        self.bottleneck = VBlock(widths[-1], bn)
        # decoder levels are stored deepest first, in execution order
        self.decoder = nn.ModuleList(_DecoderLevel(w, bn) for w in reversed(widths[:-1]))
        self.head = nn.Conv2d(2 * c.base_f, c.out_channels, 1)

    def vblocks(self) -> list[VBlock]:
        return [m for m in self.modules() if isinstance(m, VBlock)]

    def forward(self, x):
        step = 2**self.config.depth
        if x.shape[-2] % step or x.shape[-1] % step:
            raise ValueError(f"spatial dims {tuple(x.shape[-2:])} must be divisible by {step}")
        x = self.stem(x)
        skips = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for level, skip in zip(self.decoder, reversed(skips)):
            x = level(x, skip)
        return self.head(x)


def _conv_params(in_ch, out_ch, kernel, batch_norm):
    n = in_ch * out_ch * kernel * kernel + out_ch
    if batch_norm:
        n += 2 * out_ch
    return n


def _vblock_params(f, batch_norm):
    k = f // VBLOCK_STAGES
    return sum(
        _conv_params(f + s * k, f, 1, batch_norm) + _conv_params(f, k, 3, batch_norm)
        for s in range(VBLOCK_STAGES)
    )


def count_parameters(config: UVNetConfig) -> int:
    """Trainable parameter count derived from the layer inventory alone."""
    bn = config.batch_norm
    widths = config.encoder_channels()
    total = _conv_params(config.in_channels, config.base_f, 3, bn)
    total += sum(_vblock_params(w, bn) for w in widths)
    for f in widths[:-1]:
        total += _conv_params(4 * f, 2 * f, 1, bn) + _conv_params(4 * f, f, 1, bn) + _vblock_params(f, bn)
    total += 2 * config.base_f * config.out_channels + config.out_channels
    return total


def instantiated_parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def uvnet_forward(image: np.ndarray, model: UVNet) -> np.ndarray:
    """Run the model on one H x W x C image (uint8 or float in [0, 1]).

    Returns the raw H x W x 3 float32 regression output.
    """
    x = image_to_tensor(image)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(x.to(next(model.parameters()).dtype))
    finally:
        model.train(was_training)
    return out[0].permute(1, 2, 0).numpy().astype(np.float32)


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """H x W x C (or N x H x W x C) array to a float32 NCHW tensor scaled to [0, 1]."""
    arr = np.asarray(image)
    scale = 255.0 if arr.dtype == np.uint8 else 1.0
    arr = arr.astype(np.float32) / scale
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def save_checkpoint(path: str | Path, model: UVNet, **extra) -> None:
    payload = {
        "config": model.config.to_dict(),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
    }
    payload.update(extra)
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path, config: UVNetConfig | None = None) -> UVNet:
    """Rebuild a model from a checkpoint.

    If ``config`` is given it must equal the stored one; mismatches raise
    CheckpointError instead of reshaping.
    """
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    stored = UVNetConfig.from_dict(payload["config"])
    if config is not None and config != stored:
        raise CheckpointError(f"checkpoint config {stored} does not match requested {config}")
    model = UVNet(stored)
    try:
        model.load_state_dict(payload["state_dict"], strict=True)
    except RuntimeError as exc:
        raise CheckpointError(str(exc)) from exc
    return model
