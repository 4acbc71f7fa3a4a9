"""Image reconstruction network conditioned on the illumination embedding.

The network is a head convolution, three residual groups (three
feature-aware blocks plus a 3x3 convolution each, with an identity skip
over the group), and a zero-initialized tail convolution; the input image
is added back to the tail output and the sum is clamped to [0, 1], so the
freshly constructed network is the exact identity map.

A feature-aware (FA) layer is an affine map from the illumination
embedding to a per-channel 3x3 reconstruction kernel w (applied as a
depthwise convolution) and a channel modulation vector v. An FA block
runs two stages of

    Z1 = v * F        (per-channel scale)
    Z2 = F (*) w      (depthwise convolution, reflect padding)
    F  = leaky_relu(conv3x3(Z1 + Z2))

with separate FA layers and convolutions per stage. Every block and
group preserves the (C, H, W) shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import from_tensor, to_tensor
from .encoder import MIN_PATCH_SIDE, TwoStreamEncoder


@dataclass
class FAKernelSet:
    """Dynamic weights predicted for one illumination feature."""

    w: torch.Tensor
    v: torch.Tensor

    def __post_init__(self):
        if self.w.ndim != 3 or self.w.shape[:2] != (3, 3):
            raise ValueError(f"w must be 3x3xC, got {tuple(self.w.shape)}")
        if self.v.ndim != 1 or self.v.shape[0] != self.w.shape[2]:
            raise ValueError(
                f"v must have length {self.w.shape[2]}, got {tuple(self.v.shape)}")


def dynamic_depthwise_conv(x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """Per-sample depthwise 3x3 convolution with reflect padding.

    x: (B, C, H, W); w: (B, C, 1, 3, 3), one kernel per sample and
    channel. Folding the batch into the channel axis turns the per-sample
    kernels into a single grouped convolution.
    """
    batch, channels, height, width = x.shape
    padded = nn.functional.pad(x, (1, 1, 1, 1), mode="reflect")
    flat = padded.reshape(1, batch * channels, height + 2, width + 2)
    kernels = w.reshape(batch * channels, 1, 3, 3)
    out = nn.functional.conv2d(flat, kernels, groups=batch * channels)
    return out.reshape(batch, channels, height, width)


class FALayer(nn.Module):
    """Affine map from the illumination feature to (w, v).

    The output layout is [9*C kernel entries, channel-major | C modulation
    coefficients]; `forward` returns batched conv-ready shapes,
    `kernel_set` the 3x3xC / C view for a single feature vector.
    """

    def __init__(self, feature_dim: int, channels: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.channels = channels
        self.map = nn.Linear(feature_dim, 10 * channels)

    def _split(self, out: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        kernels = out[..., :9 * self.channels]
        modulation = out[..., 9 * self.channels:]
        return kernels, modulation

    def forward(self, feat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if feat.ndim != 2 or feat.shape[1] != self.feature_dim:
            raise ValueError(
                f"expected features of shape (B, {self.feature_dim}), got {tuple(feat.shape)}")
        kernels, modulation = self._split(self.map(feat))
        batch = feat.shape[0]
        w = kernels.reshape(batch, self.channels, 1, 3, 3)
        v = modulation.reshape(batch, self.channels, 1, 1)
        return w, v

    def kernel_set(self, feat: torch.Tensor) -> FAKernelSet:
        if feat.ndim != 1 or feat.shape[0] != self.feature_dim:
            raise ValueError(
                f"expected a feature vector of length {self.feature_dim}, got {tuple(feat.shape)}")
        kernels, modulation = self._split(self.map(feat))
        return FAKernelSet(w=kernels.reshape(self.channels, 3, 3).permute(1, 2, 0),
                           v=modulation)


class FABlock(nn.Module):
    """Two FA stages; preserves the feature-map shape."""

    def __init__(self, feature_dim: int, channels: int):
        super().__init__()
        self.channels = channels
        self.fa1 = FALayer(feature_dim, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.fa2 = FALayer(feature_dim, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor, feat: torch.Tensor,
                probe: dict | None = None) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(
                f"expected feature maps with {self.channels} channels, got {tuple(x.shape)}")
        for stage, (fa, conv) in enumerate(((self.fa1, self.conv1),
                                            (self.fa2, self.conv2)), start=1):
            w, v = fa(feat)
            z1 = v * x
            z2 = dynamic_depthwise_conv(x, w)
            if probe is not None:
                probe[f"stage{stage}"] = {"z1": z1, "z2": z2}
            x = self.act(conv(z1 + z2))
        return x


class ResidualGroup(nn.Module):
    """Three FA blocks and a convolution under an identity skip."""

    def __init__(self, feature_dim: int, channels: int):
        super().__init__()
        self.blocks = nn.ModuleList(
            [FABlock(feature_dim, channels) for _ in range(3)])
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, feat: torch.Tensor) -> torch.Tensor:
        h = x
        for block in self.blocks:
            h = block(h, feat)
        return x + self.conv(h)


def _check_finite(x: torch.Tensor, stage: str) -> None:
    if not torch.isfinite(x).all():
        raise RuntimeError(f"non-finite activations after the {stage} stage")


class IRN(nn.Module):
    """Low-light image to enhanced image, conditioned on one feature.

    The tail convolution starts at zero, so the untrained network returns
    its input unchanged (the global skip plus clamp is exact on [0, 1]
    inputs); training only ever learns the residual.
    """

    def __init__(self, feature_dim: int = 256, channels: int = 64):
        super().__init__()
        if feature_dim < 1 or channels < 1:
            raise ValueError("feature_dim and channels must be positive")
        self.feature_dim = feature_dim
        self.channels = channels
        self.head = nn.Conv2d(3, channels, 3, padding=1)
        self.groups = nn.ModuleList(
            [ResidualGroup(feature_dim, channels) for _ in range(3)])
        self.tail = nn.Conv2d(channels, 3, 3, padding=1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, low: torch.Tensor, feat: torch.Tensor) -> torch.Tensor:
        if low.ndim != 4 or low.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(low.shape)}")
        if feat.ndim != 2 or feat.shape != (low.shape[0], self.feature_dim):
            raise ValueError(
                f"expected features of shape ({low.shape[0]}, {self.feature_dim}), "
                f"got {tuple(feat.shape)}")
        x = self.head(low)
        _check_finite(x, "head")
        for i, group in enumerate(self.groups, start=1):
            x = group(x, feat)
            _check_finite(x, f"group{i}")
        delta = self.tail(x)
        _check_finite(delta, "tail")
        return (low + delta).clamp(0.0, 1.0)


def center_crop(batch: torch.Tensor, size: int) -> torch.Tensor:
    """Central size x size window of a (B, C, H, W) batch."""
    height, width = batch.shape[-2:]
    if size > height or size > width:
        raise ValueError(f"crop size {size} exceeds image dims {height}x{width}")
    top = (height - size) // 2
    left = (width - size) // 2
    return batch[..., top:top + size, left:left + size]


def enhance_tensor(low: torch.Tensor, encoder: TwoStreamEncoder, irn: IRN,
                   patch_size: int = 192) -> torch.Tensor:
    """Enhance a (B, 3, H, W) batch of full images.

    The encoder consumes a square center crop (the configured patch size,
    shrunk to the short image side when needed); the reconstruction runs
    on the full image.
    """
    side = min(patch_size, low.shape[-2], low.shape[-1])
    feat = encoder(center_crop(low, side))
    return irn(low, feat)


def enhance(image: np.ndarray, encoder: TwoStreamEncoder, irn: IRN,
            patch_size: int = 192) -> np.ndarray:
    """Enhance one H x W x 3 image in [0, 1]; parameters stay frozen."""
    with torch.no_grad():
        out = enhance_tensor(to_tensor(image).unsqueeze(0), encoder, irn, patch_size)
    return from_tensor(out[0])
