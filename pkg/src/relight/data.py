"""Paired low/normal-light datasets, patch sampling and augmentation.

Images are numpy float32 arrays of shape (H, W, 3) with values in [0, 1].
All random draws go through an injected numpy Generator so batches are
reproducible from a recorded seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


class DatasetError(Exception):
    """Raised for malformed dataset directories or unreadable images."""


@dataclass
class ImagePair:
    """An aligned low-light image and its normal-light reference."""

    low: np.ndarray
    normal: np.ndarray
    id: str

    def __post_init__(self):
        if self.low.shape != self.normal.shape:
            raise DatasetError(
                f"pair '{self.id}': size mismatch {self.low.shape} vs {self.normal.shape}"
            )
        for name, img in (("low", self.low), ("normal", self.normal)):
            if img.ndim != 3 or img.shape[2] != 3:
                raise DatasetError(f"pair '{self.id}': {name} is not H x W x 3")
            if not np.isfinite(img).all():
                raise DatasetError(f"pair '{self.id}': {name} contains non-finite values")
            if img.min() < 0.0 or img.max() > 1.0:
                raise DatasetError(f"pair '{self.id}': {name} values outside [0, 1]")

    @property
    def height(self) -> int:
        return self.low.shape[0]

    @property
    def width(self) -> int:
        return self.low.shape[1]


@dataclass
class Patch:
    """A square crop taken from one source image."""

    pixels: np.ndarray
    source_id: str

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass
class AugmentConfig:
    """Ranges for the brightness and blur augmentations.

    Brightness is a gamma curve followed by a logarithmic tone adjustment;
    blur is a Gaussian filter with a randomly drawn standard deviation.
    """

    gamma_range: tuple[float, float] = (0.4, 2.5)
    log_gain_range: tuple[float, float] = (1.0, 10.0)
    blur_sigma_range: tuple[float, float] = (0.0, 1.5)
    blur_kernel_size: int = 5

    def __post_init__(self):
        for name in ("gamma_range", "log_gain_range", "blur_sigma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if self.gamma_range[0] <= 0:
            raise ValueError("gamma_range must exclude 0")
        if self.blur_sigma_range[0] < 0:
            raise ValueError("blur_sigma_range must be non-negative")
        if self.blur_kernel_size < 1 or self.blur_kernel_size % 2 == 0:
            raise ValueError("blur_kernel_size must be an odd positive integer")


@dataclass
class ContrastiveBatch:
    """Query/positive patch pairs; negatives come from the key queue."""

    queries: list[Patch]
    positives: list[Patch]

    def __post_init__(self):
        if len(self.queries) != len(self.positives):
            raise ValueError("queries and positives differ in length")
        for q, p in zip(self.queries, self.positives):
            if q.source_id != p.source_id:
                raise ValueError(f"query/positive source mismatch: {q.source_id} vs {p.source_id}")
        ids = [q.source_id for q in self.queries]
        if len(set(ids)) != len(ids):
            raise ValueError("query source_ids are not pairwise distinct")

    def __len__(self) -> int:
        return len(self.queries)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG/JPEG file as an H x W x 3 float32 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise DatasetError(f"unreadable image '{path}': {exc}") from exc
    return arr / 255.0


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write an H x W x 3 array in [0, 1] as an 8-bit image file."""
    quantized = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(quantized).save(path)


def load_pair_dataset(root: str | os.PathLike, split: str) -> list[ImagePair]:
    """Load the paired dataset at `<root>/<split>/{low,high}/`.

    Pairs are matched by filename and returned sorted by filename. Every
    file must have a counterpart of the same name in the sibling directory.
    """
    base = Path(root) / split
    low_dir, high_dir = base / "low", base / "high"
    for d in (low_dir, high_dir):
        if not d.is_dir():
            raise DatasetError(f"missing directory '{d}'")

    def listing(d: Path) -> dict[str, Path]:
        return {
            p.name: p
            for p in d.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        }

    low_files, high_files = listing(low_dir), listing(high_dir)
    for name in sorted(low_files.keys() - high_files.keys()):
        raise DatasetError(f"'{name}' present in {low_dir} but missing from {high_dir}")
    for name in sorted(high_files.keys() - low_files.keys()):
        raise DatasetError(f"'{name}' present in {high_dir} but missing from {low_dir}")

    pairs = []
    for name in sorted(low_files):
        low = read_image(low_files[name])
        high = read_image(high_files[name])
        if low.shape != high.shape:
            raise DatasetError(
                f"pair '{name}': size mismatch {low.shape[:2]} vs {high.shape[:2]}"
            )
        pairs.append(ImagePair(low=low, normal=high, id=Path(name).stem))
    return pairs


def crop_patch(image: np.ndarray, size: int, rng: np.random.Generator,
               source_id: str = "") -> Patch:
    """Crop a random contiguous size x size window, offsets drawn uniformly."""
    h, w = image.shape[:2]
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds image dims {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return Patch(pixels=image[top:top + size, left:left + size].copy(), source_id=source_id)


# Logarithmic gains below this are treated as the identity: the first-order
# expansion log(1 + g*x)/log(1 + g) -> x as g -> 0, but evaluating it
# directly would divide by ~0.
LOG_GAIN_IDENTITY_THRESHOLD = 1e-6


def brightness_transform(pixels: np.ndarray, gamma: float, log_gain: float) -> np.ndarray:
    """Apply x -> x**gamma, then x -> log(1 + g*x)/log(1 + g), clamped to [0, 1]."""
    out = np.power(pixels, gamma)
    if log_gain > LOG_GAIN_IDENTITY_THRESHOLD:
        out = np.log1p(log_gain * out) / np.log1p(log_gain)
    return np.clip(out, 0.0, 1.0).astype(pixels.dtype)


def augment_brightness(patch: Patch, cfg: AugmentConfig, rng: np.random.Generator) -> Patch:
    gamma = float(rng.uniform(*cfg.gamma_range))
    gain = float(rng.uniform(*cfg.log_gain_range))
    return Patch(pixels=brightness_transform(patch.pixels, gamma, gain),
                 source_id=patch.source_id)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """2D Gaussian kernel normalized to sum 1; degenerates to a delta at sigma=0."""
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel size must be an odd positive integer")
    if sigma <= 1e-8:
        k = np.zeros((size, size))
        k[size // 2, size // 2] = 1.0
        return k
    coords = np.arange(size) - size // 2
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur(pixels: np.ndarray, sigma: float, kernel_size: int) -> np.ndarray:
    """2D Gaussian convolution with reflect padding, per channel."""
    kernel = gaussian_kernel(kernel_size, sigma)
    pad = kernel_size // 2
    if pad == 0 or sigma <= 1e-8:
        return pixels.copy()
    padded = np.pad(pixels, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    h, w = pixels.shape[:2]
    out = np.zeros_like(pixels, dtype=np.float64)
    for i in range(kernel_size):
        for j in range(kernel_size):
            out += kernel[i, j] * padded[i:i + h, j:j + w]
    return out.astype(pixels.dtype)


def augment_blur(patch: Patch, cfg: AugmentConfig, rng: np.random.Generator) -> Patch:
    sigma = float(rng.uniform(*cfg.blur_sigma_range))
    return Patch(pixels=gaussian_blur(patch.pixels, sigma, cfg.blur_kernel_size),
                 source_id=patch.source_id)


def augment_patch(patch: Patch, cfg: AugmentConfig, rng: np.random.Generator) -> Patch:
    """Brightness change followed by Gaussian blur."""
    return augment_blur(augment_brightness(patch, cfg, rng), cfg, rng)


def make_contrastive_batch(pairs: list[ImagePair], batch_size: int, patch_size: int,
                           cfg: AugmentConfig, rng: np.random.Generator) -> ContrastiveBatch:
    """Sample query/positive pairs from `batch_size` distinct low-light images.

    Query and positive are independently cropped and independently augmented
    patches of the same source image; patches from the other images in the
    queue serve as negatives.
    """
    if batch_size > len(pairs):
        raise ValueError(f"batch size {batch_size} exceeds dataset size {len(pairs)}")
    chosen = rng.choice(len(pairs), size=batch_size, replace=False)
    queries, positives = [], []
    for idx in chosen:
        pair = pairs[int(idx)]
        q = augment_patch(crop_patch(pair.low, patch_size, rng, pair.id), cfg, rng)
        p = augment_patch(crop_patch(pair.low, patch_size, rng, pair.id), cfg, rng)
        queries.append(q)
        positives.append(p)
    return ContrastiveBatch(queries=queries, positives=positives)


def crop_aligned_batch(pairs: list[ImagePair], patch_size: int,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Crop each pair at one shared offset so low/normal stay pixel-aligned."""
    lows, normals = [], []
    for pair in pairs:
        h, w = pair.low.shape[:2]
        if patch_size > min(h, w):
            raise ValueError(f"crop size {patch_size} exceeds image dims {h}x{w}")
        top = int(rng.integers(0, h - patch_size + 1))
        left = int(rng.integers(0, w - patch_size + 1))
        lows.append(pair.low[top:top + patch_size, left:left + patch_size])
        normals.append(pair.normal[top:top + patch_size, left:left + patch_size])
    return np.stack(lows), np.stack(normals)


def make_train_batch(pairs: list[ImagePair], batch_size: int, patch_size: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Supervised batch: (low, normal) patch stacks of shape (B, P, P, 3).

    The normal-light target is never brightness-augmented; both sides of a
    pair are cropped at the identical offset.
    """
    if batch_size > len(pairs):
        raise ValueError(f"batch size {batch_size} exceeds dataset size {len(pairs)}")
    chosen = rng.choice(len(pairs), size=batch_size, replace=False)
    selected = [pairs[int(i)] for i in chosen]
    return crop_aligned_batch(selected, patch_size, rng)


def to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """H x W x 3 numpy image -> (3, H, W) torch tensor."""
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).to(dtype)


def from_tensor(tensor: torch.Tensor) -> np.ndarray:
    """(3, H, W) torch tensor -> H x W x 3 float32 numpy image."""
    return tensor.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float32)


def batch_to_tensor(batch: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(B, H, W, 3) numpy batch -> (B, 3, H, W) torch tensor."""
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))).to(dtype)


def patches_to_tensor(patches: list[Patch], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return batch_to_tensor(np.stack([p.pixels for p in patches]), dtype)
