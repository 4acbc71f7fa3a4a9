"""Shared test oracles and fixtures-in-code."""

import numpy as np


def dft2_bruteforce(grid: np.ndarray) -> np.ndarray:
    """Direct O(M^2 N^2) evaluation of the unnormalized forward 2D DFT."""
    m, n = grid.shape
    out = np.zeros((m, n), dtype=np.complex128)
    for u in range(m):
        for v in range(n):
            acc = 0.0 + 0.0j
            for x in range(m):
                for y in range(n):
                    acc += grid[x, y] * np.exp(-2j * np.pi * (u * x / m + v * y / n))
            out[u, v] = acc
    return out


def smooth_image(rng: np.random.Generator, height: int, width: int,
                 components: int = 6) -> np.ndarray:
    """Random smooth RGB image in [0.1, 0.95], distinct per rng draw."""
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    img = np.zeros((height, width, 3))
    for c in range(3):
        field = np.zeros((height, width))
        for _ in range(components):
            fy, fx = rng.uniform(0.5, 4.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.2, 1.0)
            field += amp * np.sin(2 * np.pi * (fy * yy / height + fx * xx / width) + phase)
        field -= field.min()
        if field.max() > 0:
            field /= field.max()
        img[..., c] = 0.1 + 0.85 * field
    return img.astype(np.float32)


def make_pairs(rng: np.random.Generator, count: int, side: int):
    """Synthetic aligned pairs: a smooth scene and its gamma-darkened twin."""
    from relight.data import ImagePair

    pairs = []
    for i in range(count):
        normal = smooth_image(rng, side, side)
        low = np.clip(normal ** 2.2 * 0.4, 0.0, 1.0).astype(np.float32)
        pairs.append(ImagePair(low=low, normal=normal, id=f"img{i}"))
    return pairs


def build_lol_tree(root, pairs, split="train"):
    """Write ImagePair-style (low, normal, id) triples as a LOL directory tree."""
    from PIL import Image

    low_dir = root / split / "low"
    high_dir = root / split / "high"
    low_dir.mkdir(parents=True, exist_ok=True)
    high_dir.mkdir(parents=True, exist_ok=True)
    for low, normal, name in pairs:
        Image.fromarray((np.clip(low, 0, 1) * 255).round().astype(np.uint8)).save(
            low_dir / f"{name}.png")
        Image.fromarray((np.clip(normal, 0, 1) * 255).round().astype(np.uint8)).save(
            high_dir / f"{name}.png")
    return root


def grating_scene(rng: np.random.Generator, side: int, idx: int) -> np.ndarray:
    """Scene whose identity survives global pooling and brightness warps.

    Image `idx` carries a dominant grating at one of 8 orientations and a
    saturated color cast at one of 8 hues (64 unique combinations). Both
    attributes are crop-invariant, and channel-equal brightness warps
    preserve hue ordering, so instance discrimination stays learnable for
    an encoder that ends in global average pooling.
    """
    import colorsys

    theta = (idx % 8) * np.pi / 8
    hue = (idx // 8 % 8) / 8.0
    freq = 12.0 * (1.0 + 0.3 * (rng.uniform() - 0.5))
    phase = rng.uniform(0, 2 * np.pi)
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    carrier = np.sin(
        2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) / side + phase)
    base = np.array(colorsys.hsv_to_rgb(hue, 0.85, 1.0))
    img = (0.55 + 0.35 * carrier)[..., None] * base[None, None, :]
    texture = smooth_image(rng, side, side) * 0.08
    return np.clip(img + texture, 0.02, 0.98).astype(np.float32)
