"""Synthetic paired-dataset generator in the LOL directory layout.

The real benchmark is not distributed with this package, so smoke runs and
the CLI examples need a stand-in: smooth sinusoid-mixture scenes as the
normal-light images, each darkened by a random gamma curve and gain as its
low-light twin. The output tree matches what `load_pair_dataset` expects:

    <root>/<split>/low/0000.png
    <root>/<split>/high/0000.png

Usage: ``python3 -m relight.synthetic --root data --train 16 --test 4``.
"""

from __future__ import annotations

import argparse
import os
from pathlib import Path

import numpy as np

from .data import write_image
from .seeding import data_rng


def synthetic_scene(rng: np.random.Generator, height: int, width: int,
                    components: int = 6) -> np.ndarray:
    """Random smooth RGB scene in [0.1, 0.95]."""
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    img = np.zeros((height, width, 3))
    for c in range(3):
        band = np.zeros((height, width))
        for _ in range(components):
            fy, fx = rng.uniform(0.5, 4.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.2, 1.0)
            band += amp * np.sin(2 * np.pi * (fy * yy / height + fx * xx / width) + phase)
        band -= band.min()
        if band.max() > 0:
            band /= band.max()
        img[..., c] = 0.1 + 0.85 * band
    return img.astype(np.float32)


def darken(normal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Low-light rendition: gamma compression plus a global gain drop."""
    gamma = rng.uniform(1.8, 2.6)
    gain = rng.uniform(0.25, 0.5)
    return np.clip(normal ** gamma * gain, 0.0, 1.0).astype(np.float32)


def write_synthetic_dataset(root: str | os.PathLike, train: int = 16, test: int = 4,
                            height: int = 128, width: int = 128,
                            seed: int = 0) -> dict[str, int]:
    """Write `train`/`test` splits under `root`; returns per-split pair counts."""
    if min(train, test) < 0:
        raise ValueError("split sizes must be non-negative")
    if height < 1 or width < 1:
        raise ValueError("image dimensions must be positive")
    counts = {}
    for split, count in (("train", train), ("test", test)):
        low_dir = Path(root) / split / "low"
        high_dir = Path(root) / split / "high"
        low_dir.mkdir(parents=True, exist_ok=True)
        high_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            rng = data_rng(seed, f"synthetic-{split}", i)
            normal = synthetic_scene(rng, height, width)
            low = darken(normal, rng)
            name = f"{i:04d}.png"
            write_image(low_dir / name, low)
            write_image(high_dir / name, normal)
        counts[split] = count
    return counts


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate a synthetic paired low-light dataset.")
    parser.add_argument("--root", required=True, help="output directory")
    parser.add_argument("--train", type=int, default=16, help="training pairs")
    parser.add_argument("--test", type=int, default=4, help="test pairs")
    parser.add_argument("--height", type=int, default=128)
    parser.add_argument("--width", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    counts = write_synthetic_dataset(args.root, args.train, args.test,
                                     args.height, args.width, args.seed)
    print(f"wrote {counts['train']} train and {counts['test']} test pairs to {args.root}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
