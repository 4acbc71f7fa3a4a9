"""PSNR and SSIM and the paired-directory evaluation harness.

PSNR is computed over all RGB channels jointly with peak 1.0; identical
images map to the +inf sentinel (serialized as the string "inf"). SSIM
follows the standard single-scale formula on the channel-mean grayscale:
an 11x11 Gaussian window with sigma 1.5, stability constants
C1 = (0.01*peak)^2 and C2 = (0.03*peak)^2, averaged over positions where
the window fits entirely inside the image.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import IMAGE_EXTENSIONS, DatasetError, read_image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _validate_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf when the images are identical."""
    _validate_shapes(a, b)
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2
    window = np.exp(-(offsets ** 2) / (2 * sigma * sigma))
    return window / window.sum()


def _window_means(image: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local means, keeping only fully covered positions."""
    rows = np.lib.stride_tricks.sliding_window_view(image, window.size, axis=0)
    by_rows = rows @ window
    cols = np.lib.stride_tricks.sliding_window_view(by_rows, window.size, axis=1)
    return cols @ window


def _to_grayscale(image: np.ndarray) -> np.ndarray:
    if image.ndim == 3:
        return image.astype(np.float64).mean(axis=2)
    if image.ndim == 2:
        return image.astype(np.float64)
    raise ValueError(f"expected an image grid, got shape {image.shape}")


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean local SSIM between the channel-mean grayscales of a and b."""
    _validate_shapes(a, b)
    x = _to_grayscale(a)
    y = _to_grayscale(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")

    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _window_means(x, window)
    mu_y = _window_means(y, window)
    # sigma_xy reduces bitwise to sigma_x^2 when a == b, which keeps
    # self-similarity exactly 1.0.
    sigma_x = _window_means(x * x, window) - mu_x * mu_x
    sigma_y = _window_means(y * y, window) - mu_y * mu_y
    sigma_xy = _window_means(x * y, window) - mu_x * mu_y

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2))
    return float(ssim_map.mean())


@dataclass
class MetricRecord:
    """Per-image quality scores."""

    image_id: str
    psnr: float
    ssim: float

    def __post_init__(self):
        if not (self.psnr >= 0.0 or math.isinf(self.psnr)):
            raise ValueError(f"'{self.image_id}': psnr {self.psnr} out of range")
        if not -1.0 - 1e-9 <= self.ssim <= 1.0 + 1e-9:
            raise ValueError(f"'{self.image_id}': ssim {self.ssim} out of range")


def _image_listing(directory: Path) -> dict[str, Path]:
    return {p.name: p for p in directory.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS}


def evaluate(pred_dir: str | os.PathLike,
             ref_dir: str | os.PathLike) -> tuple[list[MetricRecord], float, float]:
    """Score every prediction against the same-named reference image.

    Returns the per-image records (sorted by filename, so directory
    enumeration order cannot change the result) and the mean PSNR / SSIM.
    """
    pred_path, ref_path = Path(pred_dir), Path(ref_dir)
    for d in (pred_path, ref_path):
        if not d.is_dir():
            raise DatasetError(f"missing directory '{d}'")
    preds = _image_listing(pred_path)
    refs = _image_listing(ref_path)
    if not preds:
        raise DatasetError(f"no images found in '{pred_path}'")
    for name in sorted(preds.keys() - refs.keys()):
        raise DatasetError(f"'{name}' present in {pred_path} but missing from {ref_path}")
    for name in sorted(refs.keys() - preds.keys()):
        raise DatasetError(f"'{name}' present in {ref_path} but missing from {pred_path}")

    records = []
    for name in sorted(preds):
        pred = read_image(preds[name])
        ref = read_image(refs[name])
        if pred.shape != ref.shape:
            raise DatasetError(
                f"pair '{name}': size mismatch {pred.shape[:2]} vs {ref.shape[:2]}")
        records.append(MetricRecord(image_id=Path(name).stem,
                                    psnr=psnr(pred, ref), ssim=ssim(pred, ref)))
    mean_psnr = sum(r.psnr for r in records) / len(records)
    mean_ssim = sum(r.ssim for r in records) / len(records)
    return records, mean_psnr, mean_ssim


def format_metric(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def write_metric_report(records: list[MetricRecord], mean_psnr: float,
                        mean_ssim: float, path: str | os.PathLike) -> None:
    """Comma-separated per-image report with a trailing mean row."""
    lines = ["image_id,psnr,ssim"]
    for r in records:
        lines.append(f"{r.image_id},{format_metric(r.psnr)},{format_metric(r.ssim)}")
    lines.append(f"mean,{format_metric(mean_psnr)},{format_metric(mean_ssim)}")
    Path(path).write_text("\n".join(lines) + "\n")
