"""2D Fourier transform, weight-adaptive frequency loss, spectrum diagnostics.

All functions operate on torch tensors whose last two dimensions are the
spatial grid (M, N); leading dimensions (channels, batch) are transformed
independently and averaged where a scalar is produced. `data.to_tensor`
converts the H x W x 3 numpy layout used by the data module.

The frequency loss is

    L = (1/MN) * sum_{u,v} w(u,v) * |F_r(u,v) - F_f(u,v)|^2,
    w(u,v) = |F_r(u,v) - F_f(u,v)|^alpha,

where F_r / F_f are the unnormalized spectra of the reference and the
reconstruction. Residual-heavy (typically high-frequency) bins therefore
receive a larger weight. Writing D = F_r - F_f, the gradient with respect
to the reconstruction has the closed form

    dL/d(recon) = -2 * kappa * Re(idft2(w * D)),

with kappa = 1 when the weight is treated as a constant and
kappa = 1 + alpha/2 when it is differentiated through (then
w * |D|^2 = |D|^(2+alpha)).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class FrequencyLossConfig:
    """Knobs of the adaptive frequency loss.

    alpha: exponent of the spectral-residual weight (>= 0).
    normalize_weight: divide the weight by its per-channel maximum.
    detach_weight: treat the weight as a constant during differentiation;
        differentiating through it raises the effective exponent to
        2 + alpha, which destabilizes training.
    """

    alpha: float = 0.01
    normalize_weight: bool = False
    detach_weight: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


def _as_grid(x) -> torch.Tensor:
    t = torch.as_tensor(x)
    if t.ndim < 2:
        raise ValueError(f"expected a grid with >= 2 dims, got shape {tuple(t.shape)}")
    return t


def dft2(image) -> torch.Tensor:
    """Unnormalized forward 2D DFT over the last two dimensions.

    F(u, v) = sum_x sum_y f(x, y) * exp(-i 2 pi (u x / M + v y / N)).
    Leading dimensions are transformed channel-wise.
    """
    t = _as_grid(image)
    if not torch.isfinite(t).all():
        raise ValueError("dft2 input contains non-finite values")
    return torch.fft.fft2(t)


def conjugate_asymmetry(spectrum: torch.Tensor) -> float:
    """Max deviation from F(u, v) == conj(F(-u mod M, -v mod N))."""
    flipped = torch.roll(torch.flip(spectrum, dims=(-2, -1)), shifts=(1, 1), dims=(-2, -1))
    return float((spectrum - flipped.conj()).abs().max())


def idft2(spectrum, real_output: bool = True) -> torch.Tensor:
    """(1/MN)-normalized inverse of `dft2`.

    With real_output the spectrum must be conjugate-symmetric (within 1e-6
    relative to its magnitude), i.e. originate from a real grid; the
    imaginary part of the inverse is then dropped.
    """
    t = _as_grid(spectrum)
    if not torch.is_complex(t):
        t = t.to(torch.complex128)
    inv = torch.fft.ifft2(t)
    if not real_output:
        return inv
    scale = max(1.0, float(t.abs().max()))
    if conjugate_asymmetry(t) > 1e-6 * scale:
        raise ValueError("spectrum is not conjugate-symmetric; no real inverse exists")
    return inv.real


def _loss_and_grad(recon: torch.Tensor, target: torch.Tensor,
                   cfg: FrequencyLossConfig) -> tuple[torch.Tensor, torch.Tensor]:
    m, n = recon.shape[-2], recon.shape[-1]
    residual = torch.fft.fft2(target) - torch.fft.fft2(recon)
    mag = residual.abs()
    weight = mag ** cfg.alpha
    if cfg.normalize_weight:
        # Zero residual grids keep weight 0 and contribute loss 0.
        wmax = weight.amax(dim=(-2, -1), keepdim=True)
        weight = weight / wmax.clamp_min(torch.finfo(weight.dtype).tiny)
    per_channel = (weight * mag ** 2).sum(dim=(-2, -1)) / (m * n)
    loss = per_channel.mean()
    kappa = 1.0 if cfg.detach_weight else 1.0 + cfg.alpha / 2.0
    channels = recon.numel() // (m * n)
    grad = -2.0 * kappa / channels * torch.fft.ifft2(weight * residual).real
    return loss, grad.to(recon.dtype)


def focal_frequency_loss(recon, target, cfg: FrequencyLossConfig | None = None
                         ) -> tuple[torch.Tensor, torch.Tensor]:
    """Adaptive frequency loss and its analytic gradient w.r.t. the reconstruction.

    Channels (all leading dimensions) are evaluated independently and
    averaged. With alpha = 0 this reduces to plain spectral MSE.
    """
    cfg = cfg or FrequencyLossConfig()
    r, t = _as_grid(recon), _as_grid(target)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch: {tuple(r.shape)} vs {tuple(t.shape)}")
    return _loss_and_grad(r, t, cfg)


class _FrequencyLossFn(torch.autograd.Function):
    """Training-graph wrapper that backpropagates the closed-form gradient."""

    @staticmethod
    def forward(ctx, recon, target, alpha, normalize_weight, detach_weight):
        cfg = FrequencyLossConfig(alpha=alpha, normalize_weight=normalize_weight,
                                  detach_weight=detach_weight)
        loss, grad = _loss_and_grad(recon.detach(), target.detach(), cfg)
        ctx.save_for_backward(grad)
        return loss

    @staticmethod
    def backward(ctx, grad_output):
        (grad,) = ctx.saved_tensors
        return grad * grad_output, None, None, None, None


def frequency_loss_term(recon: torch.Tensor, target: torch.Tensor,
                        cfg: FrequencyLossConfig | None = None) -> torch.Tensor:
    """Differentiable frequency loss for the training objective.

    Identical value and gradient to `focal_frequency_loss`; gradients flow
    to `recon` only.
    """
    cfg = cfg or FrequencyLossConfig()
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(recon.shape)} vs {tuple(target.shape)}")
    return _FrequencyLossFn.apply(recon, target, cfg.alpha, cfg.normalize_weight,
                                  cfg.detach_weight)


@dataclass
class SpectrumGapProfile:
    """Radially binned mean log-magnitudes and their per-bin gap.

    gap[i] = target_logmag[i] - recon_logmag[i]: positive where the
    reconstruction under-represents the reference spectrum. Bins with no
    frequency samples hold 0 and counts 0.
    """

    bin_centers: torch.Tensor
    recon_logmag: torch.Tensor
    target_logmag: torch.Tensor
    gap: torch.Tensor
    counts: torch.Tensor


_LOG_EPS = 1e-12


def _radial_bin_index(m: int, n: int, bins: int) -> torch.Tensor:
    fu = torch.fft.fftfreq(m).reshape(-1, 1)
    fv = torch.fft.fftfreq(n).reshape(1, -1)
    radius = torch.sqrt(fu ** 2 + fv ** 2).clamp(max=0.5)
    idx = torch.floor(radius / 0.5 * bins).long()
    return idx.clamp(max=bins - 1)


def _mean_logmag(grid: torch.Tensor) -> torch.Tensor:
    mag = torch.fft.fft2(grid.double()).abs()
    logmag = torch.log(mag + _LOG_EPS)
    if logmag.ndim > 2:
        logmag = logmag.reshape(-1, *logmag.shape[-2:]).mean(dim=0)
    return logmag


def spectrum_gap_profile(recon, target, bins: int) -> SpectrumGapProfile:
    """Mean log-magnitude of both spectra by normalized radial frequency.

    Radial frequency r = sqrt(fu^2 + fv^2) is capped at 0.5 (the corner
    bins fold into the outermost annulus); bins partition [0, 0.5] evenly.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    r, t = _as_grid(recon), _as_grid(target)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch: {tuple(r.shape)} vs {tuple(t.shape)}")
    m, n = r.shape[-2], r.shape[-1]
    idx = _radial_bin_index(m, n, bins).reshape(-1)

    counts = torch.zeros(bins, dtype=torch.double).scatter_add_(
        0, idx, torch.ones_like(idx, dtype=torch.double))
    safe = counts.clamp_min(1.0)

    def binned(logmag: torch.Tensor) -> torch.Tensor:
        sums = torch.zeros(bins, dtype=torch.double).scatter_add_(0, idx, logmag.reshape(-1))
        return torch.where(counts > 0, sums / safe, torch.zeros_like(sums))

    recon_prof = binned(_mean_logmag(r))
    target_prof = binned(_mean_logmag(t))
    centers = (torch.arange(bins, dtype=torch.double) + 0.5) * (0.5 / bins)
    return SpectrumGapProfile(
        bin_centers=centers,
        recon_logmag=recon_prof,
        target_logmag=target_prof,
        gap=target_prof - recon_prof,
        counts=counts,
    )
