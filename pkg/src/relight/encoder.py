"""Two-stream illumination encoder and its contrastive pretraining loop.

The encoder reads a square patch through two parallel convolution stacks:
one over the raw pixels, one over the patch's 2D spectrum (real and
imaginary planes stacked as channels and standardized per channel). Each
stack ends in global average pooling and a small MLP; the two outputs are
concatenated and L2-normalized into the illumination embedding.

Pretraining follows the momentum-contrast recipe: a query encoder is
trained with InfoNCE against positives produced by a slowly updated key
encoder, with negatives drawn from a FIFO ring buffer of past keys. The
InfoNCE denominator spans the positive plus all K queued keys, and only
the query receives gradients; `info_nce` returns the closed-form

    dL/dq = (1 / (B * tau)) * (sum_j p_j k_j - k_plus)

with p the softmax over the K+1 similarities, which `info_nce_term`
exposes to autograd.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch
from torch import nn

from .data import AugmentConfig, ImagePair, Patch, crop_patch, make_contrastive_batch, \
    patches_to_tensor
from .seeding import data_rng, seed_torch, torch_generator
from .spectral import dft2

MIN_PATCH_SIDE = 64

_STD_FLOOR = 1e-6


@dataclass
class ContrastiveConfig:
    """Pretraining hyperparameters (MoCo-style defaults)."""

    tau: float = 0.07
    momentum: float = 0.999
    queue_size: int = 4096
    pretrain_epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    embed_dim: int = 128
    patch_size: int = 192

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        for name in ("queue_size", "pretrain_epochs", "batch_size", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.patch_size < MIN_PATCH_SIDE:
            raise ValueError(f"patch_size must be >= {MIN_PATCH_SIDE}, got {self.patch_size}")


def _conv_stack(in_channels: int) -> nn.Sequential:
    channels = (16, 32, 64, 64, 128, 128)
    strides = (2, 2, 1, 2, 1, 2)
    layers: list[nn.Module] = []
    prev = in_channels
    for out, stride in zip(channels, strides):
        conv = nn.Conv2d(prev, out, 3, stride=stride, padding=1)
        # Default conv init attenuates ~2x per layer; after six layers the
        # trunk output (and its gradient) is ~1000x too small and only the
        # MLP head trains. Kaiming fan-out keeps the scale depth-stable.
        nn.init.kaiming_normal_(conv.weight, mode="fan_out", nonlinearity="relu")
        nn.init.zeros_(conv.bias)
        layers.append(conv)
        layers.append(nn.ReLU(inplace=True))
        prev = out
    return nn.Sequential(*layers)


class _Stream(nn.Module):
    """Six convolutions, global average pooling, two-layer MLP."""

    def __init__(self, in_channels: int, embed_dim: int):
        super().__init__()
        self.convs = _conv_stack(in_channels)
        self.pool = nn.AdaptiveAvgPool2d(1)
        hidden = nn.Linear(128, 128)
        nn.init.kaiming_normal_(hidden.weight, nonlinearity="relu")
        nn.init.zeros_(hidden.bias)
        self.mlp = nn.Sequential(
            hidden,
            nn.ReLU(inplace=True),
            nn.Linear(128, embed_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.pool(self.convs(x)).flatten(1))


def compute_frequency_stats(patches: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel mean/std of the shifted real/imag spectrum planes.

    Computed once over a sample of training patches and written into the
    encoder's buffers, so both encoder copies standardize identically.
    The std is floored to avoid division by zero on degenerate channels.
    """
    spectrum = torch.fft.fftshift(dft2(patches), dim=(-2, -1))
    planes = torch.cat([spectrum.real, spectrum.imag], dim=1)
    mean = planes.mean(dim=(0, 2, 3))
    std = planes.std(dim=(0, 2, 3)).clamp_min(_STD_FLOOR)
    return mean, std


class TwoStreamEncoder(nn.Module):
    """Spatial + frequency streams whose MLP outputs are concatenated.

    The frequency stream consumes the channel-wise spectrum of the patch
    as 6 real planes (real and imaginary parts of each color channel,
    zero frequency centered), standardized by the freq_mean / freq_std
    buffers. Raw spectra span several orders of magnitude, so the buffers
    should be set from training data via `compute_frequency_stats`.
    """

    def __init__(self, embed_dim: int = 128):
        super().__init__()
        if embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {embed_dim}")
        self.embed_dim = embed_dim
        self.spatial = _Stream(3, embed_dim)
        self.frequency = _Stream(6, embed_dim)
        self.register_buffer("freq_mean", torch.zeros(6))
        self.register_buffer("freq_std", torch.ones(6))

    @property
    def feature_dim(self) -> int:
        return 2 * self.embed_dim

    def frequency_planes(self, patches: torch.Tensor) -> torch.Tensor:
        spectrum = torch.fft.fftshift(dft2(patches), dim=(-2, -1))
        planes = torch.cat([spectrum.real, spectrum.imag], dim=1)
        mean = self.freq_mean.view(1, -1, 1, 1).to(planes.dtype)
        std = self.freq_std.view(1, -1, 1, 1).to(planes.dtype)
        return (planes - mean) / std

    def forward(self, patches: torch.Tensor, normalize: bool = True) -> torch.Tensor:
        if patches.ndim != 4 or patches.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) patches, got {tuple(patches.shape)}")
        height, width = patches.shape[-2:]
        if height != width:
            raise ValueError(f"patch must be square, got {height}x{width}")
        if height < MIN_PATCH_SIDE:
            raise ValueError(f"patch side {height} is below the minimum {MIN_PATCH_SIDE}")
        feat = torch.cat(
            [self.spatial(patches), self.frequency(self.frequency_planes(patches))], dim=1)
        if normalize:
            feat = nn.functional.normalize(feat, dim=1)
        return feat


def encode_patches(encoder: TwoStreamEncoder, patches: list[Patch],
                   normalize: bool = True) -> torch.Tensor:
    """Embed a list of patches with frozen parameters (no gradients)."""
    with torch.no_grad():
        return encoder(patches_to_tensor(patches), normalize=normalize)


def clone_encoder(encoder: TwoStreamEncoder) -> TwoStreamEncoder:
    """Frozen deep copy, used as the momentum key branch."""
    key = copy.deepcopy(encoder)
    for p in key.parameters():
        p.requires_grad_(False)
    return key


class NegativeQueue:
    """FIFO ring buffer of unit-norm key embeddings.

    Initialized with random unit vectors so InfoNCE is well defined from
    the first step; real keys overwrite them as training pushes batches.
    """

    def __init__(self, capacity: int, dim: int, generator: torch.Generator | None = None):
        if capacity < 1:
            raise ValueError(f"queue capacity must be positive, got {capacity}")
        if dim < 1:
            raise ValueError(f"key dimension must be positive, got {dim}")
        init = torch.randn(capacity, dim, generator=generator)
        self.keys = nn.functional.normalize(init, dim=1)
        self.cursor = 0

    @property
    def capacity(self) -> int:
        return self.keys.shape[0]

    def push(self, batch: torch.Tensor) -> None:
        if batch.ndim != 2 or batch.shape[1] != self.keys.shape[1]:
            raise ValueError(
                f"expected keys of shape (B, {self.keys.shape[1]}), got {tuple(batch.shape)}")
        size = batch.shape[0]
        if size > self.capacity:
            raise ValueError(f"cannot push {size} keys into a queue of capacity {self.capacity}")
        norms = batch.norm(dim=1)
        if (norms - 1.0).abs().max() > 1e-3:
            raise ValueError("queue keys must be unit-norm")
        batch = batch.detach().to(self.keys.dtype)
        end = self.cursor + size
        if end <= self.capacity:
            self.keys[self.cursor:end] = batch
        else:
            wrap = end - self.capacity
            self.keys[self.cursor:] = batch[:size - wrap]
            self.keys[:wrap] = batch[size - wrap:]
        self.cursor = end % self.capacity


def info_nce(q: torch.Tensor, k_plus: torch.Tensor, negatives: torch.Tensor,
             tau: float) -> tuple[torch.Tensor, torch.Tensor]:
    """InfoNCE loss (batch mean) and its gradient with respect to q.

    q, k_plus: (B, D) unit-norm embeddings; negatives: (K, D) queue keys.
    k_plus and the queue are constants, so dL/dq is the only gradient.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if negatives.ndim != 2 or negatives.shape[0] == 0:
        raise ValueError("negative-key queue is empty")
    if q.ndim != 2 or q.shape != k_plus.shape or q.shape[1] != negatives.shape[1]:
        raise ValueError(
            f"shape mismatch: q {tuple(q.shape)}, k_plus {tuple(k_plus.shape)}, "
            f"negatives {tuple(negatives.shape)}")
    for name, vec in (("q", q), ("k_plus", k_plus)):
        drift = (vec.norm(dim=1) - 1.0).abs().max()
        if drift > 0.05:
            raise ValueError(f"{name} must be unit-norm (max deviation {drift:.3g})")

    q_d, k_d, neg_d = q.detach(), k_plus.detach(), negatives.detach()
    l_pos = (q_d * k_d).sum(dim=1, keepdim=True)
    logits = torch.cat([l_pos, q_d @ neg_d.t()], dim=1) / tau
    log_p = torch.log_softmax(logits, dim=1)
    loss = -log_p[:, 0].mean()

    p = log_p.exp()
    batch = q.shape[0]
    grad_q = (p[:, :1] * k_d + p[:, 1:] @ neg_d - k_d) / (batch * tau)
    return loss, grad_q


class _InfoNceFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, q, k_plus, negatives, tau):
        loss, grad_q = info_nce(q, k_plus, negatives, tau)
        ctx.save_for_backward(grad_q)
        return loss

    @staticmethod
    def backward(ctx, grad_output):
        (grad_q,) = ctx.saved_tensors
        return grad_q * grad_output, None, None, None


def info_nce_term(q: torch.Tensor, k_plus: torch.Tensor, negatives: torch.Tensor,
                  tau: float) -> torch.Tensor:
    """Differentiable InfoNCE backed by the closed-form query gradient."""
    return _InfoNceFn.apply(q, k_plus, negatives, tau)


@torch.no_grad()
def momentum_update(key_encoder: nn.Module, query_encoder: nn.Module, m: float) -> None:
    """EMA update of the key branch: key <- m * key + (1 - m) * query.

    Buffers are not touched; the key encoder is created as a copy, so any
    buffers (frequency statistics) already agree and stay fixed.
    """
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {m}")
    key_params = dict(key_encoder.named_parameters())
    query_params = dict(query_encoder.named_parameters())
    if key_params.keys() != query_params.keys():
        raise ValueError("encoder parameter names do not match")
    for name, kp in key_params.items():
        qp = query_params[name]
        if kp.shape != qp.shape:
            raise ValueError(
                f"shape mismatch for {name}: {tuple(kp.shape)} vs {tuple(qp.shape)}")
        kp.mul_(m).add_(qp, alpha=1.0 - m)


@dataclass
class PretrainResult:
    query_encoder: TwoStreamEncoder
    key_encoder: TwoStreamEncoder
    queue: NegativeQueue
    loss_history: list[float] = field(default_factory=list)


def pretrain(pairs: list[ImagePair], cfg: ContrastiveConfig, aug: AugmentConfig,
             seed: int = 0) -> PretrainResult:
    """Contrastive pretraining of the illumination encoder.

    Each step samples a fresh query/positive batch from the low-light
    images, encodes queries with the trainable encoder and positives with
    the momentum copy, takes an InfoNCE step on the query encoder, then
    EMA-updates the key encoder and pushes the positive keys into the
    queue. One epoch is len(pairs) // batch_size steps (at least one).
    """
    if not pairs:
        raise ValueError("pretraining needs a non-empty dataset")

    seed_torch(seed, "encoder-init")
    query_encoder = TwoStreamEncoder(cfg.embed_dim)

    stats_rng = data_rng(seed, "freq-stats")
    sample = [crop_patch(pairs[i % len(pairs)].low, cfg.patch_size, stats_rng)
              for i in range(min(len(pairs), 32))]
    mean, std = compute_frequency_stats(patches_to_tensor(sample))
    query_encoder.freq_mean.copy_(mean)
    query_encoder.freq_std.copy_(std)

    key_encoder = clone_encoder(query_encoder)
    queue = NegativeQueue(cfg.queue_size, query_encoder.feature_dim,
                          generator=torch_generator(seed, "queue-init"))
    optimizer = torch.optim.Adam(query_encoder.parameters(), lr=cfg.lr)

    steps_per_epoch = max(1, len(pairs) // cfg.batch_size)
    history: list[float] = []
    step = 0
    for _ in range(cfg.pretrain_epochs):
        for _ in range(steps_per_epoch):
            rng = data_rng(seed, "contrastive", step)
            batch = make_contrastive_batch(pairs, cfg.batch_size, cfg.patch_size, aug, rng)
            q = query_encoder(patches_to_tensor(batch.queries))
            with torch.no_grad():
                k_plus = key_encoder(patches_to_tensor(batch.positives))
            loss = info_nce_term(q, k_plus, queue.keys, cfg.tau)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            momentum_update(key_encoder, query_encoder, cfg.momentum)
            queue.push(k_plus)
            history.append(float(loss.detach()))
            step += 1
    return PretrainResult(query_encoder, key_encoder, queue, history)
