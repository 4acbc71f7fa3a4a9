"""Three-term objective, warm-up schedule, training loop, ablation runner.

The objective is

    total = L_Info + w1 * L1 + w2 * L_fre

where disabled terms (per the LossWeights flags) are skipped entirely:
they report 0.0 and contribute nothing to the gradient graph. The four
ablation variants toggle the extra terms around the L1 backbone:
M0 = L1, M1 = L1 + L_fre, M2 = L1 + L_Info, M3 = all three. M0/M1 train
the (randomly initialized) illumination encoder end to end through the
reconstruction losses only; M2/M3 continue from contrastive pretraining
and keep fine-tuning with InfoNCE on fresh crops of each batch's
low-light images.

Every random draw comes from a stream keyed by (seed, purpose, step), so
two variants with the same seed consume bitwise-identical supervised
batches regardless of which extra terms are enabled; the per-step batch
checksum in the metrics log makes that comparable across runs.
"""

from __future__ import annotations

import copy
import json
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .data import (AugmentConfig, ImagePair, batch_to_tensor, crop_aligned_batch,
                   crop_patch, make_contrastive_batch, patches_to_tensor)
from .encoder import (MIN_PATCH_SIDE, ContrastiveConfig, NegativeQueue, PretrainResult,
                      TwoStreamEncoder, clone_encoder, compute_frequency_stats,
                      info_nce_term, momentum_update, pretrain)
from .irn import IRN, enhance
from .metrics import format_metric, psnr, ssim
from .seeding import data_rng, seed_torch, torch_generator
from .spectral import FrequencyLossConfig, frequency_loss_term

VARIANTS = ("M0", "M1", "M2", "M3")


@dataclass
class LossWeights:
    """Weights and switches of the three-term objective."""

    w1: float = 1.0
    w2: float = 0.1
    use_info: bool = True
    use_fre: bool = True

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError(f"loss weights must be non-negative, got {self.w1}, {self.w2}")

    @classmethod
    def for_variant(cls, variant: str, w1: float = 1.0, w2: float = 0.1) -> "LossWeights":
        if variant not in VARIANTS:
            raise ValueError(f"unknown ablation variant '{variant}'")
        return cls(w1=w1, w2=w2,
                   use_info=variant in ("M2", "M3"),
                   use_fre=variant in ("M1", "M3"))


@dataclass
class LossReport:
    """Scalar loss terms of one step; disabled terms read 0.0.

    `total` is composed from the scalar parts in double precision, so
    the weighted-sum identity holds to well under 1e-9.
    """

    l_info: float
    l1: float
    l_fre: float
    total: float

    def composed(self, weights: LossWeights) -> float:
        total = weights.w1 * self.l1
        if weights.use_info:
            total += self.l_info
        if weights.use_fre:
            total += weights.w2 * self.l_fre
        return total


@dataclass
class TrainConfig:
    """Main-loop hyperparameters; full-scale defaults, probe overrides."""

    epochs: int = 500
    batch_size: int = 16
    base_lr: float = 1e-3
    warmup_steps: int = 500
    seed: int = 0
    ablation_variant: str = "M3"
    patch_size: int = 192
    channels: int = 64
    max_steps: int | None = None
    total_steps: int | None = None
    val_interval: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "channels", "val_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.warmup_steps < 0:
            raise ValueError(f"warmup_steps must be non-negative, got {self.warmup_steps}")
        if self.ablation_variant not in VARIANTS:
            raise ValueError(f"unknown ablation variant '{self.ablation_variant}'")
        if self.patch_size < MIN_PATCH_SIDE:
            raise ValueError(f"patch_size must be >= {MIN_PATCH_SIDE}, got {self.patch_size}")
        for name in ("max_steps", "total_steps"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be positive when set")


def l1_loss(recon: torch.Tensor, target: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean absolute error and its subgradient w.r.t. recon (0 at ties)."""
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(recon.shape)} vs {tuple(target.shape)}")
    diff = recon.detach() - target.detach()
    loss = diff.abs().mean()
    grad = torch.sign(diff) / diff.numel()
    return loss, grad


class _L1Fn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, recon, target):
        loss, grad = l1_loss(recon, target)
        ctx.save_for_backward(grad)
        return loss

    @staticmethod
    def backward(ctx, grad_output):
        (grad,) = ctx.saved_tensors
        return grad * grad_output, None


def l1_term(recon: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Differentiable L1 backed by the explicit subgradient."""
    return _L1Fn.apply(recon, target)


def total_loss(recon: torch.Tensor, target: torch.Tensor, weights: LossWeights,
               q: torch.Tensor | None = None, k_plus: torch.Tensor | None = None,
               negatives: torch.Tensor | None = None, tau: float = 0.07,
               fre_cfg: FrequencyLossConfig | None = None,
               ) -> tuple[torch.Tensor, LossReport]:
    """Compose the enabled terms; returns the graph total and the report.

    A disabled term is never evaluated, so the gradient graph is
    bitwise-identical to one that never contained it.
    """
    l1 = l1_term(recon, target)
    total = weights.w1 * l1
    l_info_val = 0.0
    l_fre_val = 0.0
    if weights.use_fre:
        l_fre = frequency_loss_term(recon, target, fre_cfg or FrequencyLossConfig())
        total = total + weights.w2 * l_fre
        l_fre_val = float(l_fre.detach())
    if weights.use_info:
        if q is None or k_plus is None or negatives is None:
            raise ValueError("the InfoNCE term needs q, k_plus and the negative queue")
        l_info = info_nce_term(q, k_plus, negatives, tau)
        total = total + l_info
        l_info_val = float(l_info.detach())
    report = LossReport(l_info=l_info_val, l1=float(l1.detach()), l_fre=l_fre_val, total=0.0)
    report.total = report.composed(weights)
    return total, report


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up to base_lr, cosine decay to base_lr/100.

    The decay bottoms out exactly at cfg.total_steps (the index of the
    final step) and stays at the floor beyond it.
    """
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if cfg.total_steps is None:
        raise ValueError("total_steps is unresolved; train() fills it in from the plan")
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    floor = cfg.base_lr / 100.0
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    t = min(1.0, (step - cfg.warmup_steps) / span)
    return floor + (cfg.base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * t))


def batch_checksum(low: np.ndarray, target: np.ndarray) -> int:
    """Order-sensitive checksum of the exact bytes a step consumed."""
    return zlib.crc32(target.tobytes(), zlib.crc32(low.tobytes()))


@dataclass
class TrainResult:
    encoder: TwoStreamEncoder
    key_encoder: TwoStreamEncoder | None
    irn: IRN
    queue: NegativeQueue | None
    reports: list[LossReport] = field(default_factory=list)
    checksums: list[int] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    log_path: Path | None = None
    val_history: list[tuple[int, float, float]] = field(default_factory=list)
    latest_checkpoint: Path | None = None
    best_checkpoint: Path | None = None


def evaluate_enhancement(pairs: list[ImagePair], encoder: TwoStreamEncoder, irn: IRN,
                         patch_size: int) -> tuple[float, float]:
    """Mean PSNR/SSIM of the enhanced low-light images against the references."""
    if not pairs:
        raise ValueError("no pairs to evaluate")
    psnrs, ssims = [], []
    for pair in pairs:
        out = enhance(pair.low, encoder, irn, patch_size)
        psnrs.append(psnr(out, pair.normal))
        ssims.append(ssim(out, pair.normal))
    return sum(psnrs) / len(psnrs), sum(ssims) / len(ssims)


def _check_report_finite(report: LossReport, step: int) -> None:
    for name in ("l_info", "l1", "l_fre", "total"):
        if not math.isfinite(getattr(report, name)):
            raise RuntimeError(f"non-finite loss term '{name}' at step {step}; aborting")


def _init_fresh_encoder(pairs: list[ImagePair], patch_size: int, embed_dim: int,
                        seed: int) -> TwoStreamEncoder:
    """Random-initialized encoder with data-derived frequency statistics.

    Uses the same seed tags as the pretraining setup, so the network that
    a variant starts from does not depend on whether pretraining ran.
    """
    seed_torch(seed, "encoder-init")
    encoder = TwoStreamEncoder(embed_dim)
    stats_rng = data_rng(seed, "freq-stats")
    sample = [crop_patch(pairs[i % len(pairs)].low, patch_size, stats_rng)
              for i in range(min(len(pairs), 32))]
    mean, std = compute_frequency_stats(patches_to_tensor(sample))
    encoder.freq_mean.copy_(mean)
    encoder.freq_std.copy_(std)
    return encoder


def train(pairs: list[ImagePair], cfg: TrainConfig, weights: LossWeights,
          pretrained: PretrainResult | None = None,
          contrastive: ContrastiveConfig | None = None,
          aug: AugmentConfig | None = None,
          fre_cfg: FrequencyLossConfig | None = None,
          val_pairs: list[ImagePair] | None = None,
          run_dir: str | Path | None = None) -> TrainResult:
    """Train the reconstruction network (and encoder) on aligned pairs.

    Per step: sample an aligned low/normal patch batch, reconstruct,
    compose the objective (the InfoNCE triple comes from fresh crops of
    the same batch's low-light images), take one Adam step at the
    scheduled rate, then advance the momentum encoder and queue when the
    contrastive term is active. Metrics stream to run_dir/metrics.jsonl
    as one JSON record per step; checkpoints are written per epoch
    (latest, plus best by validation PSNR when val_pairs are given).

    When the contrastive term is enabled but no pretraining result is
    passed, the encoder starts from random initialization with a fresh
    queue; full-scale runs should pretrain first.
    """
    if not pairs:
        raise ValueError("training needs a non-empty dataset")
    if cfg.batch_size > len(pairs):
        raise ValueError(
            f"batch size {cfg.batch_size} exceeds dataset size {len(pairs)}")
    contrastive = contrastive or ContrastiveConfig()
    aug = aug or AugmentConfig()

    if weights.use_info:
        if pretrained is not None:
            encoder = pretrained.query_encoder
            key_encoder = pretrained.key_encoder
            queue = pretrained.queue
        else:
            encoder = _init_fresh_encoder(pairs, cfg.patch_size, contrastive.embed_dim,
                                          cfg.seed)
            key_encoder = clone_encoder(encoder)
            queue = NegativeQueue(contrastive.queue_size, encoder.feature_dim,
                                  generator=torch_generator(cfg.seed, "queue-init"))
    else:
        encoder = _init_fresh_encoder(pairs, cfg.patch_size, contrastive.embed_dim,
                                      cfg.seed)
        key_encoder = None
        queue = None

    seed_torch(cfg.seed, "irn-init")
    irn = IRN(feature_dim=encoder.feature_dim, channels=cfg.channels)

    steps_per_epoch = max(1, len(pairs) // cfg.batch_size)
    planned = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        planned = min(planned, cfg.max_steps)
    cfg = replace(cfg, total_steps=cfg.total_steps if cfg.total_steps is not None
                  else max(1, planned - 1))

    optimizer = torch.optim.Adam(
        list(irn.parameters()) + list(encoder.parameters()),
        lr=cfg.base_lr, betas=(0.9, 0.999))

    result = TrainResult(encoder=encoder, key_encoder=key_encoder, irn=irn, queue=queue)
    log_file = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        result.log_path = run_dir / "metrics.jsonl"
        log_file = result.log_path.open("a")

    best_psnr = -math.inf
    step = 0
    try:
        for epoch in range(cfg.epochs):
            if step >= planned:
                break
            for _ in range(steps_per_epoch):
                if step >= planned:
                    break
                rng = data_rng(cfg.seed, "train-batch", step)
                chosen = rng.choice(len(pairs), size=cfg.batch_size, replace=False)
                selected = [pairs[int(i)] for i in chosen]
                low_np, target_np = crop_aligned_batch(selected, cfg.patch_size, rng)
                checksum = batch_checksum(low_np, target_np)
                low = batch_to_tensor(low_np)
                target = batch_to_tensor(target_np)

                feat = encoder(low)
                recon = irn(low, feat)

                if weights.use_info:
                    crng = data_rng(cfg.seed, "train-contrastive", step)
                    cbatch = make_contrastive_batch(selected, len(selected),
                                                    cfg.patch_size, aug, crng)
                    q = encoder(patches_to_tensor(cbatch.queries))
                    with torch.no_grad():
                        k_plus = key_encoder(patches_to_tensor(cbatch.positives))
                    total, report = total_loss(recon, target, weights, q, k_plus,
                                               queue.keys, contrastive.tau, fre_cfg)
                else:
                    k_plus = None
                    total, report = total_loss(recon, target, weights, fre_cfg=fre_cfg)
                _check_report_finite(report, step)

                lr = lr_schedule(step, cfg)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.zero_grad()
                total.backward()
                optimizer.step()

                if weights.use_info:
                    momentum_update(key_encoder, encoder, contrastive.momentum)
                    queue.push(k_plus)

                result.reports.append(report)
                result.checksums.append(checksum)
                result.lrs.append(lr)
                if log_file is not None:
                    log_file.write(json.dumps({
                        "step": step, "l_info": report.l_info, "l1": report.l1,
                        "l_fre": report.l_fre, "total": report.total, "lr": lr,
                        "batch_checksum": checksum}) + "\n")
                    log_file.flush()
                step += 1

            if val_pairs and (epoch + 1) % cfg.val_interval == 0:
                val_psnr, val_ssim = evaluate_enhancement(
                    val_pairs, encoder, irn, cfg.patch_size)
                result.val_history.append((epoch, val_psnr, val_ssim))
            else:
                val_psnr = None

            if run_dir is not None:
                extra = {"variant": cfg.ablation_variant, "patch_size": cfg.patch_size}
                latest = run_dir / "latest.pt"
                save_checkpoint(latest, encoder, irn, epoch=epoch, step=step,
                                seed=cfg.seed, key_encoder=key_encoder, queue=queue,
                                optimizer=optimizer, extra=extra)
                result.latest_checkpoint = latest
                if val_psnr is not None and val_psnr > best_psnr:
                    best_psnr = val_psnr
                    best = run_dir / "best.pt"
                    save_checkpoint(best, encoder, irn, epoch=epoch, step=step,
                                    seed=cfg.seed, extra=extra)
                    result.best_checkpoint = best
    finally:
        if log_file is not None:
            log_file.close()
    return result


def run_ablation(train_pairs: list[ImagePair], test_pairs: list[ImagePair],
                 cfg: TrainConfig, variants: list[str],
                 contrastive: ContrastiveConfig | None = None,
                 aug: AugmentConfig | None = None,
                 fre_cfg: FrequencyLossConfig | None = None,
                 w1: float = 1.0, w2: float = 0.1,
                 run_dir: str | Path | None = None,
                 ) -> list[tuple[str, float, float]]:
    """Train every requested variant under one seed and score the test split.

    Contrastive variants share a single pretraining run (deep-copied per
    variant, since training mutates the encoder and queue). Probe-scale
    rows are diagnostics, not benchmark numbers.
    """
    if not variants:
        raise ValueError("no ablation variants requested")
    for variant in variants:
        if variant not in VARIANTS:
            raise ValueError(f"unknown ablation variant '{variant}'")
    contrastive = contrastive or ContrastiveConfig()
    aug = aug or AugmentConfig()

    pretrained = None
    if any(LossWeights.for_variant(v).use_info for v in variants):
        pretrained = pretrain(train_pairs, contrastive, aug, seed=cfg.seed)

    rows = []
    for variant in variants:
        weights = LossWeights.for_variant(variant, w1=w1, w2=w2)
        vcfg = replace(cfg, ablation_variant=variant)
        vdir = Path(run_dir) / variant if run_dir is not None else None
        result = train(train_pairs, vcfg, weights,
                       pretrained=copy.deepcopy(pretrained) if weights.use_info else None,
                       contrastive=contrastive, aug=aug, fre_cfg=fre_cfg,
                       run_dir=vdir)
        mean_psnr, mean_ssim = evaluate_enhancement(
            test_pairs, result.encoder, result.irn, cfg.patch_size)
        rows.append((variant, mean_psnr, mean_ssim))

    if run_dir is not None:
        lines = ["variant,psnr,ssim"]
        for variant, mean_psnr, mean_ssim in rows:
            lines.append(f"{variant},{format_metric(mean_psnr)},{format_metric(mean_ssim)}")
        report = Path(run_dir) / "ablation.csv"
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text("\n".join(lines) + "\n")
    return rows
