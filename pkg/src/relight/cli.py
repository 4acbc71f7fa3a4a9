"""Command-line surface: pretraining, training, ablation, inference, metrics.

Subcommands:

    relight pretrain --config run.ini
    relight train    --config run.ini [--variant M0|M1|M2|M3]
    relight ablate   --config run.ini --variants M0,M1,M2,M3
    relight enhance  --ckpt ckpt.pt --in lowdir --out outdir
    relight evaluate --pred outdir --ref refdir --out report.csv

Config-driven commands accept repeated ``--set section.key=value`` flags,
and any key can also come from ``RELIGHT_<SECTION>_<KEY>`` environment
variables. Failures exit nonzero with a single ``error: ...`` line on
stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    restore_encoder,
    restore_key_encoder,
    restore_models,
    restore_queue,
    save_checkpoint,
)
from .config import ConfigError, RunSettings, load_settings
from .data import (
    IMAGE_EXTENSIONS,
    DatasetError,
    load_pair_dataset,
    read_image,
    write_image,
)
from .encoder import NegativeQueue, PretrainResult, clone_encoder, pretrain
from .irn import enhance
from .metrics import evaluate, format_metric, write_metric_report
from .seeding import torch_generator
from .training import VARIANTS, LossWeights, run_ablation, train

PRETRAIN_FILE = "pretrain.pt"


def enhance_batch(input_dir: str | Path, checkpoint: str | Path,
                  output_dir: str | Path) -> int:
    """Enhance every readable image under `input_dir`; returns the count written.

    A corrupt or pretraining-only checkpoint is fatal; an unreadable image
    is skipped with a warning so one bad file does not sink the batch.
    Outputs are 8-bit PNGs named after the source file's stem.
    """
    payload = load_checkpoint(checkpoint)
    encoder, irn = restore_models(payload)
    patch_size = payload["manifest"].get("patch_size", 192)

    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise DatasetError(f"missing directory '{input_dir}'")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    count = 0
    for path in sorted(input_dir.iterdir()):
        if not (path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS):
            continue
        try:
            image = read_image(path)
        except DatasetError as exc:
            print(f"warning: skipping {exc}", file=sys.stderr)
            continue
        write_image(out / f"{path.stem}.png", enhance(image, encoder, irn, patch_size))
        count += 1
    return count


def _load_pretrained(path: Path, settings: RunSettings) -> PretrainResult:
    """Rebuild the pretraining triple; missing optional blocks get fresh stand-ins."""
    payload = load_checkpoint(path)
    encoder = restore_encoder(payload)
    key_encoder = restore_key_encoder(payload)
    if key_encoder is None:
        key_encoder = clone_encoder(encoder)
    queue = restore_queue(payload)
    if queue is None:
        queue = NegativeQueue(settings.contrastive.queue_size, encoder.feature_dim,
                              generator=torch_generator(settings.train.seed, "queue-init"))
    return PretrainResult(query_encoder=encoder, key_encoder=key_encoder,
                          queue=queue, loss_history=[])


def _cmd_pretrain(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, args.overrides)
    pairs = load_pair_dataset(settings.paths.data_root, settings.paths.train_split)
    result = pretrain(pairs, settings.contrastive, settings.augment,
                      seed=settings.train.seed)

    run_dir = Path(settings.paths.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / PRETRAIN_FILE
    save_checkpoint(path, result.query_encoder, None,
                    epoch=settings.contrastive.pretrain_epochs,
                    step=len(result.loss_history), seed=settings.train.seed,
                    key_encoder=result.key_encoder, queue=result.queue,
                    extra={"patch_size": settings.contrastive.patch_size})
    print(f"pretrain: {len(result.loss_history)} steps, "
          f"final loss {result.loss_history[-1]:.4f}, saved {path}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, args.overrides)
    variant = args.variant or settings.train.ablation_variant
    cfg = replace(settings.train, ablation_variant=variant)
    weights = LossWeights.for_variant(variant, settings.loss.w1, settings.loss.w2)

    pairs = load_pair_dataset(settings.paths.data_root, settings.paths.train_split)
    try:
        val_pairs = load_pair_dataset(settings.paths.data_root, settings.paths.test_split)
    except DatasetError:
        val_pairs = None

    run_dir = Path(settings.paths.run_dir)
    pretrained = None
    if weights.use_info:
        ckpt = run_dir / PRETRAIN_FILE
        if ckpt.is_file():
            pretrained = _load_pretrained(ckpt, settings)
        else:
            print(f"warning: no pretraining checkpoint at {ckpt}; "
                  "starting from a fresh encoder", file=sys.stderr)

    result = train(pairs, cfg, weights, pretrained=pretrained,
                   contrastive=settings.contrastive, aug=settings.augment,
                   fre_cfg=settings.frequency, val_pairs=val_pairs, run_dir=run_dir)

    line = (f"train[{variant}]: {len(result.reports)} steps, "
            f"final total {result.reports[-1].total:.6f}")
    if result.val_history:
        _, val_psnr, val_ssim = result.val_history[-1]
        line += f", val PSNR {val_psnr:.2f} dB, val SSIM {val_ssim:.4f}"
    print(line)
    if result.latest_checkpoint is not None:
        print(f"checkpoint: {result.latest_checkpoint}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, args.overrides)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    train_pairs = load_pair_dataset(settings.paths.data_root, settings.paths.train_split)
    test_pairs = load_pair_dataset(settings.paths.data_root, settings.paths.test_split)

    rows = run_ablation(train_pairs, test_pairs, settings.train, variants,
                        contrastive=settings.contrastive, aug=settings.augment,
                        fre_cfg=settings.frequency,
                        w1=settings.loss.w1, w2=settings.loss.w2,
                        run_dir=settings.paths.run_dir)
    print("variant,psnr,ssim")
    for variant, mean_psnr, mean_ssim in rows:
        print(f"{variant},{format_metric(mean_psnr)},{format_metric(mean_ssim)}")
    return 0


def _cmd_enhance(args: argparse.Namespace) -> int:
    count = enhance_batch(args.input, args.ckpt, args.output)
    print(f"enhanced {count} images into {args.output}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    records, mean_psnr, mean_ssim = evaluate(args.pred, args.ref)
    write_metric_report(records, mean_psnr, mean_ssim, args.out)
    print(f"{len(records)} images: mean PSNR {format_metric(mean_psnr)}, "
          f"mean SSIM {format_metric(mean_ssim)}; report written to {args.out}")
    return 0


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="INI run configuration")
    parser.add_argument("--set", action="append", default=[], dest="overrides",
                        metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relight",
        description="Low-light enhancement: contrastive illumination encoding "
                    "plus feature-aware reconstruction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="contrastively pretrain the illumination encoder")
    _add_config_options(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train", help="train the reconstruction network")
    _add_config_options(p)
    p.add_argument("--variant", choices=VARIANTS, default=None,
                   help="objective variant (overrides the config)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ablate", help="train and score several objective variants")
    _add_config_options(p)
    p.add_argument("--variants", required=True, metavar="M0,M1,...",
                   help="comma-separated variant list")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("enhance", help="enhance a directory of low-light images")
    p.add_argument("--ckpt", required=True, help="training checkpoint")
    p.add_argument("--in", dest="input", required=True, help="input image directory")
    p.add_argument("--out", dest="output", required=True, help="output directory")
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("evaluate", help="score enhanced images against references")
    p.add_argument("--pred", required=True, help="enhanced image directory")
    p.add_argument("--ref", required=True, help="reference image directory")
    p.add_argument("--out", required=True, help="CSV report path")
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError, ValueError,
            RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
