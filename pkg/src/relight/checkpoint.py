"""Versioned checkpoint container for the encoder/IRN parameter blocks.

One file holds a manifest (format version, topology, training position,
seed) plus named state-dict blocks; loading validates the version and the
block inventory and reproduces tensors bit-exactly. Optional blocks (key
encoder, queue, optimizer) are present only when training needs to
resume, so enhancement checkpoints stay small.
"""

from __future__ import annotations

import os
from typing import Any

import torch

from .encoder import NegativeQueue, TwoStreamEncoder
from .irn import IRN

FORMAT_VERSION = 1

_REQUIRED_KEYS = ("format_version", "manifest", "encoder_state")
_MANIFEST_KEYS = ("embed_dim", "channels", "epoch", "step", "seed")


class CheckpointError(Exception):
    """Raised when a checkpoint file is missing, corrupt, or mismatched."""


def save_checkpoint(path: str | os.PathLike, encoder: TwoStreamEncoder,
                    irn: IRN | None, epoch: int, step: int, seed: int,
                    key_encoder: TwoStreamEncoder | None = None,
                    queue: NegativeQueue | None = None,
                    optimizer: torch.optim.Optimizer | None = None,
                    extra: dict[str, Any] | None = None) -> None:
    payload: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "manifest": {
            "embed_dim": encoder.embed_dim,
            "channels": irn.channels if irn is not None else None,
            "epoch": epoch,
            "step": step,
            "seed": seed,
        },
        "encoder_state": encoder.state_dict(),
    }
    if extra:
        payload["manifest"].update(extra)
    if irn is not None:
        payload["irn_state"] = irn.state_dict()
    if key_encoder is not None:
        payload["key_encoder_state"] = key_encoder.state_dict()
    if queue is not None:
        payload["queue_keys"] = queue.keys
        payload["queue_cursor"] = queue.cursor
    if optimizer is not None:
        payload["optimizer_state"] = optimizer.state_dict()
    torch.save(payload, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, Any]:
    """Read and validate the raw checkpoint payload."""
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint '{path}' does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"checkpoint '{path}' is corrupt: {exc}") from exc
    if not isinstance(payload, dict):
        raise CheckpointError(f"checkpoint '{path}' has an unexpected layout")
    for key in _REQUIRED_KEYS:
        if key not in payload:
            raise CheckpointError(f"checkpoint '{path}' is missing the '{key}' block")
    if payload["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint '{path}' has format version {payload['format_version']}, "
            f"expected {FORMAT_VERSION}")
    for key in _MANIFEST_KEYS:
        if key not in payload["manifest"]:
            raise CheckpointError(f"checkpoint '{path}' manifest is missing '{key}'")
    return payload


def restore_encoder(payload: dict[str, Any]) -> TwoStreamEncoder:
    encoder = TwoStreamEncoder(embed_dim=payload["manifest"]["embed_dim"])
    try:
        encoder.load_state_dict(payload["encoder_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"encoder block does not fit the manifest: {exc}") from exc
    return encoder


def restore_models(payload: dict[str, Any]) -> tuple[TwoStreamEncoder, IRN]:
    """Rebuild the encoder and IRN from a validated payload."""
    if "irn_state" not in payload:
        raise CheckpointError(
            "checkpoint holds no reconstruction parameters (pretraining-only)")
    manifest = payload["manifest"]
    encoder = restore_encoder(payload)
    irn = IRN(feature_dim=encoder.feature_dim, channels=manifest["channels"])
    try:
        irn.load_state_dict(payload["irn_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"parameter blocks do not fit the manifest: {exc}") from exc
    return encoder, irn


def restore_key_encoder(payload: dict[str, Any]) -> TwoStreamEncoder | None:
    if "key_encoder_state" not in payload:
        return None
    key = TwoStreamEncoder(embed_dim=payload["manifest"]["embed_dim"])
    try:
        key.load_state_dict(payload["key_encoder_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"key-encoder block does not fit the manifest: {exc}") from exc
    for p in key.parameters():
        p.requires_grad_(False)
    return key


def restore_queue(payload: dict[str, Any]) -> NegativeQueue | None:
    if "queue_keys" not in payload:
        return None
    keys = payload["queue_keys"]
    queue = NegativeQueue(keys.shape[0], keys.shape[1])
    queue.keys = keys.clone()
    queue.cursor = int(payload["queue_cursor"])
    return queue
