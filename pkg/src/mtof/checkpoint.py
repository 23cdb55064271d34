"""Self-describing checkpoint container shared by every model kind."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Any

import torch

FORMAT = "mtof-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(path: Path, kind: str, config: dict, state: dict[str, Any], **extra) -> None:
    """Write ``state`` (tensors, arrays, plain values) with a config echo.

    ``kind`` names the model family so ``load_checkpoint`` callers can
    dispatch without guessing.
    """
    blob = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "state": state,
        **extra,
    }
    buf = io.BytesIO()
    torch.save(blob, buf)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: Path, kind: str | None = None) -> dict:
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise ValueError(f"{path} is not an mtof checkpoint")
    if blob.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('format_version')}")
    if kind is not None and blob["kind"] != kind:
        raise ValueError(f"{path} holds a {blob['kind']!r} model, expected {kind!r}")
    return blob
