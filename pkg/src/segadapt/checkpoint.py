"""Versioned checkpoints: named arrays plus an architecture fingerprint.

A checkpoint stores the state dicts of one or more named modules together
with a fingerprint derived from class names and parameter schemas; loading
into modules with a different schema is rejected.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Mapping

import torch
import torch.nn as nn

from .errors import CheckpointError

FORMAT_VERSION = 1


def architecture_fingerprint(modules: Mapping[str, nn.Module]) -> str:
    h = hashlib.sha256()
    for name in sorted(modules):
        module = modules[name]
        h.update(f"{name}:{module.__class__.__name__}\n".encode())
        for key, tensor in sorted(module.state_dict().items()):
            h.update(f"{key}:{tuple(tensor.shape)}:{tensor.dtype}\n".encode())
    return h.hexdigest()[:16]


def save_checkpoint(
    path: str | Path, modules: Mapping[str, nn.Module], extra: dict | None = None
) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "fingerprint": architecture_fingerprint(modules),
        "states": {name: module.state_dict() for name, module in modules.items()},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path, modules: Mapping[str, nn.Module]) -> dict:
    """Load state into `modules`; returns the checkpoint's extra metadata."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # malformed file
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format in {path}: "
            f"{payload.get('format_version') if isinstance(payload, dict) else type(payload)}"
        )
    expected = architecture_fingerprint(modules)
    if payload["fingerprint"] != expected:
        raise CheckpointError(
            f"architecture fingerprint mismatch for {path}: checkpoint "
            f"{payload['fingerprint']}, target {expected}"
        )
    for name, module in modules.items():
        module.load_state_dict(payload["states"][name])
    return dict(payload.get("extra", {}))
