"""Core value types: images in [-1, 1], class-id masks, one-hot encodings, file IO.

Images are float32 arrays of shape (H, W, 3) with values in [-1, 1]; masks are
integer arrays of shape (H, W) with values in [0, num_classes). Both serialize
to 8-bit PNG: masks store the class id directly in a single channel, images map
[-1, 1] linearly onto [0, 255].
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image as PILImage

from .errors import (
    InvalidEncodingError,
    InvalidLabelError,
    SchemaError,
    ShapeError,
    TrainingFaultError,
)

NUM_CLASSES = 5
CLASS_NAMES = ("background", "road", "disc", "box", "pole")


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the (H, W, 3) / [-1, 1] image contract and return a float32 view."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"image must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"image must be non-empty, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ShapeError("image contains non-finite values")
    if arr.min() < -1.0 - 1e-6 or arr.max() > 1.0 + 1e-6:
        raise ShapeError("image values must lie in [-1, 1]")
    return arr.astype(np.float32, copy=False)


def validate_mask(mask: np.ndarray, k: int) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"mask must be a non-empty (H, W) array, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise InvalidLabelError(f"mask dtype must be integer, got {arr.dtype}")
    if arr.min() < 0 or arr.max() >= k:
        raise InvalidLabelError(
            f"mask values must lie in [0, {k}), found range "
            f"[{int(arr.min())}, {int(arr.max())}]"
        )
    return arr.astype(np.int64, copy=False)


def onehot_encode(mask: np.ndarray, k: int) -> np.ndarray:
    """Encode an (H, W) class-id mask as an (H, W, k) one-hot float32 array."""
    arr = validate_mask(mask, k)
    out = np.zeros(arr.shape + (k,), dtype=np.float32)
    np.put_along_axis(out, arr[..., None], 1.0, axis=-1)
    return out


def onehot_decode(onehot: np.ndarray) -> np.ndarray:
    """Invert onehot_encode via per-pixel argmax; rejects non-one-hot input."""
    arr = np.asarray(onehot)
    if arr.ndim != 3 or arr.size == 0:
        raise ShapeError(f"one-hot mask must be a non-empty (H, W, K) array, got {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)) or not np.all(arr.sum(axis=-1) == 1):
        raise InvalidEncodingError("input is not one-hot (per-pixel channel sum != 1)")
    return arr.argmax(axis=-1).astype(np.int64)


@dataclass(frozen=True)
class ClassSet:
    """A class universe of size total_classes and an ordered evaluation subset."""

    total_classes: int
    subset: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.total_classes < 1:
            raise InvalidLabelError("total_classes must be >= 1")
        if len(set(self.subset)) != len(self.subset):
            raise InvalidLabelError(f"duplicate class ids in subset {self.subset}")
        for c in self.subset:
            if not 0 <= c < self.total_classes:
                raise InvalidLabelError(
                    f"class id {c} outside [0, {self.total_classes})"
                )

    @classmethod
    def full(cls, k: int) -> "ClassSet":
        return cls(total_classes=k, subset=tuple(range(k)))

    @classmethod
    def excluding(cls, k: int, dropped: tuple[int, ...]) -> "ClassSet":
        return cls(total_classes=k, subset=tuple(c for c in range(k) if c not in dropped))


@dataclass(frozen=True)
class Hyper:
    """Loss-weighting and stabilisation constants shared by the training phases."""

    lambda_pl: float = 0.3
    lambda_cgan: float = 0.3
    lambda_con: float = 1.0
    ema_decay: float = 0.999
    clip_norm: float = 5.0
    fade_start: int = 160
    fade_end: int = 800
    lambda_max: float = 0.3

    def __post_init__(self) -> None:
        if min(self.lambda_pl, self.lambda_cgan, self.lambda_con, self.lambda_max) < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.fade_start > self.fade_end:
            raise ValueError("fade_start must be <= fade_end")


@dataclass(frozen=True)
class LossReport:
    """Named scalar losses for one logged training step.

    total_d / total_g / total_fs are the combined objectives actually stepped;
    each decomposes into the listed components (see check_report_totals).
    """

    step: int
    seg_src: float = 0.0
    seg_pl: float = 0.0
    dgan_d: float = 0.0
    dgan_g: float = 0.0
    cgan_d: float = 0.0
    cgan_g: float = 0.0
    id: float = 0.0
    con: float = 0.0
    total_d: float = 0.0
    total_g: float = 0.0
    total_fs: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def require_finite(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise TrainingFaultError(
                    f"non-finite loss term '{f.name}' at step {self.step}"
                )


def check_report_totals(
    report: LossReport,
    lambda_pl: float,
    lambda_cgan: float,
    lambda_con: float,
    rtol: float = 1e-6,
) -> None:
    """Verify that logged totals equal the weighted sums of their components."""

    def close(total: float, expected: float, name: str) -> None:
        if abs(total - expected) > rtol * max(1.0, abs(expected)):
            raise AssertionError(
                f"{name}={total} does not match component sum {expected}"
            )

    if report.total_d != 0.0:
        close(
            report.total_d,
            report.seg_src + lambda_pl * report.seg_pl + report.dgan_d
            + lambda_cgan * report.cgan_d,
            "total_d",
        )
    if report.total_g != 0.0:
        close(
            report.total_g,
            report.seg_src + report.dgan_g + lambda_cgan * report.cgan_g + report.id,
            "total_g",
        )
    if report.total_fs != 0.0:
        close(report.total_fs, report.seg_src + lambda_con * report.con, "total_fs")


def require_matching_schema(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> None:
    """Reject name or per-name shape mismatches between two parameter dicts."""
    if set(a.keys()) != set(b.keys()):
        missing = set(a.keys()) ^ set(b.keys())
        raise SchemaError(f"parameter names differ: {sorted(missing)}")
    for name, arr in a.items():
        if tuple(arr.shape) != tuple(b[name].shape):
            raise SchemaError(
                f"shape mismatch for '{name}': {tuple(arr.shape)} vs {tuple(b[name].shape)}"
            )


def image_to_uint8(img: np.ndarray) -> np.ndarray:
    arr = validate_image(img)
    return np.clip(np.round((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def uint8_to_image(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / 127.5) - 1.0


def save_image(path: str | Path, img: np.ndarray) -> None:
    PILImage.fromarray(image_to_uint8(img), mode="RGB").save(path)


def load_image(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return uint8_to_image(arr)


def save_mask(path: str | Path, mask: np.ndarray, k: int = NUM_CLASSES) -> None:
    arr = validate_mask(mask, min(k, 256))
    PILImage.fromarray(arr.astype(np.uint8), mode="L").save(path)


def load_mask(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return arr.astype(np.int64)
