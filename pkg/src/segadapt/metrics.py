"""Confusion-matrix IoU metrics, linear probing, and domain-gap accounting.

IoU follows the dominant benchmark convention: classes absent from both the
prediction and the ground truth are undefined (NaN) and excluded from means;
classes absent from the ground truth but predicted score 0.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses
from .data import ClassSet, onehot_encode, save_image, save_mask, validate_mask
from .errors import InvalidLabelError, ShapeError, UndefinedGapError
from .networks import Segmenter, to_nchw
from .training import SplitData, child_seed, sample_crops, uint8_to_image


class ConfusionMatrix:
    """K x K integer counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (num_classes, num_classes) or (counts < 0).any():
            raise ShapeError("counts must be a non-negative KxK matrix")
        self.counts = counts

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts.copy())

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot add confusion matrices of different K")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def accumulate_cm(pred: np.ndarray, gt: np.ndarray, cm: ConfusionMatrix) -> ConfusionMatrix:
    """Add per-pixel (gt, pred) counts; returns a new matrix."""
    k = cm.num_classes
    pred = validate_mask(pred, k)
    gt = validate_mask(gt, k)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred/gt shape mismatch {pred.shape} vs {gt.shape}")
    flat = k * gt.ravel() + pred.ravel()
    add = np.bincount(flat, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(k, cm.counts + add)


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class IoU; NaN marks classes absent from both gt and prediction."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    out = np.full(cm.num_classes, np.nan)
    defined = denom > 0
    out[defined] = tp[defined] / denom[defined]
    return out


def miou(ious: np.ndarray | list[float], subset: ClassSet) -> float:
    """Arithmetic mean IoU over the subset, skipping undefined classes."""
    values = np.asarray(ious, dtype=np.float64)
    if len(subset.subset) == 0:
        raise InvalidLabelError("mIoU over an empty class subset is undefined")
    if values.shape[0] < subset.total_classes:
        raise ShapeError(
            f"need {subset.total_classes} per-class values, got {values.shape[0]}"
        )
    picked = values[list(subset.subset)]
    defined = ~np.isnan(picked)
    if not defined.any():
        raise InvalidLabelError("all subset classes are undefined")
    return float(picked[defined].mean())


@dataclass
class EvalResult:
    per_class_iou: np.ndarray
    miou: float
    cm: ConfusionMatrix

    def to_dict(self, class_names: tuple[str, ...] | None = None) -> dict:
        names = class_names or tuple(str(i) for i in range(len(self.per_class_iou)))
        return {
            "per_class_iou": {
                name: (None if np.isnan(v) else float(v))
                for name, v in zip(names, self.per_class_iou)
            },
            "miou": self.miou,
            "confusion_matrix": self.cm.counts.tolist(),
        }


def evaluate_model(model, split: SplitData, subset: ClassSet,
                   batch: int = 16) -> EvalResult:
    """Whole-image evaluation at generation resolution against split masks."""
    if split.masks is None:
        raise ShapeError("evaluation split has no ground-truth masks")
    images = uint8_to_image(split.images)
    logits = model.predict_logits(images, batch=batch)
    preds = logits.argmax(axis=-1).astype(np.int64)
    cm = ConfusionMatrix(subset.total_classes)
    for pred, gt in zip(preds, split.masks):
        cm = accumulate_cm(pred, gt, cm)
    ious = iou_per_class(cm)
    return EvalResult(per_class_iou=ious, miou=miou(ious, subset), cm=cm)


def linear_probe(model: Segmenter, split: SplitData, probe_steps: int = 500,
                 lr: float = 1e-3, batch: int = 8, seed: int = 0) -> Segmenter:
    """Retrain only the final linear classification layer on labelled images.

    Every other parameter is left bitwise unchanged; probe_steps = 0 returns
    an untouched copy.
    """
    if split.masks is None:
        raise ShapeError("linear probe needs a labelled split")
    probed = copy.deepcopy(model)
    probed.requires_grad_(False)
    probed.classifier.requires_grad_(True)
    if probe_steps == 0:
        return probed
    opt = torch.optim.Adam(probed.classifier.parameters(), lr=lr)
    k = probed.num_classes
    size = split.size
    for step in range(probe_steps):
        rng = np.random.default_rng(child_seed(seed, 71, step))
        imgs, masks, _, _ = sample_crops(split, rng, batch, size)
        y = torch.as_tensor(np.stack([onehot_encode(m, k) for m in masks]))
        logits = probed(to_nchw(imgs))
        loss = losses.seg_ce(logits.permute(0, 2, 3, 1), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return probed


@dataclass
class GapReport:
    """How much of the source->target gap the method recovered, in percent."""

    upper_miou: float
    source_miou: float
    method_miou: float
    remaining_gap_pct: float
    closed_gap_pct: float

    def to_dict(self) -> dict:
        return asdict(self)


def gap_report(upper: float, source: float, method: float) -> GapReport:
    """remaining = (upper - method) / (upper - source) * 100; closed = 100 - remaining."""
    if upper < source:
        raise UndefinedGapError(
            f"upper bound {upper} must be >= source score {source}"
        )
    if upper == source:
        raise UndefinedGapError("domain gap is undefined when upper == source")
    remaining = (upper - method) / (upper - source) * 100.0
    return GapReport(
        upper_miou=upper,
        source_miou=source,
        method_miou=method,
        remaining_gap_pct=remaining,
        closed_gap_pct=100.0 - remaining,
    )


def dump_predictions(model, split: SplitData, out_dir: str | Path,
                     limit: int = 16) -> None:
    """Side-by-side (input, prediction, gt) dumps for visual inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = min(limit, len(split))
    images = uint8_to_image(split.images[:n])
    logits = model.predict_logits(images)
    preds = logits.argmax(axis=-1).astype(np.int64)
    for i in range(n):
        stem = Path(split.paths[i]).stem
        save_image(out / f"{stem}_input.png", images[i])
        save_mask(out / f"{stem}_pred.png", preds[i], k=256)
        if split.masks is not None:
            save_mask(out / f"{stem}_gt.png", split.masks[i], k=256)


def write_report(path: str | Path, result: EvalResult,
                 class_names: tuple[str, ...] | None = None,
                 gap: GapReport | None = None,
                 miou_per_subset: dict[str, float] | None = None) -> None:
    payload = result.to_dict(class_names)
    if miou_per_subset:
        payload["miou_per_subset"] = miou_per_subset
    if gap is not None:
        payload["gap_report"] = gap.to_dict()
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
