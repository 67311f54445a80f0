"""Evaluation machinery: confusion matrices, class-subset mIoU, domain gap.

Shows the IoU conventions (undefined classes, predicted-but-absent classes),
mean-IoU over class subsets of different sizes, and the linear-probe based
domain-gap accounting.
"""

import numpy as np

from segadapt.data import ClassSet
from segadapt.metrics import (
    ConfusionMatrix,
    accumulate_cm,
    gap_report,
    iou_per_class,
    miou,
)

# A four-pixel example, small enough to verify by hand.
pred = np.array([[0, 0, 1, 1]])
gt = np.array([[0, 1, 1, 1]])
cm = accumulate_cm(pred, gt, ConfusionMatrix(2))
print("confusion matrix (rows gt, cols pred):")
print(cm.counts)
print("per-class IoU:", iou_per_class(cm))  # 1/2 and 2/3

# Accumulation is additive: evaluating image by image equals evaluating the
# concatenation.
rng = np.random.default_rng(0)
images = [(rng.integers(0, 3, (5, 5)), rng.integers(0, 3, (5, 5))) for _ in range(4)]
per_image = ConfusionMatrix(3)
for p, g in images:
    per_image = accumulate_cm(p, g, per_image)
concat = accumulate_cm(np.concatenate([p for p, _ in images]),
                       np.concatenate([g for _, g in images]), ConfusionMatrix(3))
print("\nadditivity holds:", bool(np.array_equal(per_image.counts, concat.counts)))

# Mean IoU over class subsets: benchmarks often report means over several
# subsets of the label set; subsets are explicit objects here.
per_class = [94.4, 65.3, 85.9, 39.0, 22.2, 35.4, 39.1, 37.3, 86.7, 42.3, 88.1,
             62.7, 36.2, 87.6, 33.8, 45.0, 0.0, 26.5, 24.2]
print(f"\nmIoU over all 19 classes: {miou(per_class, ClassSet.full(19)):.1f}")
subset_16 = [94.8, 67.2, 81.9, 6.1, 0.1, 29.6, 0.1, 19.7, 82.2, 81.1, 50.2,
             17.0, 84.6, 30.8, 12.4, 25.1]
print(f"mIoU over 16 classes:     {miou(subset_16, ClassSet.full(16)):.1f}")
print(f"mIoU over 13 (drop 3,4,5): "
      f"{miou(subset_16, ClassSet.excluding(16, (3, 4, 5))):.1f}")

# Domain-gap accounting: a target-supervised model bounds what is achievable;
# the fraction of (upper - source-only) recovered by a method after linear
# probing is the "closed" share of the gap.
report = gap_report(upper=68.0, source=39.6, method=59.0)
print(f"\nclosed {report.closed_gap_pct:.1f}% of the domain gap "
      f"(remaining {report.remaining_gap_pct:.1f}%)")
