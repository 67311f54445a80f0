"""Naive per-pixel reference implementations of every loss, used as oracles.

These loop pixel by pixel in plain Python (math.*, no tensor ops) so they stay
independent of the vectorised implementations they check.
"""

from __future__ import annotations

import math

import numpy as np


def softmax_vec(v):
    m = max(v)
    exps = [math.exp(x - m) for x in v]
    total = sum(exps)
    return [e / total for e in exps]


def seg_ce_ref(logits: np.ndarray, onehot: np.ndarray) -> float:
    h, w, k = logits.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            p = softmax_vec([float(x) for x in logits[i, j]])
            for c in range(k):
                if onehot[i, j, c] > 0:
                    total += -float(onehot[i, j, c]) * math.log(p[c])
    return total / (h * w)


def sym_ce_ref(logits, onehot, alpha=1.0, beta=1.0, log_clamp=-4.0) -> float:
    h, w, k = logits.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            p = softmax_vec([float(x) for x in logits[i, j]])
            ce = 0.0
            rce = 0.0
            for c in range(k):
                q = float(onehot[i, j, c])
                if q > 0:
                    ce += -q * math.log(p[c])
                logq = math.log(q) if q >= math.exp(log_clamp) else log_clamp
                rce += -p[c] * logq
            total += alpha * ce + beta * rce
    return total / (h * w)


def metric_ref(a: float, b: float, mode: str) -> float:
    if mode == "lsgan":
        return (a - b) ** 2
    eps = 1e-7
    a = min(max(a, eps), 1.0 - eps)
    return -(b * math.log(a) + (1.0 - b) * math.log(1.0 - a))


def dgan_loss_d_ref(d_fake, d_real, mode="lsgan") -> np.ndarray:
    h, w = d_fake.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = metric_ref(float(d_fake[i, j]), 0.0, mode) + metric_ref(
                float(d_real[i, j]), 1.0, mode
            )
    return out


def dgan_loss_g_ref(d_fake, mode="lsgan") -> np.ndarray:
    h, w = d_fake.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = metric_ref(float(d_fake[i, j]), 1.0, mode)
    return out


def cgan_loss_d_ref(d_fake_cls, y_s, d_real_cls, y_pseudo, mode="lsgan") -> np.ndarray:
    h, w, k = d_fake_cls.shape
    out = np.zeros((h, w, k))
    for i in range(h):
        for j in range(w):
            for c in range(k):
                out[i, j, c] = metric_ref(float(d_fake_cls[i, j, c]), 0.0, mode) * float(
                    y_s[i, j, c]
                ) + metric_ref(float(d_real_cls[i, j, c]), 1.0, mode) * float(
                    y_pseudo[i, j, c]
                )
    return out


def cgan_loss_g_ref(d_fake_cls, y_s, mode="lsgan") -> np.ndarray:
    h, w, k = d_fake_cls.shape
    out = np.zeros((h, w, k))
    for i in range(h):
        for j in range(w):
            for c in range(k):
                out[i, j, c] = metric_ref(float(d_fake_cls[i, j, c]), 1.0, mode) * float(
                    y_s[i, j, c]
                )
    return out


def gan_total_ref(dgan_map, cgan_map, lambda_cgan, k) -> float:
    h, w = dgan_map.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            class_sum = 0.0
            for c in range(k):
                class_sum += float(cgan_map[i, j, c])
            total += float(dgan_map[i, j]) + (lambda_cgan / k) * class_sum
    return total


def identity_loss_ref(gen_out, real) -> float:
    h, w, ch = gen_out.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            for c in range(ch):
                total += abs(float(gen_out[i, j, c]) - float(real[i, j, c]))
    return total


def consistency_loss_ref(teacher_logits, student_logits) -> float:
    h, w, k = teacher_logits.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            t = softmax_vec([float(x) for x in teacher_logits[i, j]])
            s = softmax_vec([float(x) for x in student_logits[i, j]])
            total += sum((t[c] - s[c]) ** 2 for c in range(k))
    return total / (h * w)


def iou_from_masks_ref(pred: np.ndarray, gt: np.ndarray, k: int) -> list[float]:
    """Brute-force set-based IoU: |A & B| / |A | B| over pixel index sets."""
    ious = []
    for c in range(k):
        a = {tuple(p) for p in np.argwhere(pred == c)}
        b = {tuple(p) for p in np.argwhere(gt == c)}
        union = a | b
        if not union:
            ious.append(float("nan"))
        else:
            ious.append(len(a & b) / len(union))
    return ious


def finite_difference_gradient(fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        hi = fn(x)
        flat[idx] = orig - eps
        lo = fn(x)
        flat[idx] = orig
        gflat[idx] = (hi - lo) / (2 * eps)
    return grad
