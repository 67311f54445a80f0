"""Objectives for the translation GAN and the segmentation students.

All functions take channels-last tensors: logits and one-hot masks are
(..., H, W, K), per-pixel GAN maps are (..., H, W). Leading batch dimensions
are averaged; "sum" semantics always refer to the per-image pixel sum.

Two conventions coexist deliberately: the per-pixel losses return maps, the
aggregate helpers (gan_total, disc_total, gen_total, identity_loss) use the
sum-over-pixels form and divide by H*W only in the final totals, so composed
values are invariant to where the normalisation happens.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .errors import ShapeError

REAL_TARGET = 1.0
FAKE_TARGET = 0.0
GAN_MODES = ("lsgan", "sgan")

_SGAN_EPS = 1e-7


def _require_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def gan_metric(pred: torch.Tensor, target: float, mode: str = "lsgan") -> torch.Tensor:
    """Elementwise distance between a discriminator map and a real/fake target.

    "lsgan" is the squared difference on the raw map. "sgan" treats the map as
    a probability (the raw head output passed through a sigmoid upstream) and
    scores it with the binary cross-entropy; both modes reach 0 exactly when
    the map equals the target.
    """
    if mode == "lsgan":
        return (pred - target) ** 2
    if mode == "sgan":
        p = pred.clamp(_SGAN_EPS, 1.0 - _SGAN_EPS)
        return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p))
    raise ValueError(f"unknown gan mode {mode!r}, expected one of {GAN_MODES}")


def seg_ce(logits: torch.Tensor, onehot: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel softmax cross-entropy against a one-hot mask."""
    _require_same_shape(logits, onehot, "seg_ce")
    logp = F.log_softmax(logits, dim=-1)
    return -(onehot * logp).sum(dim=-1).mean()


def sym_ce(
    logits: torch.Tensor,
    onehot: torch.Tensor,
    alpha: float = 1.0,
    beta: float = 1.0,
    log_clamp: float = -4.0,
) -> torch.Tensor:
    """Symmetric cross-entropy: alpha * CE(p, q) + beta * reverse-CE(p, q).

    The reverse term evaluates log(q) on the (possibly zero) label mass, with
    log 0 clamped to `log_clamp`; this keeps the loss finite and makes it
    robust to wrong pseudo-labels.
    """
    if log_clamp >= 0:
        raise ValueError(f"log_clamp must be < 0, got {log_clamp}")
    _require_same_shape(logits, onehot, "sym_ce")
    ce = -(onehot * F.log_softmax(logits, dim=-1)).sum(dim=-1)
    p = F.softmax(logits, dim=-1)
    logq = torch.log(onehot.clamp_min(math.exp(log_clamp)))
    rce = -(p * logq).sum(dim=-1)
    return (alpha * ce + beta * rce).mean()


def total_seg_loss_d(
    ac_fake: torch.Tensor,
    y_s: torch.Tensor,
    ac_real: torch.Tensor,
    y_pseudo: torch.Tensor,
    lambda_pl: float,
    alpha: float = 1.0,
    beta: float = 1.0,
    log_clamp: float = -4.0,
) -> torch.Tensor:
    """Segmentation objective of the AC head: CE on translated-source pixels
    plus lambda_pl times the symmetric CE on pseudo-labelled real pixels."""
    return seg_ce(ac_fake, y_s) + lambda_pl * sym_ce(
        ac_real, y_pseudo, alpha=alpha, beta=beta, log_clamp=log_clamp
    )


def dgan_loss_d(
    d_fake: torch.Tensor, d_real: torch.Tensor, mode: str = "lsgan"
) -> torch.Tensor:
    """Per-pixel domain-map loss for the discriminator: fake to 0, real to 1."""
    _require_same_shape(d_fake, d_real, "dgan_loss_d")
    return gan_metric(d_fake, FAKE_TARGET, mode) + gan_metric(d_real, REAL_TARGET, mode)


def dgan_loss_g(d_fake: torch.Tensor, mode: str = "lsgan") -> torch.Tensor:
    """Per-pixel domain-map loss for the generator: fake pushed toward 1."""
    return gan_metric(d_fake, REAL_TARGET, mode)


def cgan_loss_d(
    d_fake_cls: torch.Tensor,
    y_s: torch.Tensor,
    d_real_cls: torch.Tensor,
    y_pseudo: torch.Tensor,
    mode: str = "lsgan",
) -> torch.Tensor:
    """Class-conditional per-pixel loss for the discriminator.

    Each class map is supervised only where the corresponding one-hot entry is
    1: translated-source pixels count as fake, pseudo-labelled real pixels as
    real. Zero-mask positions contribute exactly 0.
    """
    _require_same_shape(d_fake_cls, y_s, "cgan_loss_d fake")
    _require_same_shape(d_real_cls, y_pseudo, "cgan_loss_d real")
    _require_same_shape(d_fake_cls, d_real_cls, "cgan_loss_d fake/real")
    return gan_metric(d_fake_cls, FAKE_TARGET, mode) * y_s + gan_metric(
        d_real_cls, REAL_TARGET, mode
    ) * y_pseudo


def cgan_loss_g(
    d_fake_cls: torch.Tensor, y_s: torch.Tensor, mode: str = "lsgan"
) -> torch.Tensor:
    """Class-conditional per-pixel loss for the generator on labelled positions."""
    _require_same_shape(d_fake_cls, y_s, "cgan_loss_g")
    return gan_metric(d_fake_cls, REAL_TARGET, mode) * y_s


def gan_total(
    dgan_map: torch.Tensor, cgan_map: torch.Tensor, lambda_cgan: float, k: int
) -> torch.Tensor:
    """Pixel-sum of the domain map plus the class maps scaled by lambda_cgan / k."""
    if cgan_map.shape[:-1] != dgan_map.shape or cgan_map.shape[-1] != k:
        raise ShapeError(
            f"gan_total: expected cgan map {tuple(dgan_map.shape) + (k,)}, "
            f"got {tuple(cgan_map.shape)}"
        )
    per_image = dgan_map.sum(dim=(-2, -1)) + (lambda_cgan / k) * cgan_map.sum(
        dim=(-3, -2, -1)
    )
    return per_image.mean()


def disc_total(seg_term: torch.Tensor, gan_term: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Total discriminator objective: (seg + gan) / (H * W), sum convention."""
    if h <= 0 or w <= 0:
        raise ShapeError(f"invalid spatial size {h}x{w}")
    return (seg_term + gan_term) / float(h * w)


def identity_loss(gen_out: torch.Tensor, real: torch.Tensor) -> torch.Tensor:
    """Pixel-sum of the per-pixel L1 reconstruction error of a real image."""
    _require_same_shape(gen_out, real, "identity_loss")
    return (gen_out - real).abs().sum(dim=(-3, -2, -1)).mean()


def gen_total(
    seg_term: torch.Tensor,
    gan_term: torch.Tensor,
    id_term: torch.Tensor,
    h: int,
    w: int,
) -> torch.Tensor:
    """Total generator objective: (seg + gan + identity) / (H * W)."""
    if h <= 0 or w <= 0:
        raise ShapeError(f"invalid spatial size {h}x{w}")
    return (seg_term + gan_term + id_term) / float(h * w)


def consistency_loss(
    teacher_logits: torch.Tensor, student_logits: torch.Tensor
) -> torch.Tensor:
    """Mean per-pixel squared L2 distance between teacher and student softmax.

    The teacher branch is detached: no gradient ever reaches its parameters.
    Bounded by 2 (disjoint one-hot predictions).
    """
    _require_same_shape(teacher_logits, student_logits, "consistency_loss")
    t = F.softmax(teacher_logits.detach(), dim=-1)
    s = F.softmax(student_logits, dim=-1)
    return (t - s).pow(2).sum(dim=-1).mean()


def student_total(
    sup: torch.Tensor, con: torch.Tensor, lambda_con: float
) -> torch.Tensor:
    """Student objective: supervised term plus lambda_con times consistency."""
    if lambda_con < 0:
        raise ValueError(f"lambda_con must be >= 0, got {lambda_con}")
    return sup + lambda_con * con


def sup_combined(
    logits_src: torch.Tensor, logits_trans: torch.Tensor, y_s: torch.Tensor
) -> torch.Tensor:
    """Supervised segmentation loss on a source image and its translation."""
    return seg_ce(logits_src, y_s) + seg_ce(logits_trans, y_s)
