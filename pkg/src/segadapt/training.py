"""Three-phase training: consistency warm-up, adversarial translation, final
segmentation on mixed real-source / translated data.

All randomness is derived functionally from (config seed, phase salt, step),
so every phase is bit-reproducible on a fixed platform and conditional code
paths never desynchronise the streams.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import losses
from .checkpoint import save_checkpoint
from .config import PhaseConfig, RunConfig
from .data import (
    LossReport,
    onehot_encode,
    require_matching_schema,
    save_image,
    save_mask,
    uint8_to_image,
)
from .errors import PrerequisiteError, ShapeError, TrainingFaultError
from .networks import (
    Discriminator,
    DiscriminatorTrunk,
    Generator,
    Segmenter,
    to_nchw,
    to_nhwc,
)
from .scenes import ManifestEntry, PerturbSpec, load_manifest, perturb
from PIL import Image as PILImage

# Fixed salts for the per-purpose random streams.
_SALT_WARMUP, _SALT_I2I, _SALT_SEG, _SALT_TRUNK = 11, 12, 13, 14
_SALT_INIT, _SALT_STEP, _SALT_PERTURB, _SALT_GNOISE = 1, 2, 3, 4


def child_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Pure schedule / parameter-space operations


@dataclass(frozen=True)
class Schedule:
    """Linear fade window for the pseudo-label and class-map loss weights."""

    fade_start: int
    fade_end: int
    lambda_max: float = 0.3
    con_warmup_steps: int = 0

    def __post_init__(self) -> None:
        if self.fade_start > self.fade_end:
            raise ValueError("fade_start must be <= fade_end")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be >= 0")


def lambda_fade(step: int, schedule: Schedule) -> float:
    """0 before fade_start, lambda_max after fade_end, linear in between."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step >= schedule.fade_end:
        return schedule.lambda_max
    if step <= schedule.fade_start:
        return 0.0
    span = schedule.fade_end - schedule.fade_start
    return schedule.lambda_max * (step - schedule.fade_start) / span


def ema_update(
    teacher: Mapping[str, np.ndarray | torch.Tensor],
    student: Mapping[str, np.ndarray | torch.Tensor],
    decay: float,
) -> dict:
    """Elementwise blend decay * teacher + (1 - decay) * student, schema-checked."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    require_matching_schema(teacher, student)
    return {
        name: teacher[name] * decay + student[name] * (1.0 - decay)
        for name in teacher
    }


def clip_global_norm(
    grads: Mapping[str, np.ndarray | torch.Tensor], max_norm: float
) -> dict:
    """Scale the whole gradient collection so its global L2 norm is <= max_norm."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be > 0, got {max_norm}")
    total_sq = 0.0
    for g in grads.values():
        total_sq += float((g * g).sum())
    if not math.isfinite(total_sq):
        raise TrainingFaultError("non-finite gradients in clip_global_norm")
    total = math.sqrt(total_sq)
    if total <= max_norm:
        return dict(grads)
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}


@torch.no_grad()
def ema_update_module_(teacher: torch.nn.Module, student: torch.nn.Module,
                       decay: float) -> None:
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    for t, s in zip(teacher.parameters(), student.parameters()):
        t.mul_(decay).add_(s, alpha=1.0 - decay)


def clip_module_gradients_(params: Sequence[torch.nn.Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total_sq = sum(float((g * g).sum()) for g in grads)
    if not math.isfinite(total_sq):
        raise TrainingFaultError("non-finite gradients")
    total = math.sqrt(total_sq)
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g.mul_(scale)
    return total


# ---------------------------------------------------------------------------
# Dataset access


@dataclass
class SplitData:
    """One split held in memory: uint8 images plus optional int64 masks."""

    images: np.ndarray
    masks: np.ndarray | None
    paths: list[str]
    seeds: list[int]
    mask_paths: list[str | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def size(self) -> int:
        return self.images.shape[1]

    def image_float(self, idx: int) -> np.ndarray:
        return uint8_to_image(self.images[idx])

    @classmethod
    def from_entries(cls, root: Path, entries: list[ManifestEntry]) -> "SplitData":
        images, masks, paths, seeds, mask_paths = [], [], [], [], []
        has_masks = all(e.mask_path for e in entries)
        for e in entries:
            with PILImage.open(root / e.image_path) as im:
                images.append(np.asarray(im.convert("RGB"), dtype=np.uint8))
            if has_masks:
                with PILImage.open(root / e.mask_path) as im:
                    masks.append(np.asarray(im.convert("L"), dtype=np.uint8).astype(np.int64))
            paths.append(e.image_path)
            seeds.append(e.seed)
            mask_paths.append(str(root / e.mask_path) if e.mask_path else None)
        return cls(
            images=np.stack(images),
            masks=np.stack(masks) if has_masks else None,
            paths=paths,
            seeds=seeds,
            mask_paths=mask_paths,
        )

    @classmethod
    def from_manifest(cls, manifest_path: str | Path) -> "SplitData":
        manifest_path = Path(manifest_path)
        if not manifest_path.exists():
            raise PrerequisiteError(f"manifest not found: {manifest_path}")
        return cls.from_entries(manifest_path.parent, load_manifest(manifest_path))


@dataclass
class ToyDataset:
    source: SplitData
    target_train: SplitData
    target_val: SplitData

    @classmethod
    def from_dir(cls, data_dir: str | Path) -> "ToyDataset":
        root = Path(data_dir)
        for name in ("source_train", "target_train", "target_val"):
            if not (root / f"{name}.txt").exists():
                raise PrerequisiteError(
                    f"dataset manifest {name}.txt missing under {root}; "
                    "run data generation first"
                )
        return cls(
            source=SplitData.from_manifest(root / "source_train.txt"),
            target_train=SplitData.from_manifest(root / "target_train.txt"),
            target_val=SplitData.from_manifest(root / "target_val.txt"),
        )


def sample_crops(
    split: SplitData,
    rng: np.random.Generator,
    batch: int,
    crop: int,
    indices: np.ndarray | None = None,
):
    """Random image crops (float32) with aligned mask crops when available."""
    if crop > split.size:
        raise ShapeError(f"crop {crop} exceeds stored size {split.size}")
    if indices is None:
        indices = rng.integers(0, len(split), size=batch)
    offs = rng.integers(0, split.size - crop + 1, size=(len(indices), 2))
    imgs = np.stack([
        uint8_to_image(split.images[i][r:r + crop, c:c + crop])
        for i, (r, c) in zip(indices, offs)
    ])
    masks = None
    if split.masks is not None:
        masks = np.stack([
            split.masks[i][r:r + crop, c:c + crop]
            for i, (r, c) in zip(indices, offs)
        ])
    return imgs, masks, indices, offs


# ---------------------------------------------------------------------------
# Logging


class MetricsLog:
    """Collects per-interval records; optionally mirrors them to a JSONL file."""

    def __init__(self, path: Path | None = None):
        self.rows: list[dict] = []
        self._path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("")

    def append(self, phase: str, report: LossReport, lambdas: dict[str, float]) -> None:
        row = {"phase": phase, **report.to_dict(), **lambdas}
        self.rows.append(row)
        if self._path is not None:
            with self._path.open("a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _ch_last(t: torch.Tensor) -> torch.Tensor:
    return t.permute(0, 2, 3, 1)


def _decayed_lr(base: float, step: int, decay_per_1k: float) -> float:
    return base * decay_per_1k ** (step / 1000.0)


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _perturb_batch(imgs: np.ndarray, spec: PerturbSpec, seeds: list[int]) -> np.ndarray:
    return np.stack([perturb(img, spec, s) for img, s in zip(imgs, seeds)])


# ---------------------------------------------------------------------------
# Phase: warm-up (and shared student/teacher loop used by the final phase)


@dataclass
class SegPhaseResult:
    student: Segmenter
    teacher: Segmenter
    reports: list[LossReport]
    rows: list[dict] = field(default_factory=list)


def _new_segmenter_pair(cfg: RunConfig, salt: int) -> tuple[Segmenter, Segmenter]:
    torch.manual_seed(child_seed(cfg.seed, salt, _SALT_INIT))
    student = Segmenter(cfg.nets.num_classes, cfg.nets.seg_width)
    teacher = copy.deepcopy(student)
    teacher.requires_grad_(False)
    return student, teacher


def _student_teacher_loop(
    dataset: ToyDataset,
    cfg: RunConfig,
    pc: PhaseConfig,
    salt: int,
    phase_name: str,
    translated: SplitData | None,
    out_dir: Path | None,
    log_every: int,
) -> SegPhaseResult:
    student, teacher = _new_segmenter_pair(cfg, salt)
    opt = torch.optim.Adam(student.parameters(), lr=pc.lr)
    k = cfg.nets.num_classes
    crop = cfg.data.crop
    log = MetricsLog(out_dir / f"{phase_name}_metrics.jsonl" if out_dir else None)
    reports: list[LossReport] = []

    uses_translated = translated is not None and pc.source_fraction < 1.0

    for step in range(pc.steps):
        rng = np.random.default_rng(child_seed(cfg.seed, salt, _SALT_STEP, step))
        _set_lr(opt, _decayed_lr(pc.lr, step, pc.lr_decay_per_1k))

        n_src = round(pc.batch_size * pc.source_fraction) if uses_translated else pc.batch_size
        n_tr = pc.batch_size - n_src if uses_translated else 0
        if uses_translated and n_src == n_tr:
            # Paired composition: each source crop and its translation share
            # the index, the crop window, and the label.
            imgs_s, masks_s, idx, offs = sample_crops(dataset.source, rng, n_src, crop)
            imgs_tr = np.stack([
                uint8_to_image(translated.images[i][r:r + crop, c:c + crop])
                for i, (r, c) in zip(idx, offs)
            ])
            y = to_nchw(np.stack([onehot_encode(m, k) for m in masks_s]))
            logits_src = student(to_nchw(imgs_s))
            logits_tr = student(to_nchw(imgs_tr))
            sup = losses.sup_combined(
                _ch_last(logits_src), _ch_last(logits_tr), _ch_last(y)
            )
        else:
            imgs_s, masks_s, _, _ = sample_crops(dataset.source, rng, n_src, crop)
            y_s = to_nchw(np.stack([onehot_encode(m, k) for m in masks_s]))
            sup = losses.seg_ce(_ch_last(student(to_nchw(imgs_s))), _ch_last(y_s))
            if n_tr > 0:
                imgs_tr, masks_tr, _, _ = sample_crops(translated, rng, n_tr, crop)
                y_tr = to_nchw(np.stack([onehot_encode(m, k) for m in masks_tr]))
                sup = sup + losses.seg_ce(
                    _ch_last(student(to_nchw(imgs_tr))), _ch_last(y_tr)
                )

        lam_con = 0.0
        if pc.use_consistency and step >= pc.con_warmup_steps:
            lam_con = pc.lambda_con
        if lam_con > 0.0:
            imgs_t, _, idx_t, _ = sample_crops(dataset.target_train, rng,
                                               pc.batch_size, crop)
            seeds = [child_seed(cfg.seed, salt, _SALT_PERTURB, step, j)
                     for j in range(len(imgs_t))]
            perturbed = _perturb_batch(imgs_t, cfg.data.perturb, seeds)
            with torch.no_grad():
                t_logits = teacher(to_nchw(imgs_t))
            s_logits = student(to_nchw(perturbed))
            con = losses.consistency_loss(_ch_last(t_logits), _ch_last(s_logits))
        else:
            con = torch.zeros(())

        total = losses.student_total(sup, con, lam_con)
        report = LossReport(
            step=step, seg_src=sup.item(), con=con.item(), total_fs=total.item()
        )
        report.require_finite()

        opt.zero_grad()
        total.backward()
        clip_module_gradients_(list(student.parameters()), pc.clip_norm)
        opt.step()
        ema_update_module_(teacher, student, pc.ema_decay)

        if step % log_every == 0 or step == pc.steps - 1:
            reports.append(report)
            log.append(phase_name, report, {
                "lambda_pl": 0.0, "lambda_cgan": 0.0, "lambda_con": lam_con,
            })

    if out_dir is not None:
        save_checkpoint(out_dir / f"{phase_name}.pt",
                        {"student": student, "teacher": teacher},
                        extra={"phase": phase_name, "seed": cfg.seed})
    return SegPhaseResult(student, teacher, reports, log.rows)


def run_warmup(dataset: ToyDataset, cfg: RunConfig,
               out_dir: str | Path | None = None,
               log_every: int = 10) -> SegPhaseResult:
    """Train the initial student/teacher pair without translated images."""
    out = Path(out_dir) if out_dir else None
    return _student_teacher_loop(
        dataset, cfg, cfg.warmup, _SALT_WARMUP, "warmup",
        translated=None, out_dir=out, log_every=log_every,
    )


def run_segmentation(dataset: ToyDataset, cfg: RunConfig,
                     translated: SplitData | None = None,
                     out_dir: str | Path | None = None,
                     log_every: int = 10) -> SegPhaseResult:
    """Final phase: supervised on source + translated crops, consistency on
    real target images; the teacher is the reported model."""
    if cfg.seg.source_fraction < 1.0 and translated is None:
        raise PrerequisiteError(
            "segmentation phase with source_fraction < 1 needs a translated split"
        )
    out = Path(out_dir) if out_dir else None
    return _student_teacher_loop(
        dataset, cfg, cfg.seg, _SALT_SEG, "segmentation",
        translated=translated, out_dir=out, log_every=log_every,
    )


# ---------------------------------------------------------------------------
# Pseudo-labels


@dataclass
class PseudoLabelSet:
    """Frozen-teacher predictions for the unlabelled target-train split.

    `checkpoint` names the teacher checkpoint the set regenerates from.
    """

    masks: np.ndarray  # (N, H, W) int64, aligned with the split order
    paths: list[str]
    threshold: float
    coverage: dict
    checkpoint: str | None = None

    def crop(self, idx: np.ndarray, offs: np.ndarray, crop: int) -> np.ndarray:
        return np.stack([
            self.masks[i][r:r + crop, c:c + crop] for i, (r, c) in zip(idx, offs)
        ])


def generate_pseudo_labels(teacher, split: SplitData, threshold: float = 0.5,
                           batch: int = 16,
                           checkpoint: str | None = None) -> PseudoLabelSet:
    """Per-pixel argmax of the teacher softmax on every target-train image.

    Low-confidence pixels keep the argmax label but are counted in the
    coverage report, which records the per-image fraction of pixels whose
    max softmax probability clears the threshold.
    """
    images = uint8_to_image(split.images)
    logits = teacher.predict_logits(images, batch=batch)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    masks = probs.argmax(axis=-1).astype(np.int64)
    max_prob = probs.max(axis=-1)
    per_image = (max_prob >= threshold).mean(axis=(1, 2))
    coverage = {
        "per_image_fraction": [float(v) for v in per_image],
        "mean_fraction": float(per_image.mean()),
        "mean_max_prob": float(max_prob.mean()),
    }
    return PseudoLabelSet(masks=masks, paths=list(split.paths),
                          threshold=threshold, coverage=coverage,
                          checkpoint=checkpoint)


def save_pseudo_labels(pl: PseudoLabelSet, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for path, mask in zip(pl.paths, pl.masks):
        save_mask(out / "masks" / Path(path).name, mask, k=256)
    meta = {"threshold": pl.threshold, "coverage": pl.coverage,
            "paths": pl.paths, "checkpoint": pl.checkpoint}
    (out / "pseudo_labels.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_pseudo_labels(in_dir: str | Path, split: SplitData) -> PseudoLabelSet:
    root = Path(in_dir)
    meta_path = root / "pseudo_labels.json"
    if not meta_path.exists():
        raise PrerequisiteError(f"pseudo labels missing under {root}")
    meta = json.loads(meta_path.read_text())
    masks = []
    for path in split.paths:
        mask_path = root / "masks" / Path(path).name
        if not mask_path.exists():
            raise PrerequisiteError(f"pseudo label missing for {path}")
        with PILImage.open(mask_path) as im:
            masks.append(np.asarray(im.convert("L"), dtype=np.uint8).astype(np.int64))
    return PseudoLabelSet(masks=np.stack(masks), paths=list(split.paths),
                          threshold=float(meta["threshold"]),
                          coverage=meta["coverage"],
                          checkpoint=meta.get("checkpoint"))


# ---------------------------------------------------------------------------
# Phase: adversarial translation


def pretrain_trunk(trunk: DiscriminatorTrunk, source: SplitData, *, steps: int,
                   lr: float, seed: int, crop: int, batch: int,
                   num_classes: int) -> None:
    """Briefly fit the trunk on source segmentation through a throwaway head."""
    head = torch.nn.Conv2d(trunk.width, num_classes, 1)
    opt = torch.optim.Adam(list(trunk.parameters()) + list(head.parameters()), lr=lr)
    for step in range(steps):
        rng = np.random.default_rng(child_seed(seed, _SALT_TRUNK, step))
        imgs, masks, _, _ = sample_crops(source, rng, batch, crop)
        y = to_nchw(np.stack([onehot_encode(m, num_classes) for m in masks]))
        logits = F.interpolate(head(trunk(to_nchw(imgs))), size=(crop, crop),
                               mode="bilinear", align_corners=False)
        loss = losses.seg_ce(_ch_last(logits), _ch_last(y))
        opt.zero_grad()
        loss.backward()
        opt.step()


@dataclass
class I2IResult:
    generator: Generator
    generator_ema: Generator
    discriminator: Discriminator
    reports: list[LossReport]
    rows: list[dict] = field(default_factory=list)


def build_generator(cfg: RunConfig) -> Generator:
    n = cfg.nets
    return Generator(base_width=n.gen_base_width, style_dim=n.style_dim,
                     use_pixelnorm=n.use_pixelnorm, use_adain=n.use_adain,
                     use_noise=n.use_noise, equalized=n.equalized)


def run_i2i(dataset: ToyDataset, cfg: RunConfig,
            pseudo: PseudoLabelSet | None = None,
            out_dir: str | Path | None = None,
            log_every: int = 10) -> I2IResult:
    """Alternating discriminator/generator training of the translator.

    Per iteration both objectives are evaluated on the same batch at the
    current weights (so the logged report decomposes exactly), then the
    discriminator update is applied first, the generator update second.
    """
    pc = cfg.i2i
    if pc.pseudo_label_source == "precomputed" and pseudo is None:
        raise PrerequisiteError(
            "i2i phase with precomputed pseudo-labels needs a warm-up "
            "pseudo-label set; run the warm-up phase first"
        )
    out = Path(out_dir) if out_dir else None
    k = cfg.nets.num_classes
    crop = cfg.data.crop
    hw = crop * crop
    sgan = pc.gan_mode == "sgan"

    torch.manual_seed(child_seed(cfg.seed, _SALT_I2I, _SALT_INIT))
    gen = build_generator(cfg)
    trunk = DiscriminatorTrunk(cfg.nets.disc_width)
    if pc.trunk_init == "pretrained":
        pretrain_trunk(trunk, dataset.source, steps=pc.trunk_pretrain_steps,
                       lr=pc.trunk_pretrain_lr,
                       seed=child_seed(cfg.seed, _SALT_I2I, _SALT_TRUNK),
                       crop=crop, batch=pc.batch_size, num_classes=k)
    disc = Discriminator(k, trunk=trunk)
    opt_g = torch.optim.Adam(gen.parameters(), lr=pc.lr, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(list(disc.trainable_parameters()), lr=pc.lr,
                             betas=(0.5, 0.999))
    gen_ema_state = {name: p.detach().clone() for name, p in gen.state_dict().items()}
    schedule = Schedule(pc.fade_start, pc.fade_end, pc.lambda_max)

    log = MetricsLog(out / "i2i_metrics.jsonl" if out else None)
    reports: list[LossReport] = []
    last_good: dict | None = None

    for step in range(pc.steps):
        rng = np.random.default_rng(child_seed(cfg.seed, _SALT_I2I, _SALT_STEP, step))
        if pc.pseudo_label_source == "precomputed":
            lam = pc.lambda_max
        else:
            lam = lambda_fade(step, schedule)
        lam_pl = lam
        lam_cgan = lam if pc.use_cgan else 0.0

        imgs_s, masks_s, _, _ = sample_crops(dataset.source, rng, pc.batch_size, crop)
        imgs_t, _, idx_t, offs_t = sample_crops(dataset.target_train, rng,
                                                pc.batch_size, crop)
        x_s = to_nchw(imgs_s)
        x_t = to_nchw(imgs_t)
        y_s = torch.as_tensor(np.stack([onehot_encode(m, k) for m in masks_s]))

        fake = gen(x_s, noise_seed=child_seed(cfg.seed, _SALT_I2I, _SALT_GNOISE, step))
        gan_f_g, ac_f_g = disc(fake)
        gan_f_d, ac_f_d = disc(fake.detach())
        gan_r, ac_r = disc(x_t)

        if pc.pseudo_label_source == "precomputed":
            pl_masks = pseudo.crop(idx_t, offs_t, crop)
        else:
            pl_masks = to_nhwc(ac_r.detach()).argmax(axis=-1)
        y_pl = torch.as_tensor(np.stack([onehot_encode(m, k) for m in pl_masks]))

        def _maps(gan_out: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
            m = torch.sigmoid(gan_out) if sgan else gan_out
            return m[:, 0], _ch_last(m[:, 1:])

        d0_f_d, dc_f_d = _maps(gan_f_d)
        d0_f_g, dc_f_g = _maps(gan_f_g)
        d0_r, dc_r = _maps(gan_r)

        seg_fake_d = losses.seg_ce(_ch_last(ac_f_d), y_s)
        seg_pl_v = losses.sym_ce(_ch_last(ac_r), y_pl, alpha=pc.sym_alpha,
                                 beta=pc.sym_beta, log_clamp=pc.sym_log_clamp)
        l_d_seg = seg_fake_d + lam_pl * seg_pl_v
        dmap_d = losses.dgan_loss_d(d0_f_d, d0_r, mode=pc.gan_mode)
        cmap_d = losses.cgan_loss_d(dc_f_d, y_s, dc_r, y_pl, mode=pc.gan_mode)
        l_d_gan = losses.gan_total(dmap_d, cmap_d, lam_cgan, k)
        l_d = losses.disc_total(l_d_seg * hw, l_d_gan, crop, crop)

        seg_fake_g = losses.seg_ce(_ch_last(ac_f_g), y_s)
        dmap_g = losses.dgan_loss_g(d0_f_g, mode=pc.gan_mode)
        cmap_g = losses.cgan_loss_g(dc_f_g, y_s, mode=pc.gan_mode)
        l_g_gan = losses.gan_total(dmap_g, cmap_g, lam_cgan, k)
        gx_t = gen(x_t, noise_seed=child_seed(cfg.seed, _SALT_I2I, _SALT_GNOISE,
                                              step, 1))
        l_id = losses.identity_loss(_ch_last(gx_t), _ch_last(x_t))
        seg_term_g = seg_fake_g * hw if pc.use_gseg else torch.zeros(())
        l_g = losses.gen_total(seg_term_g, l_g_gan, l_id, crop, crop)

        report = LossReport(
            step=step,
            seg_src=seg_fake_d.item(),
            seg_pl=seg_pl_v.item(),
            dgan_d=dmap_d.mean().item(),
            dgan_g=dmap_g.mean().item(),
            cgan_d=cmap_d.sum(dim=-1).mean().item() / k,
            cgan_g=cmap_g.sum(dim=-1).mean().item() / k,
            id=l_id.item() / hw,
            total_d=l_d.item(),
            total_g=l_g.item(),
        )
        try:
            report.require_finite()
            l_g.backward()
            opt_d.zero_grad()  # drop gradients the generator pass sent into D
            l_d.backward()
            clip_module_gradients_(list(disc.trainable_parameters()), pc.clip_norm)
            clip_module_gradients_(list(gen.parameters()), pc.clip_norm)
        except TrainingFaultError as exc:
            if out is not None and last_good is not None:
                fail_path = out / "i2i_last_good.pt"
                gen.load_state_dict(last_good["generator"])
                disc.load_state_dict(last_good["discriminator"])
                save_checkpoint(fail_path, {"generator": gen, "discriminator": disc},
                                extra={"failed_step": step})
                raise TrainingFaultError(
                    f"{exc}; last good checkpoint written to {fail_path}"
                ) from exc
            raise
        opt_d.step()
        opt_g.step()
        opt_g.zero_grad()
        opt_d.zero_grad()
        for name, p in gen.state_dict().items():
            gen_ema_state[name].mul_(pc.ema_decay).add_(p, alpha=1.0 - pc.ema_decay)

        if step % log_every == 0 or step == pc.steps - 1:
            reports.append(report)
            log.append("i2i", report, {
                "lambda_pl": lam_pl, "lambda_cgan": lam_cgan, "lambda_con": 0.0,
            })
            last_good = {
                "generator": copy.deepcopy(gen.state_dict()),
                "discriminator": copy.deepcopy(disc.state_dict()),
            }

    gen_ema = build_generator(cfg)
    gen_ema.load_state_dict(gen_ema_state)
    if out is not None:
        save_checkpoint(out / "i2i.pt", {
            "generator": gen, "generator_ema": gen_ema, "discriminator": disc,
        }, extra={"phase": "i2i", "seed": cfg.seed})
    return I2IResult(gen, gen_ema, disc, reports, log.rows)


def translate_dataset(generator: Generator, source: SplitData,
                      out_dir: str | Path, batch: int = 8) -> Path:
    """Translate every source image at full resolution and pair it with the
    original source mask; writes a manifest next to the translated images."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    generator.eval()
    entries = []
    with torch.no_grad():
        for start in range(0, len(source), batch):
            imgs = uint8_to_image(source.images[start:start + batch])
            fake = to_nhwc(generator(to_nchw(imgs), noise_seed=None))
            for j, img in enumerate(fake):
                i = start + j
                stem = Path(source.paths[i]).stem
                rel = f"images/{stem}.png"
                save_image(out / rel, np.clip(img, -1.0, 1.0))
                if source.mask_paths[i] is None:
                    raise PrerequisiteError(
                        f"source entry {source.paths[i]} has no mask to pair with"
                    )
                mask_rel = os.path.relpath(source.mask_paths[i], out)
                entries.append(
                    ManifestEntry(rel, mask_rel, "translated", source.seeds[i])
                )
    manifest = out / "translated.txt"
    with manifest.open("w") as fh:
        for e in entries:
            fh.write(f"{e.image_path}\t{e.mask_path}\t{e.domain}\t{e.seed}\n")
    return manifest
