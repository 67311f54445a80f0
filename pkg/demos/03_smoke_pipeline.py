"""The whole three-phase pipeline at smoke scale, through the library API.

Generates a miniature dataset, trains the consistency warm-up, produces
pseudo-labels, trains the translator against the dual-head discriminator,
translates the source split, trains the final student/teacher pair, and
evaluates everything on the held-out target validation split.

Smoke scale means minutes, not hours; the resulting numbers demonstrate the
plumbing, not the benchmark. For the real configuration run
`segadapt pipeline` or see tests/test_acceptance.py.
"""

import tempfile
import time
from pathlib import Path

import segadapt as sa
from segadapt.config import RunConfig
from segadapt.data import ClassSet
from segadapt.metrics import evaluate_model
from segadapt.training import (
    SplitData,
    ToyDataset,
    generate_pseudo_labels,
    run_i2i,
    run_segmentation,
    run_warmup,
    translate_dataset,
)

t0 = time.time()
work = Path(tempfile.mkdtemp(prefix="segadapt_demo_"))

cfg = RunConfig(name="smoke", seed=0)
cfg.data.dir = str(work / "data")
cfg.data.n_src = cfg.data.n_tgt = 48
cfg.data.n_val_tgt = 16
cfg.warmup.steps = 120
cfg.warmup.con_warmup_steps = 60
cfg.i2i.steps = 150
cfg.i2i.fade_start = 3
cfg.i2i.fade_end = 15
cfg.i2i.trunk_pretrain_steps = 40
cfg.seg.steps = 120
cfg.seg.con_warmup_steps = 60

sa.make_split(work / "data", cfg.data.source_spec, cfg.data.target_spec,
              cfg.data.n_src, cfg.data.n_tgt, cfg.data.n_val_tgt,
              seed=cfg.data.gen_seed, size=cfg.data.size)
dataset = ToyDataset.from_dir(work / "data")
subset = ClassSet.full(5)


def miou_of(model):
    return evaluate_model(model, dataset.target_val, subset).miou * 100


# Phase a: supervised on source + consistency on real target images.
warm = run_warmup(dataset, cfg)
print(f"[{time.time()-t0:5.0f}s] warm-up teacher mIoU {miou_of(warm.teacher):5.1f}")

# The frozen warm-up teacher labels the unlabelled target-train split.
pseudo = generate_pseudo_labels(warm.teacher, dataset.target_train, threshold=0.5)
print(f"         pseudo-label confidence coverage {pseudo.coverage['mean_fraction']:.2f}")

# Phase b: adversarial translation with the class-conditional discriminator.
i2i = run_i2i(dataset, cfg, pseudo)
print(f"[{time.time()-t0:5.0f}s] i2i identity error {i2i.reports[0].id:.2f} -> "
      f"{i2i.reports[-1].id:.2f}")

# Phase c: translate the source split and train the final student/teacher.
manifest = translate_dataset(i2i.generator_ema, dataset.source, work / "translated")
translated = SplitData.from_manifest(manifest)
final = run_segmentation(dataset, cfg, translated=translated)
print(f"[{time.time()-t0:5.0f}s] final teacher mIoU {miou_of(final.teacher):5.1f}")

# Source-only reference for perspective.
import dataclasses

ref_cfg = RunConfig(seed=0)
ref_cfg.data = cfg.data
ref_cfg.seg = dataclasses.replace(cfg.seg, source_fraction=1.0,
                                  use_consistency=False)
baseline = run_segmentation(dataset, ref_cfg)
print(f"[{time.time()-t0:5.0f}s] source-only teacher mIoU {miou_of(baseline.teacher):5.1f}")
print(f"\nartifacts in {work}")
