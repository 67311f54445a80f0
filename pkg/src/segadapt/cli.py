"""Command-line front end: data generation, training phases, evaluation, ablations.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite,
4 numerical training fault, 1 anything else. The run-directory root can be
set with the SEGADAPT_RUN_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import metrics as me
from . import training as tr
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, load_config
from .data import CLASS_NAMES, ClassSet
from .errors import (
    CheckpointError,
    ConfigError,
    PrerequisiteError,
    TrainingFaultError,
)
from .networks import Generator, Segmenter

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_PREREQUISITE = 3
EXIT_NUMERICAL = 4

RUN_ROOT_ENV = "SEGADAPT_RUN_ROOT"

PIPELINE_PHASES = ("warmup", "i2i", "translate", "seg")

ABLATION_VARIANTS = {
    "full": {},
    "no_gseg": {"i2i.use_gseg": "false"},
    "no_cgan": {"i2i.use_cgan": "false"},
    "sgan": {"i2i.gan_mode": "sgan"},
    "online_pl": {"i2i.pseudo_label_source": "online"},
}
COMPONENT_VARIANTS = ("source_only", "ssl", "i2i_sup", "full_pipeline")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg = apply_overrides(cfg, [f"seed={args.seed}"])
    return cfg


def _run_dir(cfg: RunConfig, override: str | None) -> Path:
    if override:
        base = Path(override)
    else:
        root = Path(os.environ.get(RUN_ROOT_ENV, cfg.out_dir))
        base = root / cfg.name / f"seed{cfg.seed}"
    base.mkdir(parents=True, exist_ok=True)
    return base


def _snapshot(cfg: RunConfig, run_dir: Path) -> None:
    cfg.save(run_dir / "config.json")


def _data_dir(cfg: RunConfig) -> Path:
    return Path(cfg.data.dir)


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out) if args.out else _data_dir(cfg)
    from .scenes import make_split

    make_split(
        out,
        cfg.data.source_spec,
        cfg.data.target_spec,
        cfg.data.n_src,
        cfg.data.n_tgt,
        cfg.data.n_val_tgt,
        seed=cfg.data.gen_seed,
        size=cfg.data.size,
    )
    cfg.save(out / "gen_config.json")
    print(f"dataset written to {out}")
    return EXIT_OK


def _load_dataset(cfg: RunConfig) -> tr.ToyDataset:
    return tr.ToyDataset.from_dir(_data_dir(cfg))


def _phase_warmup(cfg: RunConfig, run_dir: Path) -> None:
    dataset = _load_dataset(cfg)
    result = tr.run_warmup(dataset, cfg, out_dir=run_dir)
    pseudo = tr.generate_pseudo_labels(
        result.teacher, dataset.target_train, threshold=cfg.i2i.pl_threshold,
        checkpoint=str(run_dir / "warmup.pt"),
    )
    tr.save_pseudo_labels(pseudo, run_dir / "pseudo")
    print(f"warmup finished: checkpoint {run_dir / 'warmup.pt'}")


def _phase_i2i(cfg: RunConfig, run_dir: Path) -> None:
    dataset = _load_dataset(cfg)
    pseudo = None
    if cfg.i2i.pseudo_label_source == "precomputed":
        pseudo = tr.load_pseudo_labels(run_dir / "pseudo", dataset.target_train)
    tr.run_i2i(dataset, cfg, pseudo, out_dir=run_dir)
    print(f"i2i finished: checkpoint {run_dir / 'i2i.pt'}")


def _load_generator_ema(cfg: RunConfig, run_dir: Path) -> Generator:
    path = run_dir / "i2i.pt"
    if not path.exists():
        raise PrerequisiteError(f"i2i checkpoint missing: {path}; run `run i2i` first")
    gen = tr.build_generator(cfg)
    gen_ema = tr.build_generator(cfg)
    from .networks import Discriminator, DiscriminatorTrunk

    disc = Discriminator(cfg.nets.num_classes, trunk=DiscriminatorTrunk(cfg.nets.disc_width))
    load_checkpoint(path, {"generator": gen, "generator_ema": gen_ema,
                           "discriminator": disc})
    return gen_ema


def _phase_translate(cfg: RunConfig, run_dir: Path) -> None:
    dataset = _load_dataset(cfg)
    gen_ema = _load_generator_ema(cfg, run_dir)
    manifest = tr.translate_dataset(gen_ema, dataset.source, run_dir / "translated")
    print(f"translated manifest: {manifest}")


def _phase_seg(cfg: RunConfig, run_dir: Path) -> None:
    dataset = _load_dataset(cfg)
    translated = None
    if cfg.seg.source_fraction < 1.0:
        manifest = run_dir / "translated" / "translated.txt"
        if not manifest.exists():
            raise PrerequisiteError(
                f"translated manifest missing: {manifest}; run `run translate` first"
            )
        translated = tr.SplitData.from_manifest(manifest)
    tr.run_segmentation(dataset, cfg, translated=translated, out_dir=run_dir)
    print(f"segmentation finished: checkpoint {run_dir / 'segmentation.pt'}")


_PHASE_FNS = {
    "warmup": _phase_warmup,
    "i2i": _phase_i2i,
    "translate": _phase_translate,
    "seg": _phase_seg,
}


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    run_dir = _run_dir(cfg, args.run_dir)
    _snapshot(cfg, run_dir)
    _PHASE_FNS[args.phase](cfg, run_dir)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _resolve_config(args)
    run_dir = _run_dir(cfg, args.run_dir)
    _snapshot(cfg, run_dir)
    if not (_data_dir(cfg) / "dataset.json").exists():
        cmd_gen_data(argparse.Namespace(config=args.config, set=args.set,
                                        seed=args.seed, out=None))
    for phase in PIPELINE_PHASES:
        _PHASE_FNS[phase](cfg, run_dir)
    report = _evaluate_checkpoint(cfg, run_dir / "segmentation.pt", "teacher")
    me.write_report(run_dir / "final_eval.json", report, CLASS_NAMES)
    print(f"pipeline complete; final teacher mIoU {report.miou * 100:.2f}")
    return EXIT_OK


def _evaluate_checkpoint(cfg: RunConfig, ckpt: Path, which: str = "teacher",
                         subset: ClassSet | None = None) -> me.EvalResult:
    if not Path(ckpt).exists():
        raise PrerequisiteError(f"checkpoint missing: {ckpt}")
    dataset = _load_dataset(cfg)
    student = Segmenter(cfg.nets.num_classes, cfg.nets.seg_width)
    teacher = Segmenter(cfg.nets.num_classes, cfg.nets.seg_width)
    load_checkpoint(ckpt, {"student": student, "teacher": teacher})
    model = teacher if which == "teacher" else student
    subset = subset or ClassSet.full(cfg.nets.num_classes)
    return me.evaluate_model(model, dataset.target_val, subset)


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_dataset(cfg)
    student = Segmenter(cfg.nets.num_classes, cfg.nets.seg_width)
    teacher = Segmenter(cfg.nets.num_classes, cfg.nets.seg_width)
    load_checkpoint(Path(args.checkpoint), {"student": student, "teacher": teacher})
    model = teacher if args.which == "teacher" else student
    subset = ClassSet.full(cfg.nets.num_classes)
    if args.subset:
        subset = ClassSet(cfg.nets.num_classes,
                          tuple(int(c) for c in args.subset.split(",")))

    split = dataset.target_val
    gap = None
    full_set = ClassSet.full(cfg.nets.num_classes)
    if args.probe:
        half = len(split) // 2
        probe_split = tr.SplitData(split.images[:half], split.masks[:half],
                                   split.paths[:half], split.seeds[:half],
                                   split.mask_paths[:half])
        eval_split = tr.SplitData(split.images[half:], split.masks[half:],
                                  split.paths[half:], split.seeds[half:],
                                  split.mask_paths[half:])
        probed = me.linear_probe(model, probe_split, probe_steps=args.probe_steps)
        result = me.evaluate_model(probed, eval_split, subset)
        if args.upper is not None and args.source is not None:
            gap = me.gap_report(args.upper, args.source, result.miou * 100.0)
    else:
        result = me.evaluate_model(model, split, subset)

    per_subset = {"all": me.miou(result.per_class_iou, full_set)}
    if args.subset:
        per_subset["requested"] = result.miou
    out = Path(args.report) if args.report else Path(args.checkpoint).with_suffix(".eval.json")
    me.write_report(out, result, CLASS_NAMES, gap=gap, miou_per_subset=per_subset)
    if args.dump_images:
        me.dump_predictions(model, split, args.dump_images)
    print(f"mIoU {result.miou * 100:.2f} -> {out}")
    if gap is not None:
        print(f"closed gap {gap.closed_gap_pct:.1f}%")
    return EXIT_OK


def _variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    if variant in ABLATION_VARIANTS:
        overrides = [f"{k}={v}" for k, v in ABLATION_VARIANTS[variant].items()]
        # Translation ablations train the final model supervised-only.
        overrides.append("seg.use_consistency=false")
        return apply_overrides(cfg, overrides)
    if variant == "source_only":
        return apply_overrides(cfg, ["seg.source_fraction=1.0",
                                     "seg.use_consistency=false"])
    if variant == "ssl":
        return apply_overrides(cfg, ["seg.source_fraction=1.0"])
    if variant == "i2i_sup":
        return apply_overrides(cfg, ["seg.use_consistency=false"])
    if variant == "full_pipeline":
        return cfg
    raise ConfigError(
        f"unknown ablation variant {variant!r}; valid names: "
        f"{sorted(set(ABLATION_VARIANTS) | set(COMPONENT_VARIANTS))}"
    )


def _needs_i2i(variant: str) -> bool:
    return variant in ABLATION_VARIANTS or variant in ("i2i_sup", "full_pipeline")


def cmd_ablate(args) -> int:
    base = _resolve_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        _variant_config(base, v)  # fail fast on unknown names
    run_dir = _run_dir(base, args.run_dir)
    _snapshot(base, run_dir)
    dataset = _load_dataset(base)
    subset = ClassSet.full(base.nets.num_classes)

    warm = None
    pseudo = None
    table: dict[str, float] = {}
    for variant in variants:
        vcfg = _variant_config(base, variant)
        vdir = run_dir / variant
        vdir.mkdir(parents=True, exist_ok=True)
        translated = None
        if _needs_i2i(variant):
            if warm is None:
                warm = tr.run_warmup(dataset, base, out_dir=run_dir)
                pseudo = tr.generate_pseudo_labels(
                    warm.teacher, dataset.target_train, threshold=base.i2i.pl_threshold
                )
            i2i = tr.run_i2i(
                dataset, vcfg,
                pseudo if vcfg.i2i.pseudo_label_source == "precomputed" else None,
                out_dir=vdir,
            )
            manifest = tr.translate_dataset(i2i.generator_ema, dataset.source,
                                            vdir / "translated")
            translated = tr.SplitData.from_manifest(manifest)
        seg = tr.run_segmentation(dataset, vcfg, translated=translated, out_dir=vdir)
        result = me.evaluate_model(seg.teacher, dataset.target_val, subset)
        table[variant] = result.miou * 100.0
        print(f"{variant:>14s}: mIoU {table[variant]:6.2f}")

    (run_dir / "ablation.json").write_text(
        json.dumps({"miou": table}, indent=2, sort_keys=True) + "\n"
    )
    lines = ["variant          mIoU", "-" * 22]
    lines += [f"{name:<14s} {value:6.2f}" for name, value in table.items()]
    (run_dir / "ablation.txt").write_text("\n".join(lines) + "\n")
    print(f"ablation table -> {run_dir / 'ablation.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segadapt",
        description="Toy-scale unsupervised domain adaptation for segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config", default=None)
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY.PATH=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--run-dir", default=None)

    p = sub.add_parser("gen-data", help="generate the two-domain toy dataset")
    common(p)
    p.add_argument("--out", default=None, help="dataset directory override")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("run", help="run one training phase")
    common(p)
    p.add_argument("phase", choices=PIPELINE_PHASES)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("pipeline", help="run all phases end to end")
    common(p)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("eval", help="evaluate a segmentation checkpoint")
    common(p)
    p.add_argument("checkpoint")
    p.add_argument("--which", choices=("teacher", "student"), default="teacher")
    p.add_argument("--subset", default=None, help="comma-separated class ids")
    p.add_argument("--report", default=None)
    p.add_argument("--dump-images", default=None)
    p.add_argument("--probe", action="store_true",
                   help="linear-probe the model on half of target-val first")
    p.add_argument("--probe-steps", type=int, default=300)
    p.add_argument("--upper", type=float, default=None,
                   help="upper-bound mIoU reference for the gap report")
    p.add_argument("--source", type=float, default=None,
                   help="source-only mIoU reference for the gap report")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run ablation variants and tabulate mIoU")
    common(p)
    p.add_argument("--variants", required=True,
                   help="comma-separated variant names")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PrerequisiteError, CheckpointError) as exc:
        print(f"prerequisite error: {exc}", file=sys.stderr)
        return EXIT_PREREQUISITE
    except TrainingFaultError as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
