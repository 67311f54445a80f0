"""Run configuration: one JSON-serialisable tree covering data, nets and phases.

Every training constant is a named key so a persisted config fully determines
a run. `apply_overrides` implements dotted-path overrides for the CLI.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .scenes import SOURCE_SPEC, TARGET_SPEC, DomainSpec, PerturbSpec

PHASES = ("warmup", "i2i", "segmentation")
PSEUDO_SOURCES = ("precomputed", "online")
TRUNK_INITS = ("pretrained", "random")


@dataclass
class PhaseConfig:
    """Settings for one training phase; unused knobs are ignored by the others.

    `lr_decay_per_1k` multiplies the learning rate by that factor every 1000
    steps (1.0 keeps it constant, as used for the translation phase).
    """

    phase: str
    steps: int
    batch_size: int = 8
    lr: float = 1e-3
    lr_decay_per_1k: float = 1.0
    clip_norm: float = 5.0
    ema_decay: float = 0.999
    # warmup / segmentation
    lambda_con: float = 1.0
    con_warmup_steps: int = 0
    use_consistency: bool = True
    source_fraction: float = 0.5
    # i2i
    pseudo_label_source: str = "precomputed"
    gan_mode: str = "lsgan"
    use_gseg: bool = True
    use_cgan: bool = True
    lambda_max: float = 0.3
    fade_start: int = 0
    fade_end: int = 0
    pl_threshold: float = 0.5
    trunk_init: str = "pretrained"
    trunk_pretrain_steps: int = 200
    trunk_pretrain_lr: float = 2e-3
    sym_alpha: float = 1.0
    sym_beta: float = 1.0
    sym_log_clamp: float = -4.0

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError("ema_decay must lie in [0, 1]")
        if not 0.0 <= self.source_fraction <= 1.0:
            raise ConfigError("source_fraction must lie in [0, 1]")
        if self.pseudo_label_source not in PSEUDO_SOURCES:
            raise ConfigError(
                f"pseudo_label_source must be one of {PSEUDO_SOURCES}, "
                f"got {self.pseudo_label_source!r}"
            )
        if self.trunk_init not in TRUNK_INITS:
            raise ConfigError(f"trunk_init must be one of {TRUNK_INITS}")
        if self.fade_start > self.fade_end:
            raise ConfigError("fade_start must be <= fade_end")
        if self.lambda_max < 0 or self.lambda_con < 0:
            raise ConfigError("loss weights must be >= 0")


@dataclass
class NetConfig:
    gen_base_width: int = 24
    style_dim: int = 64
    use_pixelnorm: bool = True
    use_adain: bool = True
    use_noise: bool = True
    equalized: bool = True
    disc_width: int = 48
    seg_width: int = 64
    num_classes: int = 5


@dataclass
class DataConfig:
    dir: str = "data/toy"
    size: int = 96
    crop: int = 64
    n_src: int = 300
    n_tgt: int = 300
    n_val_tgt: int = 100
    gen_seed: int = 90000
    source_spec: DomainSpec = field(default_factory=lambda: SOURCE_SPEC)
    target_spec: DomainSpec = field(default_factory=lambda: TARGET_SPEC)
    perturb: PerturbSpec = field(default_factory=PerturbSpec)

    def __post_init__(self) -> None:
        if self.crop > self.size:
            raise ConfigError("crop must be <= generated size")
        if self.size % 8 != 0 or self.crop % 8 != 0:
            raise ConfigError("size and crop must be divisible by 8")


@dataclass
class RunConfig:
    name: str = "default"
    seed: int = 0
    out_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    nets: NetConfig = field(default_factory=NetConfig)
    # The EMA horizon and the consistency delay are coupled: the teacher must
    # have converged to the supervised student (decay ** con_warmup_steps
    # small) before the consistency term switches on, otherwise it anchors
    # the student to the random initialisation.
    warmup: PhaseConfig = field(default_factory=lambda: PhaseConfig(
        phase="warmup", steps=800, lr=1.5e-3, lr_decay_per_1k=0.97,
        ema_decay=0.99, lambda_con=0.3, con_warmup_steps=300,
    ))
    i2i: PhaseConfig = field(default_factory=lambda: PhaseConfig(
        phase="i2i", steps=1000, batch_size=6, lr=2e-4, ema_decay=0.997,
        lambda_max=0.3, fade_start=20, fade_end=100,
        pseudo_label_source="precomputed",
    ))
    seg: PhaseConfig = field(default_factory=lambda: PhaseConfig(
        phase="segmentation", steps=800, lr=1.5e-3, lr_decay_per_1k=0.97,
        ema_decay=0.99, lambda_con=0.3, con_warmup_steps=300,
    ))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def _tupled(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, payload: dict, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"expected an object at '{path}', got {type(payload).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key '{path}.{sorted(unknown)[0]}'")
    kwargs = {}
    nested = {
        "data": DataConfig, "nets": NetConfig, "warmup": PhaseConfig,
        "i2i": PhaseConfig, "seg": PhaseConfig, "source_spec": DomainSpec,
        "target_spec": DomainSpec, "perturb": PerturbSpec,
    }
    for name, value in payload.items():
        if name in nested and isinstance(value, dict):
            kwargs[name] = _build(nested[name], value, f"{path}.{name}")
        else:
            kwargs[name] = _tupled(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value under '{path}': {exc}") from exc


def config_from_dict(payload: dict) -> RunConfig:
    return _build(RunConfig, payload, "config")


def load_config(path: str | Path) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return config_from_dict(payload)


def _coerce(raw: str, like: Any, key: str) -> Any:
    if isinstance(like, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean for '{key}': {raw!r}")
    try:
        if isinstance(like, int) and not isinstance(like, bool):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse value for '{key}': {raw!r}") from exc
    if isinstance(like, (list, tuple)):
        return json.loads(raw)
    return raw


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply `a.b.c=value` overrides and rebuild the validated config."""
    payload = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.split(".")
        node = payload
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key '{key}'")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config key '{key}'")
        node[leaf] = _coerce(raw, node[leaf], key)
    return config_from_dict(payload)
