"""segadapt: unsupervised domain adaptation for semantic segmentation on
procedurally generated toy street scenes.

The pipeline combines a label-consistent image translator trained against a
dual-head discriminator with mean-teacher consistency training, in three
phases: warm-up, translation training, final segmentation training.
"""

from .config import DataConfig, NetConfig, PhaseConfig, RunConfig
from .data import (
    CLASS_NAMES,
    NUM_CLASSES,
    ClassSet,
    Hyper,
    LossReport,
    onehot_decode,
    onehot_encode,
)
from .metrics import (
    ConfusionMatrix,
    GapReport,
    accumulate_cm,
    evaluate_model,
    gap_report,
    iou_per_class,
    linear_probe,
    miou,
)
from .networks import Discriminator, Generator, Segmenter
from .scenes import (
    SOURCE_SPEC,
    TARGET_SPEC,
    DomainSpec,
    PerturbSpec,
    SceneSample,
    make_split,
    perturb,
    sample_scene,
)
from .training import (
    PseudoLabelSet,
    Schedule,
    ToyDataset,
    clip_global_norm,
    ema_update,
    generate_pseudo_labels,
    lambda_fade,
    run_i2i,
    run_segmentation,
    run_warmup,
    translate_dataset,
)

__version__ = "0.1.0"
