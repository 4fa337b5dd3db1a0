"""Adaptive modal fusion distillation on a synthetic multispectral benchmark.

A two-teacher-modality feature distillation stack (global context
extraction, focal masking, spatial/channel attention alignment) with its
own float64 autodiff tape, a toy teacher/student training harness, and the
pedestrian-detection evaluation protocol (log-average miss rate, COCO-style
AP), driven by a batch CLI.
"""

from .backend import BACKEND
from .fusion import DistillMode, DistillPlan, fusion_distill_loss, image_level_fuse
from .mea import FeaturePyramid, GcParams, LossBreakdown, MEAConfig, mea_loss
from .metrics import Detection, EvalReport, evaluate
from .scenes import GtBox, Occlusion, Scene, SceneSpec
from .tensor import AdamW, Tensor, backward, finite_diff_grad, tape
from .toynet import (
    StudentModel,
    SyntheticDataset,
    Teacher,
    TrainConfig,
    run_distillation,
)

__version__ = "0.1.0"
__all__ = [
    "AdamW",
    "BACKEND",
    "Detection",
    "DistillMode",
    "DistillPlan",
    "EvalReport",
    "FeaturePyramid",
    "GcParams",
    "GtBox",
    "LossBreakdown",
    "MEAConfig",
    "Occlusion",
    "Scene",
    "SceneSpec",
    "StudentModel",
    "SyntheticDataset",
    "Teacher",
    "Tensor",
    "TrainConfig",
    "backward",
    "evaluate",
    "finite_diff_grad",
    "fusion_distill_loss",
    "image_level_fuse",
    "mea_loss",
    "run_distillation",
    "tape",
    "__version__",
]
