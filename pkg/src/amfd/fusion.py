"""Distillation architecture wiring and the student's image-level fusion.

Three plan modes:

* ``fusion`` - the student's fused pyramid imitates both teacher modal
  pyramids at once, through two independent MEA instances;
* ``traditional`` - the student imitates the teacher's (stub) fused
  pyramid through a single MEA instance;
* ``none`` - no distillation, detection loss only.

The total objective is always ``original + mea_total``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NonFiniteValue, ShapeMismatch, WrongMode
from .mea import (
    FeaturePyramid,
    GcParams,
    LevelConstants,
    LossBreakdown,
    MEAConfig,
    MeaTerms,
    mea_loss,
)
from .tensor import Tensor, add, channel_mix, concat_ch, relu


class DistillMode(Enum):
    FUSION = "amfd"
    TRADITIONAL = "traditional"
    NONE = "none"

    @classmethod
    def from_selector(cls, name: str) -> "DistillMode":
        for mode in cls:
            if mode.value == name:
                return mode
        raise WrongMode(f"unknown plan selector {name!r} "
                        f"(expected one of {[m.value for m in cls]})")


@dataclass
class DistillPlan:
    """Mode plus the context blocks it owns.

    Fusion mode owns two blocks (one per teacher modality), traditional
    owns one for the fused feature, none owns none.
    """

    mode: DistillMode
    cfg: MEAConfig
    gc_rgb: GcParams | None = None
    gc_tir: GcParams | None = None
    gc_fused: GcParams | None = None

    def __post_init__(self):
        owned = [g is not None for g in (self.gc_rgb, self.gc_tir, self.gc_fused)]
        expect = {
            DistillMode.FUSION: [True, True, False],
            DistillMode.TRADITIONAL: [False, False, True],
            DistillMode.NONE: [False, False, False],
        }[self.mode]
        if owned != expect:
            raise WrongMode(f"plan mode {self.mode.value} owns the wrong context blocks")

    @classmethod
    def create(cls, mode: DistillMode | str, channels: int, cfg: MEAConfig,
               seed: int = 0) -> "DistillPlan":
        if isinstance(mode, str):
            mode = DistillMode.from_selector(mode)
        if mode is DistillMode.FUSION:
            return cls(mode=mode, cfg=cfg,
                       gc_rgb=GcParams.create(channels, cfg.reduction, seed=seed),
                       gc_tir=GcParams.create(channels, cfg.reduction, seed=seed + 1))
        if mode is DistillMode.TRADITIONAL:
            return cls(mode=mode, cfg=cfg,
                       gc_fused=GcParams.create(channels, cfg.reduction, seed=seed))
        return cls(mode=mode, cfg=cfg)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        if self.gc_rgb is not None:
            out += self.gc_rgb.named_tensors("plan.gc_rgb")
        if self.gc_tir is not None:
            out += self.gc_tir.named_tensors("plan.gc_tir")
        if self.gc_fused is not None:
            out += self.gc_fused.named_tensors("plan.gc_fused")
        return out


# -- image-level fusion front end -----------------------------------------------------


@dataclass
class ImageFusionParams:
    """Per-modality residual blocks plus the post-concatenation projection."""

    rgb_w1: Tensor
    rgb_b1: Tensor
    rgb_w2: Tensor
    rgb_b2: Tensor
    tir_w1: Tensor
    tir_b1: Tensor
    tir_w2: Tensor
    tir_b2: Tensor
    proj_w: Tensor
    proj_b: Tensor

    @classmethod
    def create(cls, img_channels: int, hidden: int, out_channels: int,
               seed: int = 0) -> "ImageFusionParams":
        rng = np.random.default_rng([seed, img_channels, hidden, out_channels])

        def lin(rows, cols):
            bound = 1.0 / math.sqrt(cols)
            return (Tensor(rng.uniform(-bound, bound, (rows, cols)), requires_grad=True),
                    Tensor(rng.uniform(-bound, bound, rows), requires_grad=True))

        rgb_w1, rgb_b1 = lin(hidden, img_channels)
        rgb_w2, rgb_b2 = lin(img_channels, hidden)
        tir_w1, tir_b1 = lin(hidden, img_channels)
        tir_w2, tir_b2 = lin(img_channels, hidden)
        proj_w, proj_b = lin(out_channels, 2 * img_channels)
        return cls(rgb_w1, rgb_b1, rgb_w2, rgb_b2,
                   tir_w1, tir_b1, tir_w2, tir_b2, proj_w, proj_b)

    @property
    def out_channels(self) -> int:
        return self.proj_w.shape[0]

    def named_tensors(self, prefix: str = "fusion") -> list[tuple[str, Tensor]]:
        names = ("rgb_w1", "rgb_b1", "rgb_w2", "rgb_b2",
                 "tir_w1", "tir_b1", "tir_w2", "tir_b2", "proj_w", "proj_b")
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]


def image_level_fuse(rgb: Tensor, tir: Tensor, p: ImageFusionParams) -> Tensor:
    """Residual-transform each modality, concatenate channels, project."""
    if rgb.data.ndim != 3 or tir.data.ndim != 3 or rgb.shape[1:] != tir.shape[1:]:
        raise ShapeMismatch(f"modalities must share HxW: {rgb.shape} vs {tir.shape}")
    r = add(rgb, channel_mix(relu(channel_mix(rgb, p.rgb_w1, p.rgb_b1)),
                             p.rgb_w2, p.rgb_b2))
    t = add(tir, channel_mix(relu(channel_mix(tir, p.tir_w1, p.tir_b1)),
                             p.tir_w2, p.tir_b2))
    return channel_mix(concat_ch(r, t), p.proj_w, p.proj_b)


# -- distillation objectives ---------------------------------------------------------


@dataclass
class DistillResult:
    """Scalar loss tensor for the tape plus the per-term reports."""

    loss: Tensor | None
    breakdown: LossBreakdown
    rgb_terms: MeaTerms | None = None
    tir_terms: MeaTerms | None = None


def fusion_distill_loss(x_rgb: FeaturePyramid, x_tir: FeaturePyramid,
                        student_fused: FeaturePyramid, boxes,
                        plan: DistillPlan,
                        rgb_constants: list[LevelConstants] | None = None,
                        tir_constants: list[LevelConstants] | None = None
                        ) -> DistillResult:
    """Student fused features imitate both teacher modal pyramids (two MEAs)."""
    if plan.mode is not DistillMode.FUSION:
        raise WrongMode(f"fusion_distill_loss needs fusion mode, got {plan.mode.value}")
    rgb = mea_loss(x_rgb, student_fused, boxes, plan.gc_rgb, plan.cfg.rgb_slice(),
                   rgb_constants)
    tir = mea_loss(x_tir, student_fused, boxes, plan.gc_tir, plan.cfg.tir_slice(),
                   tir_constants)
    return DistillResult(
        loss=add(rgb.mea, tir.mea),
        breakdown=_breakdown_from_terms(rgb=rgb, tir=tir),
        rgb_terms=rgb,
        tir_terms=tir,
    )


def traditional_distill_loss(teacher_fused: FeaturePyramid,
                             student_fused: FeaturePyramid, boxes,
                             plan: DistillPlan,
                             constants: list[LevelConstants] | None = None
                             ) -> DistillResult:
    """Student fused features imitate the teacher's fused pyramid (one MEA).

    The single instance uses the RGB-branch weights and reports into the
    RGB slots of the breakdown; the TIR slots stay zero.
    """
    if plan.mode is not DistillMode.TRADITIONAL:
        raise WrongMode(
            f"traditional_distill_loss needs traditional mode, got {plan.mode.value}")
    terms = mea_loss(teacher_fused, student_fused, boxes, plan.gc_fused,
                     plan.cfg.rgb_slice(), constants)
    return DistillResult(loss=terms.mea, breakdown=_breakdown_from_terms(rgb=terms),
                         rgb_terms=terms)


def _breakdown_from_terms(rgb: MeaTerms | None = None,
                          tir: MeaTerms | None = None) -> LossBreakdown:
    return LossBreakdown.assemble(
        original=0.0,
        global_rgb=float(rgb.global_) if rgb else 0.0,
        target_rgb=float(rgb.target) if rgb else 0.0,
        att_rgb=float(rgb.att) if rgb else 0.0,
        global_tir=float(tir.global_) if tir else 0.0,
        target_tir=float(tir.target) if tir else 0.0,
        att_tir=float(tir.att) if tir else 0.0,
    )


def total_loss(original: float, breakdown: LossBreakdown) -> float:
    """Record original and total = original + mea_total into the breakdown."""
    if not math.isfinite(original) or not math.isfinite(breakdown.mea_total):
        raise NonFiniteValue("total loss operands must be finite")
    breakdown.original = original
    breakdown.total = original + breakdown.mea_total
    return breakdown.total
