"""Modal extraction alignment: global-context and focal distillation losses.

One MEA instance compares a frozen teacher feature pyramid against the
student's fused pyramid and produces three scalar terms per modality:

* a global term - squared difference of global-context-enhanced features,
  where the context block (pixel-softmax pooling -> bottleneck -> additive
  channel weight) is shared between the teacher and student branches and
  trained jointly with the student;
* a target term - squared feature difference weighted by the ground-truth
  focal mask and the teacher's spatial/channel attention (held constant);
* an attention term - L1 distance between teacher (constant) and student
  (differentiable) attention maps.

focal = target + attention and mea = global + focal; both identities are
maintained exactly in :class:`LossBreakdown`.

The teacher-side constants of the focal branch (masks, teacher attention,
their combined weight grid) depend only on the frozen features and the
ground-truth boxes, so callers in the training loop precompute them once
per scene via :func:`level_constants`; results are bit-identical either
way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import backend as K
from .attention import attention_arrays, channel_vector, spatial_map
from .errors import PyramidMismatch, ShapeMismatch
from .tensor import (
    Tensor,
    abs_diff_sum,
    accumulate_owned,
    add,
    broadcast_add,
    channel_mix,
    layer_norm_relu,
    make_op,
    scale,
    sq_diff_sum,
    weighted_sq_diff_sum,
)


@dataclass
class FeaturePyramid:
    """Level-ordered (C,H,W) feature grids with their image strides."""

    levels: list[Tensor]
    strides: list[float]

    def __post_init__(self):
        if len(self.levels) != len(self.strides):
            raise PyramidMismatch(
                f"{len(self.levels)} levels but {len(self.strides)} strides")

    def __len__(self) -> int:
        return len(self.levels)

    def shapes(self) -> list[tuple[int, ...]]:
        return [lv.shape for lv in self.levels]


def check_aligned(a: FeaturePyramid, b: FeaturePyramid) -> None:
    if len(a) != len(b) or a.strides != b.strides or a.shapes() != b.shapes():
        raise PyramidMismatch(
            f"pyramids differ: {a.shapes()}@{a.strides} vs {b.shapes()}@{b.strides}")


# -- global feature extraction --------------------------------------------------------


@dataclass
class GcParams:
    """Parameters of one global-context block (all trained with the student).

    conv1 scores each pixel for the softmax context pooling; conv2/conv3
    form the bottleneck (reduction ``r``) that turns the pooled context
    into a per-channel additive weight. conv3 starts at zero so the block
    initially acts as the identity.
    """

    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    conv3_w: Tensor
    conv3_b: Tensor
    reduction: int

    @classmethod
    def create(cls, channels: int, reduction: int = 4, seed: int = 0) -> "GcParams":
        if channels < 1 or reduction < 1:
            raise ShapeMismatch("channels and reduction must be positive")
        mid = max(1, channels // reduction)
        rng = np.random.default_rng([seed, channels, reduction])
        u = lambda *shape: rng.uniform(-0.1, 0.1, shape)
        return cls(
            conv1_w=Tensor(u(1, channels), requires_grad=True),
            conv1_b=Tensor(u(1), requires_grad=True),
            conv2_w=Tensor(u(mid, channels), requires_grad=True),
            conv2_b=Tensor(u(mid), requires_grad=True),
            conv3_w=Tensor(np.zeros((channels, mid)), requires_grad=True),
            conv3_b=Tensor(np.zeros(channels), requires_grad=True),
            reduction=reduction,
        )

    @property
    def channels(self) -> int:
        return self.conv1_w.shape[1]

    def named_tensors(self, prefix: str = "gc") -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.conv1_w", self.conv1_w),
            (f"{prefix}.conv1_b", self.conv1_b),
            (f"{prefix}.conv2_w", self.conv2_w),
            (f"{prefix}.conv2_b", self.conv2_b),
            (f"{prefix}.conv3_w", self.conv3_w),
            (f"{prefix}.conv3_b", self.conv3_b),
        ]


def context_pool(x: Tensor, w1: Tensor, b1: Tensor) -> Tensor:
    """Softmax-pooled context: score pixels, softmax, weighted pixel sum.

    x: (C,H,W), w1: (1,C), b1: (1,) -> (C,1,1). Fused tape op.
    """
    if x.data.ndim != 3:
        raise ShapeMismatch(f"context_pool: need (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if w1.shape != (1, c) or b1.shape != (1,):
        raise ShapeMismatch(
            f"context_pool: scorer shapes {w1.shape}/{b1.shape} do not match C={c}")
    x2 = x.data.reshape(c, h * w)
    w1f = w1.data.reshape(c)
    probs, ctx = K.context_pool_fwd(w1f, float(b1.data[0]), x2)
    probs = np.asarray(probs)

    def bwd(g):
        gctx = np.ascontiguousarray(g.reshape(c))
        gx, gw, gb = K.context_pool_bwd(w1f, x2, probs, gctx)
        if x.requires_grad:
            accumulate_owned(x, np.asarray(gx).reshape(c, h, w))
        accumulate_owned(w1, np.asarray(gw).reshape(1, c))
        accumulate_owned(b1, np.asarray([gb]))

    return make_op(np.asarray(ctx).reshape(c, 1, 1), (x, w1, b1), bwd)


def gc_weight(x: Tensor, p: GcParams) -> Tensor:
    """Channel-wise context weight of a (C,H,W) feature: returns (C,1,1)."""
    if x.data.ndim != 3 or x.shape[0] != p.channels:
        raise ShapeMismatch(
            f"feature {x.shape} does not match block channels {p.channels}")
    ctx = context_pool(x, p.conv1_w, p.conv1_b)
    hidden = layer_norm_relu(channel_mix(ctx, p.conv2_w, p.conv2_b))
    return channel_mix(hidden, p.conv3_w, p.conv3_b)


def gc_apply(x: Tensor, p: GcParams) -> Tensor:
    """Broadcast-add the context weight onto the feature (same shape out)."""
    return broadcast_add(x, gc_weight(x, p))


def global_loss(teacher_feat: Tensor, student_feat: Tensor, p: GcParams,
                lam: float) -> Tensor:
    """Weighted squared difference of context-enhanced teacher/student features.

    The same block transforms both sides, so its parameters receive
    gradients from both branches; the raw teacher feature stays constant.
    """
    if teacher_feat.shape != student_feat.shape:
        raise ShapeMismatch(
            f"teacher {teacher_feat.shape} vs student {student_feat.shape}")
    return scale(sq_diff_sum(gc_apply(teacher_feat, p), gc_apply(student_feat, p)),
                 lam)


# -- focal feature extraction ---------------------------------------------------------


@dataclass(frozen=True)
class FocalMask:
    """Per-cell foreground weights at one pyramid level.

    Inside ground-truth boxes each cell carries 1/(box cell area) of the
    largest-area covering box; background cells are zero, so each isolated
    box contributes total mass 1 regardless of its size.
    """

    weights: np.ndarray
    stride: float


def build_mask(boxes, level_shape: tuple[int, int], stride: float) -> FocalMask:
    """Rasterize image-coordinate boxes into a level-resolution focal mask.

    Box edges are scaled by 1/stride and rounded outward to whole cells,
    then clipped; boxes that end up empty are dropped.
    """
    if stride <= 0:
        raise ShapeMismatch("stride must be positive")
    h, w = level_shape
    areas = np.zeros((h, w))
    for b in boxes:
        x1 = max(0, math.floor(b.x1 / stride))
        y1 = max(0, math.floor(b.y1 / stride))
        x2 = min(w, math.ceil(b.x2 / stride))
        y2 = min(h, math.ceil(b.y2 / stride))
        if x2 <= x1 or y2 <= y1:
            continue
        cell_area = float((y2 - y1) * (x2 - x1))
        region = areas[y1:y2, x1:x2]
        np.maximum(region, cell_area, out=region)
    weights = np.zeros((h, w))
    covered = areas > 0
    weights[covered] = 1.0 / areas[covered]
    return FocalMask(weights=weights, stride=float(stride))


@dataclass(frozen=True)
class LevelConstants:
    """Frozen per-level inputs of the focal branch for one (scene, modality)."""

    mask: FocalMask
    teacher_spatial: np.ndarray  # (H, W)
    teacher_channel: np.ndarray  # (C,)
    target_weight: np.ndarray    # mask * spatial * channel, (C, H, W)


def level_constants(teacher_feat: np.ndarray, boxes, stride: float) -> LevelConstants:
    mask = build_mask(boxes, teacher_feat.shape[1:], stride)
    a_s, a_c = attention_arrays(teacher_feat)
    weight = mask.weights[None, :, :] * a_s[None, :, :] * a_c[:, None, None]
    return LevelConstants(mask=mask, teacher_spatial=a_s, teacher_channel=a_c,
                          target_weight=weight)


def target_loss(teacher_feat: Tensor, student_feat: Tensor, mask: FocalMask,
                alpha: float, consts: LevelConstants | None = None) -> Tensor:
    """Mask- and attention-weighted squared difference over the target area."""
    if teacher_feat.shape != student_feat.shape:
        raise ShapeMismatch(
            f"teacher {teacher_feat.shape} vs student {student_feat.shape}")
    c, h, w = teacher_feat.shape
    if mask.weights.shape != (h, w):
        raise ShapeMismatch(f"mask {mask.weights.shape} does not match level {h}x{w}")
    if consts is None:
        a_s, a_c = attention_arrays(teacher_feat.data)
        weight = mask.weights[None, :, :] * a_s[None, :, :] * a_c[:, None, None]
    else:
        weight = consts.target_weight
    return scale(weighted_sq_diff_sum(weight, teacher_feat, student_feat), alpha)


def attention_loss(teacher_feat: Tensor, student_feat: Tensor, gamma: float,
                   consts: LevelConstants | None = None) -> Tensor:
    """L1 distance between teacher and student attention maps.

    Gradient flows only through the student maps; the teacher maps are
    constants of the frozen teacher feature.
    """
    if teacher_feat.shape != student_feat.shape:
        raise ShapeMismatch(
            f"teacher {teacher_feat.shape} vs student {student_feat.shape}")
    if consts is None:
        a_s_t, a_c_t = attention_arrays(teacher_feat.data)
    else:
        a_s_t, a_c_t = consts.teacher_spatial, consts.teacher_channel
    l1 = add(abs_diff_sum(spatial_map(student_feat), Tensor(a_s_t)),
             abs_diff_sum(channel_vector(student_feat), Tensor(a_c_t)))
    return scale(l1, gamma)


# -- configuration and loss assembly -------------------------------------------------


@dataclass(frozen=True)
class MEASlice:
    """The (alpha, gamma, lam) weights one modality branch uses."""

    alpha: float
    gamma: float
    lam: float


@dataclass(frozen=True)
class MEAConfig:
    """Loss-balancing weights plus the context-block reduction ratio.

    alpha1/gamma1/lambda2 weight the branch aligned to the RGB teacher
    feature; alpha2/gamma2/lambda1 the branch aligned to the thermal one.
    """

    alpha1: float = 5e-5
    alpha2: float = 5e-5
    gamma1: float = 5e-5
    gamma2: float = 5e-5
    lambda1: float = 5e-7
    lambda2: float = 5e-7
    reduction: int = 4

    def __post_init__(self):
        if self.reduction < 1:
            raise ShapeMismatch("reduction ratio must be >= 1")
        for f in fields(self):
            if f.name == "reduction":
                continue
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ShapeMismatch(f"MEA weight {f.name} must be finite and >= 0")

    @classmethod
    def two_stage(cls, reduction: int = 4) -> "MEAConfig":
        return cls(reduction=reduction)

    @classmethod
    def one_stage(cls, reduction: int = 4) -> "MEAConfig":
        return cls(alpha1=1e-3, alpha2=1e-3, gamma1=1e-3, gamma2=1e-3,
                   lambda1=5e-6, lambda2=5e-6, reduction=reduction)

    def rgb_slice(self) -> MEASlice:
        return MEASlice(alpha=self.alpha1, gamma=self.gamma1, lam=self.lambda2)

    def tir_slice(self) -> MEASlice:
        return MEASlice(alpha=self.alpha2, gamma=self.gamma2, lam=self.lambda1)


@dataclass
class MeaTerms:
    """Scalar loss tensors from one MEA instance; composites mirror the sums."""

    global_: Tensor
    target: Tensor
    att: Tensor
    focal: Tensor = field(init=False)
    mea: Tensor = field(init=False)

    def __post_init__(self):
        self.focal = add(self.target, self.att)
        self.mea = add(self.global_, self.focal)


def mea_loss(teacher_pyr: FeaturePyramid, student_pyr: FeaturePyramid, boxes,
             p: GcParams, weights: MEASlice,
             constants: list[LevelConstants] | None = None) -> MeaTerms:
    """Sum the three MEA components over all aligned pyramid levels."""
    check_aligned(teacher_pyr, student_pyr)
    if constants is None:
        constants = [level_constants(t.data, boxes, s)
                     for t, s in zip(teacher_pyr.levels, teacher_pyr.strides)]
    if len(constants) != len(teacher_pyr):
        raise PyramidMismatch("cached constants do not match the pyramid levels")
    g_tot = t_tot = a_tot = None
    for t_feat, s_feat, consts in zip(teacher_pyr.levels, student_pyr.levels,
                                      constants):
        g = global_loss(t_feat, s_feat, p, weights.lam)
        t = target_loss(t_feat, s_feat, consts.mask, weights.alpha, consts)
        a = attention_loss(t_feat, s_feat, weights.gamma, consts)
        g_tot = g if g_tot is None else add(g_tot, g)
        t_tot = t if t_tot is None else add(t_tot, t)
        a_tot = a if a_tot is None else add(a_tot, a)
    if g_tot is None:
        raise PyramidMismatch("empty pyramid")
    return MeaTerms(global_=g_tot, target=t_tot, att=a_tot)


# -- per-step loss report ------------------------------------------------------------


@dataclass
class LossBreakdown:
    """Every named loss term of one training step.

    The composite fields are always derived from the primitive ones with
    plain float additions, so focal = target + att, mea = global + focal,
    mea_total = mea_rgb + mea_tir and total = original + mea_total hold
    bit-exactly.
    """

    global_rgb: float = 0.0
    global_tir: float = 0.0
    target_rgb: float = 0.0
    target_tir: float = 0.0
    att_rgb: float = 0.0
    att_tir: float = 0.0
    focal_rgb: float = 0.0
    focal_tir: float = 0.0
    mea_rgb: float = 0.0
    mea_tir: float = 0.0
    mea_total: float = 0.0
    original: float = 0.0
    total: float = 0.0

    FIELDS = ("global_rgb", "global_tir", "target_rgb", "target_tir",
              "att_rgb", "att_tir", "focal_rgb", "focal_tir",
              "mea_rgb", "mea_tir", "mea_total", "original", "total")

    @classmethod
    def assemble(cls, original: float, global_rgb: float = 0.0, target_rgb: float = 0.0,
                 att_rgb: float = 0.0, global_tir: float = 0.0, target_tir: float = 0.0,
                 att_tir: float = 0.0) -> "LossBreakdown":
        """Derive all composite fields from the primitive terms."""
        b = cls(global_rgb=global_rgb, global_tir=global_tir,
                target_rgb=target_rgb, target_tir=target_tir,
                att_rgb=att_rgb, att_tir=att_tir, original=original)
        b.focal_rgb = b.target_rgb + b.att_rgb
        b.focal_tir = b.target_tir + b.att_tir
        b.mea_rgb = b.global_rgb + b.focal_rgb
        b.mea_tir = b.global_tir + b.focal_tir
        b.mea_total = b.mea_rgb + b.mea_tir
        b.total = b.original + b.mea_total
        return b

    def identities_hold(self) -> bool:
        return (self.focal_rgb == self.target_rgb + self.att_rgb
                and self.focal_tir == self.target_tir + self.att_tir
                and self.mea_rgb == self.global_rgb + self.focal_rgb
                and self.mea_tir == self.global_tir + self.focal_tir
                and self.mea_total == self.mea_rgb + self.mea_tir
                and self.total == self.original + self.mea_total)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.FIELDS}
