"""Desk-scale teacher/student stand-ins and the distillation training loop.

The teacher is not a trained network: it is a frozen, seeded bank of
smoothing + 3x3 projection filters producing clean multi-scale responses
per modality (strides 4 and 8), plus a stub fused pyramid (the per-level
mean of the two modal pyramids). Freezing is structural - the weights are
plain arrays that no tape ever sees.

The student is a single-stream net: image-level fusion front end, two
stride-2 downsampling stages (2x2 mean pool + channel mix + relu), a tiny
top-down feature pyramid matching the teacher strides, and a dense head
producing one objectness logit and four box offsets per cell. Its
parameter count stays well below the teacher's filter-bank state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoGroundTruth, NonFiniteLoss, ShapeMismatch
from .fusion import (
    DistillMode,
    DistillPlan,
    DistillResult,
    ImageFusionParams,
    fusion_distill_loss,
    image_level_fuse,
    traditional_distill_loss,
)
from .mea import (
    FeaturePyramid,
    LevelConstants,
    LossBreakdown,
    MEAConfig,
    level_constants,
)
from .metrics import Detection, EvalReport, evaluate, iou
from .scenes import GtBox, Scene, SceneSpec, generate_split
from .tensor import (
    AdamW,
    Tensor,
    abs_,
    add,
    avgpool2,
    backward,
    bce_with_logits,
    channel_mix,
    mul,
    relu,
    scale,
    tape,
    tsum,
    upsample2,
)

STRIDES = (4, 8)
TEACHER_CHANNELS = 8
TEACHER_HIDDEN = 16

# Detection decode defaults (used by evaluation and the eval CLI).
SCORE_THRESHOLD = 0.05
NMS_IOU = 0.5
MAX_DETECTIONS = 60


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Edge-padded 3x3 convolution: (C,H,W), (O,C,3,3), (O,) -> (O,H,W).

    Edge padding keeps constant inputs constant, so a zero image maps to
    bias-only, per-channel-constant features at every level.
    """
    c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros((w.shape[0], h, wd))
    for di in range(3):
        for dj in range(3):
            out += np.tensordot(w[:, :, di, dj], xp[:, di:di + h, dj:dj + wd],
                                axes=(1, 0))
    return out + b[:, None, None]


def _box3(x: np.ndarray) -> np.ndarray:
    """3x3 box blur with edge padding, per channel."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    acc = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            acc += xp[:, di:di + h, dj:dj + w]
    return acc / 9.0


def _block_mean(x: np.ndarray, k: int) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))


@dataclass
class TeacherFeatures:
    """Frozen post-pyramid teacher outputs for one scene.

    Wrapped pyramids and the focal-branch constants are cached: the
    features never change, so reuse is bit-identical to recomputation.
    """

    x_rgb: list[np.ndarray]
    x_tir: list[np.ndarray]
    x_fused_stub: list[np.ndarray]
    strides: list[float]
    _pyramids: dict = field(default_factory=dict, repr=False)
    _constants: dict = field(default_factory=dict, repr=False)

    def arrays(self, which: str) -> list[np.ndarray]:
        return {"rgb": self.x_rgb, "tir": self.x_tir,
                "fused": self.x_fused_stub}[which]

    def pyramid(self, which: str) -> FeaturePyramid:
        if which not in self._pyramids:
            self._pyramids[which] = FeaturePyramid(
                [Tensor(lv) for lv in self.arrays(which)], list(self.strides))
        return self._pyramids[which]

    def constants(self, which: str, boxes) -> list[LevelConstants]:
        """Per-level focal constants for this scene's boxes (cached)."""
        key = (which, tuple(boxes))
        if key not in self._constants:
            self._constants[key] = [level_constants(lv, boxes, s)
                                    for lv, s in zip(self.arrays(which), self.strides)]
        return self._constants[key]


class Teacher:
    """Seeded multi-scale filter bank standing in for the two-stream network."""

    def __init__(self, img_channels: int = 1, seed: int = 1000,
                 channels: int = TEACHER_CHANNELS, hidden: int = TEACHER_HIDDEN):
        self.img_channels = img_channels
        self.channels = channels
        self.hidden = hidden
        self.seed = seed
        rng = np.random.default_rng([seed, img_channels, channels, hidden])
        self._filters: dict[tuple[str, int], tuple[np.ndarray, ...]] = {}
        for mod in ("rgb", "tir"):
            for li in range(len(STRIDES)):
                w1 = rng.normal(0.0, 0.5, (hidden, img_channels, 3, 3))
                b1 = rng.normal(0.0, 0.1, hidden)
                w2 = rng.normal(0.0, 0.5 / math.sqrt(hidden), (channels, hidden, 3, 3))
                b2 = rng.normal(0.0, 0.1, channels)
                self._filters[(mod, li)] = (w1, b1, w2, b2)

    def _modal_pyramid(self, img: np.ndarray, mod: str) -> list[np.ndarray]:
        smooth = _box3(_box3(img))
        bases = [_block_mean(smooth, STRIDES[0])]
        for prev, s in zip(STRIDES, STRIDES[1:]):
            bases.append(_block_mean(bases[-1], s // prev))
        levels = []
        for li, base in enumerate(bases):
            w1, b1, w2, b2 = self._filters[(mod, li)]
            levels.append(_conv3x3(_conv3x3(base, w1, b1), w2, b2))
        return levels

    def features(self, scene: Scene) -> TeacherFeatures:
        x_rgb = self._modal_pyramid(scene.rgb, "rgb")
        x_tir = self._modal_pyramid(scene.tir, "tir")
        stub = [(r + t) / 2.0 for r, t in zip(x_rgb, x_tir)]
        return TeacherFeatures(x_rgb=x_rgb, x_tir=x_tir, x_fused_stub=stub,
                               strides=[float(s) for s in STRIDES])

    def state_vector(self) -> np.ndarray:
        """Every filter value, concatenated; used for frozen/size checks."""
        parts = []
        for key in sorted(self._filters):
            parts.extend(arr.ravel() for arr in self._filters[key])
        return np.concatenate(parts)

    @property
    def state_size(self) -> int:
        return int(self.state_vector().size)


# -- student -------------------------------------------------------------------------


@dataclass
class StudentModel:
    """Single-stream detector: fusion -> backbone -> pyramid -> dense head."""

    fusion: ImageFusionParams
    s1_w: Tensor
    s1_b: Tensor
    s2_w: Tensor
    s2_b: Tensor
    lat3_w: Tensor
    lat3_b: Tensor
    lat4_w: Tensor
    lat4_b: Tensor
    head_obj_w: Tensor
    head_obj_b: Tensor
    head_box_w: Tensor
    head_box_b: Tensor

    @classmethod
    def create(cls, img_channels: int = 1, seed: int = 0, fused_channels: int = 4,
               mid_channels: int = 6, out_channels: int = TEACHER_CHANNELS
               ) -> "StudentModel":
        rng = np.random.default_rng([seed, img_channels, fused_channels,
                                     mid_channels, out_channels])

        def lin(rows, cols):
            bound = 1.0 / math.sqrt(cols)
            return (Tensor(rng.uniform(-bound, bound, (rows, cols)), requires_grad=True),
                    Tensor(rng.uniform(-bound, bound, rows), requires_grad=True))

        fusion = ImageFusionParams.create(img_channels, hidden=3,
                                          out_channels=fused_channels, seed=seed)
        s1_w, s1_b = lin(mid_channels, fused_channels)
        s2_w, s2_b = lin(out_channels, mid_channels)
        lat3_w, lat3_b = lin(out_channels, out_channels)
        lat4_w, lat4_b = lin(out_channels, out_channels)
        head_obj_w, head_obj_b = lin(1, out_channels)
        head_box_w, head_box_b = lin(4, out_channels)
        return cls(fusion, s1_w, s1_b, s2_w, s2_b, lat3_w, lat3_b, lat4_w, lat4_b,
                   head_obj_w, head_obj_b, head_box_w, head_box_b)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = self.fusion.named_tensors("student.fusion")
        for name in ("s1_w", "s1_b", "s2_w", "s2_b", "lat3_w", "lat3_b",
                     "lat4_w", "lat4_b", "head_obj_w", "head_obj_b",
                     "head_box_w", "head_box_b"):
            out.append((f"student.{name}", getattr(self, name)))
        return out

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_tensors())

    def forward(self, rgb: np.ndarray, tir: np.ndarray
                ) -> tuple[FeaturePyramid, list[tuple[Tensor, Tensor]]]:
        """Fused pyramid plus per-level (objectness logits, box offsets)."""
        fused0 = image_level_fuse(Tensor(rgb), Tensor(tir), self.fusion)
        b1 = relu(channel_mix(avgpool2(fused0), self.s1_w, self.s1_b))
        b2 = relu(channel_mix(avgpool2(b1), self.s2_w, self.s2_b))
        c8 = avgpool2(b2)
        p4 = channel_mix(c8, self.lat4_w, self.lat4_b)
        p3 = add(channel_mix(b2, self.lat3_w, self.lat3_b), upsample2(p4))
        pyramid = FeaturePyramid([p3, p4], [float(s) for s in STRIDES])
        preds = [(channel_mix(p, self.head_obj_w, self.head_obj_b),
                  channel_mix(p, self.head_box_w, self.head_box_b))
                 for p in pyramid.levels]
        return pyramid, preds


def assign_targets(boxes: list[GtBox], level_shapes: list[tuple[int, int]],
                   strides=STRIDES) -> tuple[list[np.ndarray], list[np.ndarray], int]:
    """Per-level objectness grids and box-offset targets.

    Each box trains the single cell containing its center, at the level
    whose stride best matches the box size (geometric distance between
    sqrt(area) and 4x the stride). Offsets are (dx, dy) in cells from the
    cell center and (dw, dh) as log size over stride.
    """
    obj = [np.zeros((1,) + s) for s in level_shapes]
    tgt = [np.zeros((4,) + s) for s in level_shapes]
    n_pos = 0
    for b in boxes:
        size = math.sqrt(b.width * b.height)
        li = min(range(len(strides)),
                 key=lambda i: (abs(math.log2(size / (4.0 * strides[i]))), i))
        stride = strides[li]
        h, w = level_shapes[li]
        cx = min(max(int((b.x1 + b.x2) / 2.0 / stride), 0), w - 1)
        cy = min(max(int((b.y1 + b.y2) / 2.0 / stride), 0), h - 1)
        obj[li][0, cy, cx] = 1.0
        tgt[li][0, cy, cx] = (b.x1 + b.x2) / 2.0 / stride - (cx + 0.5)
        tgt[li][1, cy, cx] = (b.y1 + b.y2) / 2.0 / stride - (cy + 0.5)
        tgt[li][2, cy, cx] = math.log(b.width / stride)
        tgt[li][3, cy, cx] = math.log(b.height / stride)
        n_pos += 1
    return obj, tgt, n_pos


def detection_loss(preds: list[tuple[Tensor, Tensor]], boxes: list[GtBox],
                   strides=STRIDES) -> Tensor:
    """Objectness BCE over all cells plus L1 box regression at positive cells,
    normalized by the positive count."""
    level_shapes = [p_obj.shape[1:] for p_obj, _ in preds]
    obj, tgt, n_pos = assign_targets(boxes, level_shapes, strides)
    total = None
    for (p_obj, p_box), y, t in zip(preds, obj, tgt):
        term = tsum(bce_with_logits(p_obj, y))
        if y.any():
            mask4 = np.broadcast_to(y, (4,) + y.shape[1:]).copy()
            l1 = tsum(mul(abs_(p_box - Tensor(t)), Tensor(mask4)))
            term = add(term, l1)
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / max(1, n_pos))


def decode_detections(preds: list[tuple[np.ndarray, np.ndarray]], image_id: str,
                      image_size: int, strides=STRIDES,
                      score_threshold: float = SCORE_THRESHOLD,
                      nms_iou: float = NMS_IOU,
                      max_detections: int = MAX_DETECTIONS) -> list[Detection]:
    """Score cells, decode boxes, and apply greedy IoU suppression."""
    candidates: list[tuple[float, int, int, tuple[float, float, float, float]]] = []
    for li, (logits, offsets) in enumerate(preds):
        stride = strides[li]
        scores = 1.0 / (1.0 + np.exp(-logits[0]))
        ys, xs = np.nonzero(scores > score_threshold)
        for cy, cx in zip(ys, xs):
            dx, dy, dw, dh = offsets[:, cy, cx]
            xc = (cx + 0.5 + dx) * stride
            yc = (cy + 0.5 + dy) * stride
            bw = math.exp(min(max(dw, -4.0), 4.0)) * stride
            bh = math.exp(min(max(dh, -4.0), 4.0)) * stride
            x1 = max(0.0, xc - bw / 2.0)
            y1 = max(0.0, yc - bh / 2.0)
            x2 = min(float(image_size), xc + bw / 2.0)
            y2 = min(float(image_size), yc + bh / 2.0)
            if x2 > x1 and y2 > y1:
                candidates.append((float(scores[cy, cx]), li, int(cy * 10000 + cx),
                                   (x1, y1, x2, y2)))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    kept: list[Detection] = []
    for score, _, _, box in candidates:
        if len(kept) >= max_detections:
            break
        if all(iou(box, k.box) < nms_iou for k in kept):
            kept.append(Detection(box=box, score=score, image_id=image_id))
    return kept


# -- training ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 2
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    lr_decay: str = "none"  # "none" keeps it constant, "linear" anneals to half
    seed: int = 11
    eval_every: int = 500
    plan: str = "amfd"
    mea: MEAConfig = field(default_factory=MEAConfig)

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ShapeMismatch("iterations must be >= 0 and batch_size >= 1")
        if self.lr_decay not in ("none", "linear"):
            raise ShapeMismatch("lr_decay must be 'none' or 'linear'")

    def lr_at(self, step: int) -> float:
        if self.lr_decay == "none" or self.iterations <= 1:
            return self.learning_rate
        frac = step / (self.iterations - 1)
        return self.learning_rate * (1.0 - 0.5 * frac)


@dataclass
class SyntheticDataset:
    """Scenes plus cached frozen teacher features for the train split."""

    spec: SceneSpec
    teacher: Teacher
    train_scenes: list[Scene]
    test_scenes: list[Scene]
    train_feats: list[TeacherFeatures]

    @classmethod
    def generate(cls, spec: SceneSpec) -> "SyntheticDataset":
        teacher = Teacher(img_channels=spec.channels, seed=spec.teacher_seed)
        train = generate_split(spec, "train")
        test = generate_split(spec, "test")
        feats = [teacher.features(s) for s in train]
        return cls(spec=spec, teacher=teacher, train_scenes=train,
                   test_scenes=test, train_feats=feats)

    @classmethod
    def from_scenes(cls, spec: SceneSpec, train: list[Scene],
                    test: list[Scene]) -> "SyntheticDataset":
        teacher = Teacher(img_channels=spec.channels, seed=spec.teacher_seed)
        feats = [teacher.features(s) for s in train]
        return cls(spec=spec, teacher=teacher, train_scenes=train,
                   test_scenes=test, train_feats=feats)


def _distill(plan: DistillPlan, feats: TeacherFeatures, student: FeaturePyramid,
             boxes: list[GtBox]) -> DistillResult | None:
    if plan.mode is DistillMode.FUSION:
        return fusion_distill_loss(feats.pyramid("rgb"), feats.pyramid("tir"),
                                   student, boxes, plan,
                                   feats.constants("rgb", boxes),
                                   feats.constants("tir", boxes))
    if plan.mode is DistillMode.TRADITIONAL:
        return traditional_distill_loss(feats.pyramid("fused"), student, boxes, plan,
                                        feats.constants("fused", boxes))
    return None


def train_step(batch: list[tuple[Scene, TeacherFeatures]], model: StudentModel,
               plan: DistillPlan, optim: AdamW, step: int) -> LossBreakdown:
    """One optimization step over a batch; reports per-term batch means."""
    inv_b = 1.0 / len(batch)
    prim_names = ("original", "global_rgb", "target_rgb", "att_rgb",
                  "global_tir", "target_tir", "att_tir")
    sums: dict[str, Tensor | None] = {n: None for n in prim_names}

    def acc(name: str, t: Tensor) -> None:
        sums[name] = t if sums[name] is None else add(sums[name], t)

    with tape():
        for scene, feats in batch:
            pyramid, preds = model.forward(scene.rgb, scene.tir)
            acc("original", detection_loss(preds, scene.boxes))
            res = _distill(plan, feats, pyramid, scene.boxes)
            if res is None:
                continue
            if plan.mode is DistillMode.FUSION:
                rgb, tir = res.rgb_terms, res.tir_terms
                acc("global_rgb", rgb.global_)
                acc("target_rgb", rgb.target)
                acc("att_rgb", rgb.att)
                acc("global_tir", tir.global_)
                acc("target_tir", tir.target)
                acc("att_tir", tir.att)
            else:
                acc("global_rgb", res.rgb_terms.global_)
                acc("target_rgb", res.rgb_terms.target)
                acc("att_rgb", res.rgb_terms.att)

        total = None
        values: dict[str, float] = {}
        for name in prim_names:
            t = sums[name]
            if t is None:
                values[name] = 0.0
                continue
            values[name] = float(t) * inv_b
            total = t if total is None else add(total, t)
        breakdown = LossBreakdown.assemble(**values)
        if not math.isfinite(breakdown.total):
            raise NonFiniteLoss(f"non-finite loss at step {step}", step=step)
        backward(scale(total, inv_b))
    optim.step()
    optim.zero_grad()
    return breakdown


@dataclass
class RunResult:
    model: StudentModel
    plan: DistillPlan
    optim: AdamW
    history: list[LossBreakdown]
    report: EvalReport | None
    eval_history: list[tuple[int, float, float]]  # (step, mr2, map)


def predictions_numpy(model: StudentModel, scene: Scene
                      ) -> list[tuple[np.ndarray, np.ndarray]]:
    _, preds = model.forward(scene.rgb, scene.tir)  # no tape: pure forward
    return [(p_obj.data, p_box.data) for p_obj, p_box in preds]


def detections_for_scenes(model: StudentModel, scenes: list[Scene],
                          image_size: int) -> dict[str, list[Detection]]:
    return {s.scene_id: decode_detections(predictions_numpy(model, s),
                                          s.scene_id, image_size)
            for s in scenes}


def evaluate_student(model: StudentModel, scenes: list[Scene],
                     image_size: int) -> EvalReport:
    dets = detections_for_scenes(model, scenes, image_size)
    gts = {s.scene_id: s.boxes for s in scenes}
    return evaluate(dets, gts)


def evaluate_student_splits(model: StudentModel, scenes: list[Scene],
                            image_size: int) -> dict[str, EvalReport]:
    """Reports for the pooled set and the day/night subsets.

    A tod subset with no usable ground truth is omitted rather than
    raising; the pooled report still raises if the whole set is unusable.
    """
    out = {"all": evaluate_student(model, scenes, image_size)}
    for tod in ("day", "night"):
        subset = [s for s in scenes if s.tod == tod]
        if not subset:
            continue
        try:
            out[tod] = evaluate_student(model, subset, image_size)
        except NoGroundTruth:
            pass
    return out


def make_plan(cfg: TrainConfig) -> DistillPlan:
    return DistillPlan.create(cfg.plan, channels=TEACHER_CHANNELS, cfg=cfg.mea,
                              seed=cfg.seed + 7777)


def run_distillation(cfg: TrainConfig, data: SyntheticDataset,
                     resume: dict[str, np.ndarray] | None = None,
                     start_step: int = 0) -> RunResult:
    """Deterministic training loop; (cfg, data spec) fully determine the output."""
    model = StudentModel.create(img_channels=data.spec.channels, seed=cfg.seed)
    plan = make_plan(cfg)
    params = model.named_tensors() + plan.named_tensors()
    optim = AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    if resume is not None:
        load_state(model, plan, optim, resume)
    history: list[LossBreakdown] = []
    eval_history: list[tuple[int, float, float]] = []
    n_train = len(data.train_scenes)
    for step in range(start_step, cfg.iterations):
        rng = np.random.default_rng([cfg.seed, step, 11])
        idx = rng.integers(0, n_train, cfg.batch_size)
        batch = [(data.train_scenes[i], data.train_feats[i]) for i in idx]
        optim.lr = cfg.lr_at(step)
        history.append(train_step(batch, model, plan, optim, step))
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0 and data.test_scenes:
            rep = evaluate_student(model, data.test_scenes, data.spec.image_size)
            eval_history.append((step + 1, rep.mr2, rep.map_coco))
    report = (evaluate_student(model, data.test_scenes, data.spec.image_size)
              if data.test_scenes else None)
    return RunResult(model=model, plan=plan, optim=optim, history=history,
                     report=report, eval_history=eval_history)


# -- checkpoint state ------------------------------------------------------------


def state_arrays(model: StudentModel, plan: DistillPlan, optim: AdamW,
                 step: int) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {"meta.step": np.asarray(float(step))}
    for name, t in model.named_tensors() + plan.named_tensors():
        out[name] = t.data
    out.update(optim.state_arrays())
    return out


def load_state(model: StudentModel, plan: DistillPlan, optim: AdamW,
               arrays: dict[str, np.ndarray]) -> int:
    """Restore parameters and optimizer state; returns the stored step."""
    for name, t in model.named_tensors() + plan.named_tensors():
        if name not in arrays:
            raise ShapeMismatch(f"checkpoint is missing parameter {name}")
        if arrays[name].shape != t.data.shape:
            raise ShapeMismatch(f"checkpoint parameter {name} has wrong shape")
        t.data[...] = arrays[name]
    optim.load_state_arrays(arrays)
    return int(arrays["meta.step"])
