"""Pedestrian-detection evaluation: IoU matching, miss-rate curve, AP.

The miss-rate protocol filters ground truth to the "reasonable" subset
(unoccluded, at least 55 px tall); everything else is an ignore region
that absorbs detections without counting. The log-average miss rate is
the geometric mean of the miss-rate envelope sampled at nine log-spaced
false-positives-per-image points in [1e-2, 1]. COCO-style AP averages
101-point interpolated AP over IoU thresholds 0.50..0.95 and uses every
ground-truth box (no reasonable filter).

Matching is greedy in descending score order: a detection takes the
highest-IoU not-yet-matched evaluated box at or above the threshold,
otherwise the highest-IoU ignored box (it then counts as neither TP nor
FP; ignored boxes absorb any number of detections), otherwise it is a
false positive. All ties break toward the lower index, so results are
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoGroundTruth
from .scenes import GtBox, Occlusion

REASONABLE_MIN_HEIGHT = 55.0
MISS_RATE_FLOOR = 1e-10
MR_IOU_THRESHOLD = 0.5
COCO_IOUS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    score: float
    image_id: str

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))
        object.__setattr__(self, "score", float(self.score))
        x1, y1, x2, y2 = self.box
        if not (x2 > x1 and y2 > y1 and math.isfinite(self.score)):
            raise ValueError(f"invalid detection {self.box} score={self.score}")


@dataclass
class EvalReport:
    """Everything one evaluation pass produces."""

    mr2: float
    fppi_samples: list[tuple[float, float]]
    ap_per_iou: dict[float, float]
    map_coco: float
    ap50: float
    ap75: float
    n_gt: int
    n_tp: int
    n_fp: int
    n_ignored: int
    n_images: int

    def as_dict(self) -> dict:
        return {
            "mr2": self.mr2,
            "map": self.map_coco,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "n_gt": self.n_gt,
            "n_tp": self.n_tp,
            "n_fp": self.n_fp,
            "n_ignored": self.n_ignored,
            "n_images": self.n_images,
        }


def iou(a: tuple[float, float, float, float],
        b: tuple[float, float, float, float]) -> float:
    """Intersection area over union area of two boxes."""
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def reasonable_filter(gts: list[GtBox]) -> tuple[list[GtBox], list[GtBox]]:
    """Split ground truth into (evaluated, ignored) per the reasonable setting."""
    evaluated, ignored = [], []
    for g in gts:
        if g.height >= REASONABLE_MIN_HEIGHT and g.occlusion is Occlusion.NO:
            evaluated.append(g)
        else:
            ignored.append(g)
    return evaluated, ignored


def match_detections(dets: list[Detection], gts_evaluated: list[GtBox],
                     gts_ignored: list[GtBox], iou_threshold: float
                     ) -> tuple[list[int], list[str], list[bool]]:
    """Greedy score-descending matching for one image.

    Returns (order, labels, matched): ``order`` is detection indices in
    processing order, ``labels[k]`` in {'tp','fp','ignored'} labels
    ``dets[order[k]]``, and ``matched[j]`` flags evaluated gt ``j``.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    matched = [False] * len(gts_evaluated)
    labels: list[str] = []
    for i in order:
        d = dets[i]
        best_j, best_iou = -1, 0.0
        for j, g in enumerate(gts_evaluated):
            if matched[j]:
                continue
            v = iou(d.box, g.box)
            if v >= iou_threshold and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            matched[best_j] = True
            labels.append("tp")
            continue
        ign_iou = 0.0
        for g in gts_ignored:
            v = iou(d.box, g.box)
            if v >= iou_threshold and v > ign_iou:
                ign_iou = v
        labels.append("ignored" if ign_iou > 0.0 else "fp")
    return order, labels, matched


def _scored_labels(dets_by_image: dict[str, list[Detection]],
                   gts_by_image: dict[str, list[GtBox]],
                   iou_threshold: float, use_filter: bool
                   ) -> tuple[list[tuple[float, str]], int, int]:
    """Per-detection (score, label) pooled over images, plus gt/ignore counts.

    Greedy matching processes detections in descending score order, so a
    detection's label does not depend on lower-scored detections; one
    full-set matching pass therefore yields the labels for every score
    threshold at once.
    """
    scored: list[tuple[float, str]] = []
    n_eval = n_ign = 0
    for image_id in sorted(gts_by_image):
        gts = gts_by_image[image_id]
        dets = dets_by_image.get(image_id, [])
        if use_filter:
            evaluated, ignored = reasonable_filter(gts)
        else:
            evaluated, ignored = list(gts), []
        n_eval += len(evaluated)
        n_ign += len(ignored)
        order, labels, _ = match_detections(dets, evaluated, ignored, iou_threshold)
        for i, lab in zip(order, labels):
            scored.append((dets[i].score, lab))
    return scored, n_eval, n_ign


def log_average_miss_rate(dets_by_image: dict[str, list[Detection]],
                          gts_by_image: dict[str, list[GtBox]],
                          iou_threshold: float = MR_IOU_THRESHOLD,
                          ) -> tuple[float, list[tuple[float, float]], dict[str, int]]:
    """Log-average miss rate over nine FPPI reference points in [1e-2, 1].

    ``gts_by_image`` must list every image of the split (empty lists
    included); images absent from ``dets_by_image`` contribute no
    detections. Returns (mr2, [(fppi_ref, miss_rate)] * 9, counts).
    """
    n_images = len(gts_by_image)
    if n_images < 1:
        raise NoGroundTruth("no images to evaluate")
    scored, n_eval, n_ign = _scored_labels(dets_by_image, gts_by_image,
                                           iou_threshold, use_filter=True)
    if n_eval == 0:
        raise NoGroundTruth("no evaluated ground truth under the reasonable filter")

    scored.sort(key=lambda t: -t[0])
    points: list[tuple[float, float]] = []  # (fppi, miss rate) staircase
    tp = fp = 0
    k = 0
    while k < len(scored):
        score = scored[k][0]
        while k < len(scored) and scored[k][0] == score:
            lab = scored[k][1]
            tp += lab == "tp"
            fp += lab == "fp"
            k += 1
        points.append((fp / n_images, 1.0 - tp / n_eval))

    refs = np.logspace(-2.0, 0.0, 9)
    curve: list[tuple[float, float]] = []
    logs = []
    for ref in refs:
        candidates = [m for f, m in points if f <= ref]
        mr = min(candidates) if candidates else 1.0
        curve.append((float(ref), mr))
        logs.append(math.log(max(mr, MISS_RATE_FLOOR)))
    mr2 = math.exp(sum(logs) / len(logs))
    counts = {"gt": n_eval, "tp": tp, "fp": fp, "ignored": n_ign}
    return mr2, curve, counts


def _ap_at_iou(dets_by_image: dict[str, list[Detection]],
               gts_by_image: dict[str, list[GtBox]], iou_threshold: float,
               n_gt: int) -> float:
    """101-point interpolated AP at one IoU threshold, all gts evaluated."""
    ranked: list[tuple[float, str, int, str]] = []
    for image_id in sorted(gts_by_image):
        dets = dets_by_image.get(image_id, [])
        order, labels, _ = match_detections(dets, list(gts_by_image[image_id]), [],
                                            iou_threshold)
        for i, lab in zip(order, labels):
            ranked.append((dets[i].score, image_id, i, lab))
    ranked.sort(key=lambda t: (-t[0], t[1], t[2]))
    if not ranked:
        return 0.0
    tps = np.cumsum([t[3] == "tp" for t in ranked])
    ks = np.arange(1, len(ranked) + 1)
    precision = tps / ks
    recall = tps / n_gt
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        mask = recall >= r - 1e-12
        ap += float(precision[mask].max()) if mask.any() else 0.0
    return ap / 101.0


def coco_map(dets_by_image: dict[str, list[Detection]],
             gts_by_image: dict[str, list[GtBox]]
             ) -> tuple[float, float, float, dict[float, float]]:
    """COCO-style AP averaged over IoU 0.50..0.95 (all gts, no ignores)."""
    n_gt = sum(len(g) for g in gts_by_image.values())
    if n_gt == 0:
        raise NoGroundTruth("no ground truth boxes for AP")
    ap_per_iou = {t: _ap_at_iou(dets_by_image, gts_by_image, t, n_gt)
                  for t in COCO_IOUS}
    m = sum(ap_per_iou.values()) / len(ap_per_iou)
    return m, ap_per_iou[0.5], ap_per_iou[0.75], ap_per_iou


def evaluate(dets_by_image: dict[str, list[Detection]],
             gts_by_image: dict[str, list[GtBox]]) -> EvalReport:
    """Full protocol: miss-rate curve plus COCO AP on the same data."""
    mr2, curve, counts = log_average_miss_rate(dets_by_image, gts_by_image)
    m, ap50, ap75, per_iou = coco_map(dets_by_image, gts_by_image)
    return EvalReport(mr2=mr2, fppi_samples=curve, ap_per_iou=per_iou,
                      map_coco=m, ap50=ap50, ap75=ap75,
                      n_gt=counts["gt"], n_tp=counts["tp"], n_fp=counts["fp"],
                      n_ignored=counts["ignored"], n_images=len(gts_by_image))
