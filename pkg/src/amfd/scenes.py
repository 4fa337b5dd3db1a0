"""Synthetic multispectral scenes with occlusion-annotated pedestrian blobs.

Each scene is a pair of aligned single-plane images (an RGB-like and a
thermal-like channel) containing elliptical "pedestrian" blobs over noisy
background. Blob contrast depends on the time of day: at night the RGB
contrast collapses while thermal stays strong, by day both are visible.
Later-placed blobs occlude earlier ones; the occluded fraction of each
box is bucketed into the four annotation levels.

Generation is a pure function of (spec, index), so datasets are fully
reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import BadSpec


class Occlusion(Enum):
    NO = "NO"   # not occluded at all
    LO = "LO"   # occluded fraction under 0.3
    MO = "MO"   # occluded fraction in [0.3, 0.6)
    HO = "HO"   # occluded fraction in [0.6, 0.9)


# Placements that would push any blob's occluded fraction to this level or
# beyond are rejected (such objects would not be annotated at all).
MAX_OCCLUSION = 0.9


def occlusion_bucket(fraction: float) -> Occlusion | None:
    """Bucket an occluded-area fraction; None means too occluded to annotate."""
    if fraction <= 0.0:
        return Occlusion.NO
    if fraction < 0.3:
        return Occlusion.LO
    if fraction < 0.6:
        return Occlusion.MO
    if fraction < MAX_OCCLUSION:
        return Occlusion.HO
    return None


@dataclass(frozen=True)
class GtBox:
    """Axis-aligned ground-truth box in image pixels."""

    x1: float
    y1: float
    x2: float
    y2: float
    category: str = "pedestrian"
    occlusion: Occlusion = Occlusion.NO

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise BadSpec(f"degenerate box {(self.x1, self.y1, self.x2, self.y2)}")

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class SceneSpec:
    """Knobs of the synthetic benchmark generator."""

    image_size: int = 96
    channels: int = 1
    train_scenes: int = 64
    test_scenes: int = 48
    min_objects: int = 1
    max_objects: int = 3
    min_height: float = 28.0
    max_height: float = 84.0
    min_aspect: float = 0.38
    max_aspect: float = 0.55
    overlap_prob: float = 0.35
    day_fraction: float = 0.5
    noise_sigma: float = 0.08
    clutter_sigma: float = 0.0
    clutter_cell: int = 8
    night_rgb_clutter_boost: float = 1.0
    day_tir_clutter_boost: float = 1.0
    background: float = 0.25
    day_rgb_contrast: float = 1.0
    day_tir_contrast: float = 0.7
    night_rgb_contrast: float = 0.2
    night_tir_contrast: float = 1.0
    seed: int = 7
    teacher_seed: int = 1000

    def __post_init__(self):
        if self.image_size < 16 or self.image_size % 8:
            raise BadSpec("image_size must be >= 16 and divisible by 8")
        if self.channels < 1:
            raise BadSpec("channels must be positive")
        if self.min_objects < 0 or self.max_objects < self.min_objects:
            raise BadSpec("object count range is invalid")
        if not (0 < self.min_height <= self.max_height <= self.image_size):
            raise BadSpec("height range is invalid")
        if not (0 < self.min_aspect <= self.max_aspect):
            raise BadSpec("aspect range is invalid")
        if not 0 <= self.day_fraction <= 1:
            raise BadSpec("day_fraction must lie in [0, 1]")
        if self.noise_sigma < 0 or self.clutter_sigma < 0:
            raise BadSpec("noise amplitudes must be >= 0")
        if self.night_rgb_clutter_boost < 0 or self.day_tir_clutter_boost < 0:
            raise BadSpec("clutter boosts must be >= 0")
        if self.clutter_cell < 1 or self.image_size % self.clutter_cell:
            raise BadSpec("clutter_cell must divide image_size")
        for name in ("day_rgb_contrast", "day_tir_contrast",
                     "night_rgb_contrast", "night_tir_contrast"):
            if getattr(self, name) < 0:
                raise BadSpec(f"{name} must be >= 0")


@dataclass(frozen=True)
class Blob:
    """One rendered ellipse; the box is its integer pixel bounding box."""

    cx: float
    cy: float
    rx: float
    ry: float

    def bounds(self, size: int) -> tuple[int, int, int, int]:
        x1 = max(0, int(math.floor(self.cx - self.rx)))
        y1 = max(0, int(math.floor(self.cy - self.ry)))
        x2 = min(size, int(math.ceil(self.cx + self.rx)))
        y2 = min(size, int(math.ceil(self.cy + self.ry)))
        return x1, y1, x2, y2


@dataclass
class Scene:
    """Aligned modality pair plus annotations."""

    scene_id: str
    rgb: np.ndarray  # (C, H, W)
    tir: np.ndarray  # (C, H, W)
    boxes: list[GtBox]
    tod: str  # "day" | "night"
    seed: int

    def __post_init__(self):
        if self.rgb.shape != self.tir.shape:
            raise BadSpec("modalities must share shape")
        if self.tod not in ("day", "night"):
            raise BadSpec(f"tod must be day or night, got {self.tod!r}")


def _occluded_fractions(blobs: list[Blob], size: int) -> list[float]:
    """Fraction of each blob's box covered by later-placed (nearer) boxes."""
    fracs = []
    for i, b in enumerate(blobs):
        x1, y1, x2, y2 = b.bounds(size)
        area = (x2 - x1) * (y2 - y1)
        if area <= 0:
            fracs.append(1.0)
            continue
        cover = np.zeros((y2 - y1, x2 - x1), dtype=bool)
        for other in blobs[i + 1:]:
            ox1, oy1, ox2, oy2 = other.bounds(size)
            ix1, iy1 = max(x1, ox1), max(y1, oy1)
            ix2, iy2 = min(x2, ox2), min(y2, oy2)
            if ix2 > ix1 and iy2 > iy1:
                cover[iy1 - y1:iy2 - y1, ix1 - x1:ix2 - x1] = True
        fracs.append(float(cover.sum()) / area)
    return fracs


def _sample_blobs(spec: SceneSpec, rng: np.random.Generator) -> list[Blob]:
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    size = spec.image_size
    blobs: list[Blob] = []
    for _ in range(count):
        h = float(rng.uniform(spec.min_height, spec.max_height))
        w = h * float(rng.uniform(spec.min_aspect, spec.max_aspect))
        ry, rx = h / 2.0, w / 2.0
        placed = False
        for _attempt in range(20):
            if blobs and rng.uniform() < spec.overlap_prob:
                anchor = blobs[int(rng.integers(0, len(blobs)))]
                cx = anchor.cx + float(rng.uniform(-anchor.rx, anchor.rx))
                cy = anchor.cy + float(rng.uniform(-anchor.ry, anchor.ry))
                cx = min(max(cx, rx), size - rx)
                cy = min(max(cy, ry), size - ry)
            else:
                cx = float(rng.uniform(rx, size - rx))
                cy = float(rng.uniform(ry, size - ry))
            candidate = blobs + [Blob(cx=cx, cy=cy, rx=rx, ry=ry)]
            if all(f < MAX_OCCLUSION for f in _occluded_fractions(candidate, size)):
                blobs = candidate
                placed = True
                break
        if not placed:
            continue  # crowded scene; skip this object
    return blobs


def _clutter_field(rng: np.random.Generator, size: int, cell: int) -> np.ndarray:
    """Smooth unit-variance blotch field (structured background noise)."""
    coarse = rng.normal(0.0, 1.0, (size // cell + 2, size // cell + 2))
    up = np.repeat(np.repeat(coarse, cell, axis=0), cell, axis=1)
    acc = np.zeros((size, size))
    r = cell // 2
    for dy in (0, r):  # half-cell shifts smooth the block edges
        for dx in (0, r):
            acc += up[dy:dy + size, dx:dx + size]
    return acc / acc.std() if acc.std() > 0 else acc


def render_scene(blobs: list[Blob], tod: str, spec: SceneSpec,
                 noise_rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw blobs back to front (later blobs occlude earlier ones), add noise.

    Noise has a white component plus an independent structured blotch
    field per modality, so single-modality brightness alone is a poor
    pedestrian cue.
    """
    size = spec.image_size
    if tod == "day":
        c_rgb, c_tir = spec.day_rgb_contrast, spec.day_tir_contrast
    else:
        c_rgb, c_tir = spec.night_rgb_contrast, spec.night_tir_contrast
    yy, xx = np.mgrid[0:size, 0:size]
    dome = np.zeros((size, size))
    for b in blobs:
        rho2 = ((xx + 0.5 - b.cx) / b.rx) ** 2 + ((yy + 0.5 - b.cy) / b.ry) ** 2
        inside = rho2 <= 1.0
        dome[inside] = np.sqrt(1.0 - rho2[inside])  # nearer blobs overwrite
    base = np.full((size, size), spec.background)
    rgb = np.broadcast_to(base + c_rgb * dome, (spec.channels, size, size)).copy()
    tir = np.broadcast_to(base + c_tir * dome, (spec.channels, size, size)).copy()
    if spec.clutter_sigma > 0:
        rgb_clutter = spec.clutter_sigma
        tir_clutter = spec.clutter_sigma
        if tod == "night":
            rgb_clutter *= spec.night_rgb_clutter_boost  # street lights etc.
        else:
            tir_clutter *= spec.day_tir_clutter_boost  # sun-heated surfaces
        rgb += rgb_clutter * _clutter_field(noise_rng, size, spec.clutter_cell)
        tir += tir_clutter * _clutter_field(noise_rng, size, spec.clutter_cell)
    rgb += noise_rng.normal(0.0, spec.noise_sigma, rgb.shape)
    tir += noise_rng.normal(0.0, spec.noise_sigma, tir.shape)
    return rgb, tir


def annotate(blobs: list[Blob], size: int) -> list[GtBox]:
    """Bounding boxes with occlusion labels (rejection keeps all below 90%)."""
    fracs = _occluded_fractions(blobs, size)
    boxes = []
    for b, f in zip(blobs, fracs):
        bucket = occlusion_bucket(f)
        if bucket is None:
            continue
        x1, y1, x2, y2 = b.bounds(size)
        if x2 > x1 and y2 > y1:
            boxes.append(GtBox(x1=float(x1), y1=float(y1), x2=float(x2), y2=float(y2),
                               category="pedestrian", occlusion=bucket))
    return boxes


def tod_for_index(spec: SceneSpec, index: int) -> str:
    """Deterministic day/night interleave realizing the configured fraction."""
    before = math.floor(index * spec.day_fraction)
    after = math.floor((index + 1) * spec.day_fraction)
    return "day" if after > before else "night"


def generate_scene(spec: SceneSpec, index: int, prefix: str = "scene",
                   stream_offset: int = 0) -> Scene:
    """Deterministic scene: randomness keyed by (spec.seed, stream_offset+index)."""
    rng = np.random.default_rng([spec.seed, stream_offset + index])
    tod = tod_for_index(spec, index)
    blobs = _sample_blobs(spec, rng)
    rgb, tir = render_scene(blobs, tod, spec, rng)
    return Scene(scene_id=f"{prefix}_{index:04d}", rgb=rgb, tir=tir,
                 boxes=annotate(blobs, spec.image_size), tod=tod, seed=index)


def generate_split(spec: SceneSpec, split: str) -> list[Scene]:
    """All scenes of the 'train' or 'test' split (disjoint randomness streams)."""
    if split == "train":
        count, offset = spec.train_scenes, 0
    elif split == "test":
        count, offset = spec.test_scenes, 1_000_000
    else:
        raise BadSpec(f"unknown split {split!r}")
    return [generate_scene(spec, i, prefix=split, stream_offset=offset)
            for i in range(count)]
