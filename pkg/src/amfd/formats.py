"""On-disk formats: images, annotations, detections, reports, checkpoints.

Everything is either line-delimited ASCII (locale-independent, floats via
``repr`` so values round-trip) or a documented little-endian binary:

* image files: one ASCII header line ``AMFDIMG 1 <C> <H> <W> float64le``
  followed by C*H*W little-endian float64 values, row-major;
* scene index (``scenes.txt``): ``<id> <width> <height> <channels> <tod>``;
* annotations (``annotations.txt``): ``<image_id> <x1> <y1> <x2> <y2>
  <category> <occlusion>`` with occlusion in {NO, LO, MO, HO};
* detections (``detections.txt``): ``<image_id> <x1> <y1> <x2> <y2> <score>``;
* loss curve (``losses.csv``): header ``step,<breakdown fields>``;
* checkpoint: magic ``AMFDCKPT``, u32 version, u32 count, then per array
  a u32-length-prefixed UTF-8 name, u32 rank, u32 dims, float64le data;
* manifest (``manifest.json``): canonical JSON of the deterministic run
  facts; wall-clock time goes to ``wallclock.txt`` beside it so manifests
  of identical runs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .mea import LossBreakdown
from .metrics import Detection, EvalReport
from .scenes import GtBox, Occlusion, Scene

IMAGE_MAGIC = "AMFDIMG"
CKPT_MAGIC = b"AMFDCKPT"
CKPT_VERSION = 1


# -- images -----------------------------------------------------------------------


def write_image(path: str, arr: np.ndarray) -> None:
    if arr.ndim != 3:
        raise DataError(f"image must be (C,H,W), got {arr.shape}")
    c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"{IMAGE_MAGIC} 1 {c} {h} {w} float64le\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_image(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii").split()
            if len(header) != 6 or header[0] != IMAGE_MAGIC or header[5] != "float64le":
                raise DataError(f"{path}: bad image header")
            c, h, w = (int(v) for v in header[2:5])
            data = np.frombuffer(fh.read(c * h * w * 8), dtype="<f8")
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    if data.size != c * h * w:
        raise DataError(f"{path}: truncated image payload")
    return data.reshape(c, h, w).astype(np.float64)


# -- scenes -----------------------------------------------------------------------


def scene_paths(directory: str, scene_id: str) -> tuple[str, str]:
    return (os.path.join(directory, f"{scene_id}_rgb.bin"),
            os.path.join(directory, f"{scene_id}_tir.bin"))


def write_scenes(directory: str, scenes: list[Scene]) -> None:
    os.makedirs(directory, exist_ok=True)
    index_lines = []
    ann_lines = []
    for s in scenes:
        rgb_path, tir_path = scene_paths(directory, s.scene_id)
        write_image(rgb_path, s.rgb)
        write_image(tir_path, s.tir)
        c, h, w = s.rgb.shape
        index_lines.append(f"{s.scene_id} {w} {h} {c} {s.tod}\n")
        for b in s.boxes:
            ann_lines.append(
                f"{s.scene_id} {float(b.x1)!r} {float(b.y1)!r} {float(b.x2)!r} "
                f"{float(b.y2)!r} {b.category} {b.occlusion.value}\n")
    with open(os.path.join(directory, "scenes.txt"), "w", encoding="ascii") as fh:
        fh.writelines(index_lines)
    with open(os.path.join(directory, "annotations.txt"), "w", encoding="ascii") as fh:
        fh.writelines(ann_lines)


def read_scenes(directory: str) -> list[Scene]:
    index_path = os.path.join(directory, "scenes.txt")
    ann_path = os.path.join(directory, "annotations.txt")
    boxes: dict[str, list[GtBox]] = {}
    try:
        with open(ann_path, "r", encoding="ascii") as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 7:
                    raise DataError(f"{ann_path}: bad annotation line {line!r}")
                sid = parts[0]
                try:
                    occ = Occlusion(parts[6])
                except ValueError as e:
                    raise DataError(f"{ann_path}: bad occlusion {parts[6]!r}") from e
                boxes.setdefault(sid, []).append(GtBox(
                    x1=float(parts[1]), y1=float(parts[2]),
                    x2=float(parts[3]), y2=float(parts[4]),
                    category=parts[5], occlusion=occ))
        scenes = []
        with open(index_path, "r", encoding="ascii") as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 5 or parts[4] not in ("day", "night"):
                    raise DataError(f"{index_path}: bad scene line {line!r}")
                sid = parts[0]
                rgb_path, tir_path = scene_paths(directory, sid)
                scenes.append(Scene(scene_id=sid, rgb=read_image(rgb_path),
                                    tir=read_image(tir_path),
                                    boxes=boxes.get(sid, []), tod=parts[4],
                                    seed=0))
    except OSError as e:
        raise DataError(f"cannot read dataset in {directory}: {e}") from e
    return scenes


# -- detections ---------------------------------------------------------------------


def write_detections(path: str, dets_by_image: dict[str, list[Detection]]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for image_id in sorted(dets_by_image):
            for d in dets_by_image[image_id]:
                x1, y1, x2, y2 = (float(v) for v in d.box)
                fh.write(f"{image_id} {x1!r} {y1!r} {x2!r} {y2!r} "
                         f"{float(d.score)!r}\n")


def read_detections(path: str) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    try:
        with open(path, "r", encoding="ascii") as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 6:
                    raise DataError(f"{path}: bad detection line {line!r}")
                out.setdefault(parts[0], []).append(Detection(
                    box=tuple(float(v) for v in parts[1:5]),
                    score=float(parts[5]), image_id=parts[0]))
    except OSError as e:
        raise DataError(f"cannot read detections {path}: {e}") from e
    return out


# -- loss curve ---------------------------------------------------------------------


def write_loss_csv(path: str, history: list[LossBreakdown],
                   start_step: int = 0) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("step," + ",".join(LossBreakdown.FIELDS) + "\n")
        for i, b in enumerate(history, start=start_step):
            fh.write(f"{i}," + ",".join(repr(float(getattr(b, f)))
                                        for f in LossBreakdown.FIELDS) + "\n")


def read_loss_csv(path: str) -> list[LossBreakdown]:
    try:
        with open(path, "r", encoding="ascii") as fh:
            header = fh.readline().strip().split(",")
            if header != ["step"] + list(LossBreakdown.FIELDS):
                raise DataError(f"{path}: unexpected loss CSV header")
            out = []
            for line in fh:
                vals = line.strip().split(",")
                if len(vals) != len(header):
                    raise DataError(f"{path}: bad loss CSV row")
                b = LossBreakdown()
                for name, raw in zip(LossBreakdown.FIELDS, vals[1:]):
                    setattr(b, name, float(raw))
                out.append(b)
    except OSError as e:
        raise DataError(f"cannot read loss csv {path}: {e}") from e
    return out


# -- evaluation reports --------------------------------------------------------------


def eval_report_lines(report: EvalReport) -> list[str]:
    lines = [
        f"mr2 = {float(report.mr2)!r}",
        f"map = {float(report.map_coco)!r}",
        f"ap50 = {float(report.ap50)!r}",
        f"ap75 = {float(report.ap75)!r}",
        f"n_gt = {report.n_gt}",
        f"n_tp = {report.n_tp}",
        f"n_fp = {report.n_fp}",
        f"n_ignored = {report.n_ignored}",
        f"n_images = {report.n_images}",
        "fppi_curve = " + " ".join(f"{float(f)!r}:{float(m)!r}"
                                   for f, m in report.fppi_samples),
        "ap_per_iou = " + " ".join(f"{t:.2f}:{float(a)!r}"
                                   for t, a in sorted(report.ap_per_iou.items())),
    ]
    return lines


def write_eval_report(path: str, reports: dict[str, EvalReport]) -> None:
    """Sections: [all] plus [day]/[night] when those splits are non-empty."""
    with open(path, "w", encoding="ascii") as fh:
        for split in ("all", "day", "night"):
            if split not in reports:
                continue
            fh.write(f"[{split}]\n")
            for line in eval_report_lines(reports[split]):
                fh.write(line + "\n")
            fh.write("\n")


# -- checkpoints ----------------------------------------------------------------------


def write_checkpoint(path: str, arrays: dict[str, np.ndarray]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.ndim:  # ascontiguousarray would promote rank-0 to rank-1
                arr = np.ascontiguousarray(arr)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())
    os.replace(tmp, path)


def read_checkpoint(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
                raise DataError(f"{path}: not a checkpoint file")
            version, count = struct.unpack("<II", fh.read(8))
            if version != CKPT_VERSION:
                raise DataError(f"{path}: unsupported checkpoint version {version}")
            out: dict[str, np.ndarray] = {}
            for _ in range(count):
                (name_len,) = struct.unpack("<I", fh.read(4))
                name = fh.read(name_len).decode("utf-8")
                (rank,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
                n = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(8 * n), dtype="<f8")
                if data.size != n:
                    raise DataError(f"{path}: truncated checkpoint array {name}")
                out[name] = data.reshape(shape).astype(np.float64)
    except (OSError, struct.error) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    return out


# -- manifest ----------------------------------------------------------------------------


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Deterministic facts of one training run plus its wall-clock time.

    The wall clock is serialized to a sidecar file, not the manifest, so
    identical (config, seed) runs produce byte-identical manifests.
    """

    config_text: str
    config_hash: str
    seed: int
    code_version: str
    steps: int
    loss_csv_sha256: str
    checkpoint_sha256: str
    eval: dict
    wall_clock_s: float = 0.0

    def to_json(self) -> str:
        payload = {
            "format": "amfd-manifest-v1",
            "config_text": self.config_text,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "code_version": self.code_version,
            "steps": self.steps,
            "loss_csv_sha256": self.loss_csv_sha256,
            "checkpoint_sha256": self.checkpoint_sha256,
            "eval": self.eval,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str, wall_clock_s: float = 0.0) -> "RunManifest":
        try:
            payload = json.loads(text)
            if payload.get("format") != "amfd-manifest-v1":
                raise DataError("not an amfd manifest")
            return cls(config_text=payload["config_text"],
                       config_hash=payload["config_hash"],
                       seed=payload["seed"], code_version=payload["code_version"],
                       steps=payload["steps"],
                       loss_csv_sha256=payload["loss_csv_sha256"],
                       checkpoint_sha256=payload["checkpoint_sha256"],
                       eval=payload["eval"], wall_clock_s=wall_clock_s)
        except (json.JSONDecodeError, KeyError) as e:
            raise DataError(f"malformed manifest: {e}") from e


def write_manifest(directory: str, manifest: RunManifest) -> None:
    tmp = os.path.join(directory, "manifest.json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json())
    os.replace(tmp, os.path.join(directory, "manifest.json"))
    with open(os.path.join(directory, "wallclock.txt"), "w", encoding="ascii") as fh:
        fh.write(f"{manifest.wall_clock_s!r}\n")


def read_manifest(directory: str) -> RunManifest:
    try:
        with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
            text = fh.read()
        wall = 0.0
        wc_path = os.path.join(directory, "wallclock.txt")
        if os.path.exists(wc_path):
            with open(wc_path, "r", encoding="ascii") as fh:
                wall = float(fh.read().strip())
    except OSError as e:
        raise DataError(f"cannot read manifest in {directory}: {e}") from e
    return RunManifest.from_json(text, wall_clock_s=wall)


# -- attention grids -----------------------------------------------------------------------


def write_csv_grid(path: str, grid: np.ndarray) -> None:
    if grid.ndim != 2:
        raise DataError(f"attention grid must be 2-D, got {grid.shape}")
    with open(path, "w", encoding="ascii") as fh:
        for row in grid:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv_grid(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="ascii") as fh:
            rows = [[float(v) for v in line.strip().split(",")]
                    for line in fh if line.strip()]
    except OSError as e:
        raise DataError(f"cannot read grid {path}: {e}") from e
    return np.asarray(rows, dtype=np.float64)
