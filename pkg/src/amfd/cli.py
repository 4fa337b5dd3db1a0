"""Batch command-line front end.

Commands: ``gen-data``, ``train``, ``eval``, ``ablate``,
``export-attention``. Every command takes ``--config PATH`` (defaults
apply when omitted) and repeatable ``--set section.key=value`` overrides.
Relative output/dataset paths resolve against $AMFD_OUTPUT_ROOT when set.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import __version__
from .attention import attention_arrays
from .config import (
    ExperimentConfig,
    config_hash,
    config_text,
    default_config,
    load_config,
    parse_config,
    validate_overrides,
)
from .errors import (
    AmfdError,
    BadSpec,
    DataError,
    NoGroundTruth,
    NonFiniteLoss,
    NonFiniteValue,
)
from .formats import (
    RunManifest,
    read_checkpoint,
    read_scenes,
    sha256_file,
    write_checkpoint,
    write_csv_grid,
    write_detections,
    write_eval_report,
    write_loss_csv,
    write_manifest,
    write_scenes,
)
from .scenes import generate_split
from .toynet import (
    StudentModel,
    SyntheticDataset,
    detections_for_scenes,
    evaluate_student_splits,
    run_distillation,
    state_arrays,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="amfd", description=__doc__)
    parser.add_argument("--version", action="version", version=f"amfd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file (defaults if omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config value")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset directory")
    common(p)

    p = sub.add_parser("train", help="train the student under the configured plan")
    common(p)
    p.add_argument("--resume", metavar="CHECKPOINT",
                   help="continue a run from a checkpoint file")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")

    p = sub.add_parser("ablate", help="run none/traditional/amfd arms and tabulate")
    common(p)

    p = sub.add_parser("export-attention",
                       help="dump spatial attention grids for one scene")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene-id", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    return parser


def _load_cfg(args) -> ExperimentConfig:
    try:
        validate_overrides(args.overrides)
    except BadSpec as e:  # command-line misuse, not a data problem
        raise UsageError(str(e)) from e
    if args.config:
        return load_config(args.config, args.overrides)
    return parse_config(config_text(default_config()), args.overrides)


def _split_dir(cfg: ExperimentConfig, split: str) -> str:
    return os.path.join(cfg.resolve_dataset_dir(), split)


def _check_dataset_spec(cfg: ExperimentConfig) -> None:
    spec_path = os.path.join(cfg.resolve_dataset_dir(), "spec.ini")
    if not os.path.exists(spec_path):
        return
    with open(spec_path, "r", encoding="utf-8") as fh:
        stored = fh.read()
    current = _dataset_section_text(cfg)
    if stored != current:
        raise DataError("dataset directory was generated with a different "
                        "[dataset] spec; regenerate it or fix the config")


def _dataset_section_text(cfg: ExperimentConfig) -> str:
    text = config_text(cfg)
    lines = []
    keep = False
    for line in text.splitlines():
        if line.startswith("["):
            keep = line == "[dataset]"
        if keep and line.strip():
            lines.append(line)
    return "\n".join(lines) + "\n"


def _load_dataset(cfg: ExperimentConfig) -> SyntheticDataset:
    train_dir, test_dir = _split_dir(cfg, "train"), _split_dir(cfg, "test")
    if not (os.path.isdir(train_dir) and os.path.isdir(test_dir)):
        raise DataError(f"dataset not found under {cfg.resolve_dataset_dir()!r}; "
                        "run `amfd gen-data` first")
    _check_dataset_spec(cfg)
    train = read_scenes(train_dir)
    test = read_scenes(test_dir)
    return SyntheticDataset.from_scenes(cfg.dataset, train, test)


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    root = cfg.resolve_dataset_dir()
    os.makedirs(root, exist_ok=True)
    for split in ("train", "test"):
        write_scenes(_split_dir(cfg, split), generate_split(cfg.dataset, split))
    with open(os.path.join(root, "spec.ini"), "w", encoding="utf-8") as fh:
        fh.write(_dataset_section_text(cfg))
    n = cfg.dataset.train_scenes + cfg.dataset.test_scenes
    print(f"wrote {n} scenes ({cfg.dataset.train_scenes} train, "
          f"{cfg.dataset.test_scenes} test) to {root}")
    return 0


def _run_arm(cfg: ExperimentConfig, data: SyntheticDataset, run_dir: str,
             resume_path: str | None = None) -> dict:
    """Train one configuration, write all run artifacts, return the eval dict."""
    os.makedirs(run_dir, exist_ok=True)
    resume_arrays = start = None
    if resume_path:
        resume_arrays = read_checkpoint(resume_path)
        start = int(resume_arrays["meta.step"])
    t0 = time.perf_counter()
    res = run_distillation(cfg.train, data, resume=resume_arrays,
                           start_step=start or 0)
    wall = time.perf_counter() - t0

    ckpt_path = os.path.join(run_dir, "checkpoint.bin")
    write_checkpoint(ckpt_path, state_arrays(res.model, res.plan, res.optim,
                                             step=cfg.train.iterations))
    csv_path = os.path.join(run_dir, "losses.csv")
    write_loss_csv(csv_path, res.history, start_step=start or 0)
    reports = evaluate_student_splits(res.model, data.test_scenes,
                                      cfg.dataset.image_size)
    write_eval_report(os.path.join(run_dir, "eval.txt"), reports)
    eval_dict = {split: rep.as_dict() for split, rep in reports.items()}
    manifest = RunManifest(
        config_text=config_text(cfg),
        config_hash=config_hash(cfg),
        seed=cfg.train.seed,
        code_version=__version__,
        steps=len(res.history),
        loss_csv_sha256=sha256_file(csv_path),
        checkpoint_sha256=sha256_file(ckpt_path),
        eval=eval_dict,
        wall_clock_s=wall,
    )
    write_manifest(run_dir, manifest)
    if not cfg.output.export_loss_csv:
        os.remove(csv_path)
    if cfg.output.export_attention and data.test_scenes:
        _export_attention_grids(res.model, data, data.test_scenes[0].scene_id,
                                os.path.join(run_dir, "attention"))
    return eval_dict


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data = _load_dataset(cfg)
    run_dir = cfg.resolve_output_dir()
    eval_dict = _run_arm(cfg, data, run_dir, resume_path=args.resume)
    alls = eval_dict.get("all", {})
    print(f"run written to {run_dir}  "
          f"(mr2={alls.get('mr2', float('nan')):.4f}, map={alls.get('map', 0.0):.4f})")
    return 0


def _load_student(cfg: ExperimentConfig, checkpoint: str) -> StudentModel:
    arrays = read_checkpoint(checkpoint)
    model = StudentModel.create(img_channels=cfg.dataset.channels,
                                seed=cfg.train.seed)
    for name, t in model.named_tensors():
        if name not in arrays:
            raise DataError(f"checkpoint lacks parameter {name}; "
                            "was it written by a compatible config?")
        if arrays[name].shape != t.data.shape:
            raise DataError(f"checkpoint parameter {name} has shape "
                            f"{arrays[name].shape}, expected {t.data.shape}")
        t.data[...] = arrays[name]
    return model


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    scenes = read_scenes(_split_dir(cfg, args.split))
    if not scenes:
        raise NoGroundTruth(f"split {args.split!r} contains no scenes")
    model = _load_student(cfg, args.checkpoint)
    reports = evaluate_student_splits(model, scenes, cfg.dataset.image_size)
    out_dir = cfg.resolve_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, f"eval_{args.split}.txt")
    write_eval_report(report_path, reports)
    write_detections(os.path.join(out_dir, f"detections_{args.split}.txt"),
                     detections_for_scenes(model, scenes, cfg.dataset.image_size))
    alls = reports["all"]
    print(f"{report_path}: mr2={alls.mr2:.4f} map={alls.map_coco:.4f} "
          f"ap50={alls.ap50:.4f} ap75={alls.ap75:.4f}")
    return 0


ABLATION_ARMS = ("none", "traditional", "amfd")


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    data = _load_dataset(cfg)
    out_root = cfg.resolve_output_dir()
    rows = []
    for arm in ABLATION_ARMS:
        arm_cfg = parse_config(config_text(cfg), [f"train.plan={arm}"])
        eval_dict = _run_arm(arm_cfg, data, os.path.join(out_root, "ablate", arm))
        alls = eval_dict["all"]
        rows.append({
            "arm": arm,
            "map": alls["map"], "ap50": alls["ap50"], "ap75": alls["ap75"],
            "mr2_all": alls["mr2"],
            "mr2_day": eval_dict.get("day", {}).get("mr2", float("nan")),
            "mr2_night": eval_dict.get("night", {}).get("mr2", float("nan")),
        })
    os.makedirs(out_root, exist_ok=True)
    header = ["arm", "map", "ap50", "ap75", "mr2_all", "mr2_day", "mr2_night"]
    with open(os.path.join(out_root, "ablation.csv"), "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row["arm"] if k == "arm" else repr(row[k])
                              for k in header) + "\n")
    widths = [12, 8, 8, 8, 9, 9, 9]
    lines = ["".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        cells = [row["arm"]] + [f"{row[k]:.4f}" for k in header[1:]]
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    table = "\n".join(lines) + "\n"
    with open(os.path.join(out_root, "ablation.txt"), "w", encoding="ascii") as fh:
        fh.write(table)
    print(table, end="")
    return 0


def _export_attention_grids(model: StudentModel, data: SyntheticDataset,
                            scene_id: str, out_dir: str) -> None:
    scenes = {s.scene_id: s for s in data.train_scenes + data.test_scenes}
    if scene_id not in scenes:
        raise DataError(f"scene {scene_id!r} not found in the dataset")
    scene = scenes[scene_id]
    feats = data.teacher.features(scene)
    pyramid, _ = model.forward(scene.rgb, scene.tir)
    sources = {
        "teacher_rgb": feats.x_rgb,
        "teacher_tir": feats.x_tir,
        "teacher_fused": feats.x_fused_stub,
        "student_fused": [lv.data for lv in pyramid.levels],
    }
    os.makedirs(out_dir, exist_ok=True)
    for source, levels in sources.items():
        for li, feat in enumerate(levels):
            grid, _ = attention_arrays(feat)
            write_csv_grid(os.path.join(
                out_dir, f"{scene_id}_{source}_level{li}.csv"), grid)


def cmd_export_attention(args) -> int:
    cfg = _load_cfg(args)
    data = _load_dataset(cfg)
    model = _load_student(cfg, args.checkpoint)
    out_dir = os.path.join(cfg.resolve_output_dir(), "attention")
    _export_attention_grids(model, data, args.scene_id, out_dir)
    print(f"wrote attention grids for {args.scene_id} to {out_dir}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "export-attention": cmd_export_attention,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (NonFiniteLoss, NonFiniteValue) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (AmfdError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
