"""Experiment configuration: sectioned key=value files plus CLI overrides.

The format is INI-style with four sections (``dataset``, ``train``,
``mea``, ``output``); every key maps 1:1 onto a dataclass field, so the
canonical serialization round-trips exactly and its SHA-256 identifies
the experiment. Overrides are ``section.key=value`` strings, applied
after the file.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field, fields

from .errors import BadSpec
from .mea import MEAConfig
from .scenes import SceneSpec
from .toynet import TrainConfig

ENV_OUTPUT_ROOT = "AMFD_OUTPUT_ROOT"


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/experiment"
    dataset_dir: str = "dataset"
    export_attention: bool = False
    export_loss_csv: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: SceneSpec = field(default_factory=SceneSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def resolve_output_dir(self) -> str:
        return _resolve(self.output.dir)

    def resolve_dataset_dir(self) -> str:
        return _resolve(self.output.dataset_dir)


def _resolve(path: str) -> str:
    root = os.environ.get(ENV_OUTPUT_ROOT, "")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


_SECTIONS = ("dataset", "train", "mea", "output")


def _section_fields(section: str):
    cls = {"dataset": SceneSpec, "train": TrainConfig,
           "mea": MEAConfig, "output": OutputConfig}[section]
    skip = {"train": ("mea",)}.get(section, ())
    return [f for f in fields(cls) if f.name not in skip]


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw: str, ftype) -> object:
    raw = raw.strip()
    if ftype is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise BadSpec(f"not a boolean: {raw!r}")
    try:
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
    except ValueError as e:
        raise BadSpec(f"bad numeric value {raw!r}") from e
    return raw


def _values_of(cfg: ExperimentConfig, section: str) -> dict[str, object]:
    obj = {"dataset": cfg.dataset, "train": cfg.train,
           "mea": cfg.train.mea, "output": cfg.output}[section]
    return {f.name: getattr(obj, f.name) for f in _section_fields(section)}


def config_text(cfg: ExperimentConfig) -> str:
    """Canonical serialization: fixed section and key order."""
    out = io.StringIO()
    for section in _SECTIONS:
        out.write(f"[{section}]\n")
        for name, value in _values_of(cfg, section).items():
            out.write(f"{name} = {_format_value(value)}\n")
        out.write("\n")
    return out.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_text(cfg).encode("utf-8")).hexdigest()


def _field_types(section: str) -> dict[str, type]:
    types = {}
    for f in _section_fields(section):
        t = f.type if isinstance(f.type, type) else {"int": int, "float": float,
                                                     "str": str, "bool": bool}.get(str(f.type))
        if t is None:
            raise BadSpec(f"unsupported config field type for {section}.{f.name}")
        types[f.name] = t
    return types


def validate_overrides(overrides: list[str]) -> None:
    """Check override syntax and key existence without applying them."""
    for spec in overrides:
        if "=" not in spec or "." not in spec.split("=", 1)[0]:
            raise BadSpec(f"override must look like section.key=value, got {spec!r}")
        target, raw = spec.split("=", 1)
        section, key = (p.strip() for p in target.split(".", 1))
        if section not in _SECTIONS:
            raise BadSpec(f"unknown config section {section!r}")
        types = _field_types(section)
        if key not in types:
            raise BadSpec(f"unknown config key {section}.{key}")
        _parse_value(raw, types[key])


def parse_config(text: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse config text, then apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise BadSpec(f"malformed config: {e}") from e
    values: dict[str, dict[str, object]] = {}
    for section in _SECTIONS:
        types = _field_types(section)
        values[section] = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in types:
                    raise BadSpec(f"unknown config key {section}.{key}")
                values[section][key] = _parse_value(raw, types[key])
    for spec in overrides or []:
        if "=" not in spec or "." not in spec.split("=", 1)[0]:
            raise BadSpec(f"override must look like section.key=value, got {spec!r}")
        target, raw = spec.split("=", 1)
        section, key = target.split(".", 1)
        section, key = section.strip(), key.strip()
        if section not in _SECTIONS:
            raise BadSpec(f"unknown config section {section!r}")
        types = _field_types(section)
        if key not in types:
            raise BadSpec(f"unknown config key {section}.{key}")
        values[section][key] = _parse_value(raw, types[key])
    try:
        mea = MEAConfig(**values["mea"])
        dataset = SceneSpec(**values["dataset"])
        train = TrainConfig(mea=mea, **values["train"])
        output = OutputConfig(**values["output"])
    except TypeError as e:
        raise BadSpec(f"bad config: {e}") from e
    return ExperimentConfig(dataset=dataset, train=train, output=output)


def load_config(path: str, overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise BadSpec(f"cannot read config {path}: {e}") from e
    return parse_config(text, overrides)


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
