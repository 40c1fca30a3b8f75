"""
Run configuration: YAML file -> validated, fully-defaulted RunConfig.

Validation walks a JSON-Schema-style dict (type, properties, required, enum,
minimum/exclusiveMinimum, items, minItems, additionalProperties).  Unknown
keys are rejected with their dotted path; constraint failures name the
field and the constraint.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)


# ======================================================================
# Schema
# ======================================================================

_POS_NUMBER = {"type": "number", "exclusiveMinimum": 0}
_NONNEG_NUMBER = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_LAYERS = {"type": "array", "items": _POS_INT}


def _section(properties: Dict[str, Any], required=()) -> Dict[str, Any]:
    return {
        "type": "object",
        "properties": properties,
        "required": list(required),
        "additionalProperties": False,
    }


SCHEMA = _section({
    "mode": {"type": "string"},
    "dataset": _section({
        "kind": {"type": "string", "enum": ["blobs", "idx"]},
        "num_classes": {"type": "integer", "minimum": 2},
        "per_class": _POS_INT,
        "dim": {"type": "integer", "minimum": 2},
        "spread": _POS_NUMBER,
        "seed": _NONNEG_INT,
        "images": {"type": "string"},
        "labels": {"type": "string"},
        "downsample_to": _POS_INT,
    }, required=["kind"]),
    "federation": _section({
        "nodes": _POS_INT,
        "alpha": _POS_NUMBER,
        "test_fraction": {"type": "number", "exclusiveMinimum": 0,
                          "exclusiveMaximum": 1},
    }),
    "seeds": {"type": "array", "items": _NONNEG_INT, "minItems": 1},
    "architectures": _section({
        "teacher": _LAYERS,
        "student": _LAYERS,
        "generator": _LAYERS,
        "discriminator": _LAYERS,
        "teacher_per_node": {"type": "array", "items": _LAYERS},
        "activation": {"type": "string", "enum": ["relu", "tanh", "sigmoid"]},
        "patch": _POS_INT,
    }),
    "local": _section({
        "epochs": _POS_INT,
        "lr": _POS_NUMBER,
        "batch_size": _NONNEG_INT,
        "optimizer": {"type": "string", "enum": ["adam", "sgd"]},
    }),
    "distill": _section({
        "steps": _POS_INT,
        "batch_size": _POS_INT,
        "noise_dim": _POS_INT,
        "lr_generator": _POS_NUMBER,
        "lr_student": _POS_NUMBER,
        "lr_discriminator": _POS_NUMBER,
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "tau": _POS_NUMBER,
        "lambda_gan": _NONNEG_NUMBER,
        "lambda_conf": _NONNEG_NUMBER,
        "lambda_unique": _NONNEG_NUMBER,
        "lambda_mimic": _NONNEG_NUMBER,
        "ensemble": {"type": "string", "enum": ["importance", "average"]},
        "mimic": {"type": "string", "enum": ["l2", "kl"]},
        "gan_weighting": {"type": "string", "enum": ["local", "average"]},
        "running_decay": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "warmup_steps": _NONNEG_INT,
        "student_steps": _POS_INT,
        "replay_batches": _NONNEG_INT,
        "cosine": {"type": "boolean"},
    }),
    "fedavg": _section({
        "rounds": _POS_INT,
        "local_epochs": _POS_INT,
        "lr": _POS_NUMBER,
        "batch_size": _NONNEG_INT,
    }),
    "dp": _section({
        "enabled": {"type": "boolean"},
        "clip_norm": _POS_NUMBER,
        "noise_multiplier": _NONNEG_NUMBER,
    }),
    "eval_interval": _POS_INT,
    "output_dir": {"type": "string"},
    "save_checkpoints": {"type": "boolean"},
}, required=["mode", "dataset"])


# JSON Schema type -> Python type(s)
_TYPE_MAP = {
    "string": str,
    "integer": int,
    "number": (int, float),
    "boolean": bool,
    "array": list,
    "object": dict,
}


def _type_ok(value: Any, expected: str) -> bool:
    # bool is an int subclass; a YAML `true` must not pass as a number
    if expected in ("integer", "number") and isinstance(value, bool):
        return False
    return isinstance(value, _TYPE_MAP[expected])


def validate(doc: Any, schema: Dict[str, Any] = SCHEMA, path: str = ""):
    """Raise ConfigError on the first schema violation found."""
    name = path or "<root>"
    expected = schema.get("type")
    if expected and not _type_ok(doc, expected):
        raise ConfigError(f"'{name}' should be {expected}, "
                          f"got {type(doc).__name__}", name)

    if expected == "object":
        properties = schema.get("properties", {})
        for key in schema.get("required", []):
            if key not in doc:
                raise ConfigError(f"Missing required key: {_join(path, key)}",
                                  _join(path, key))
        for key, value in doc.items():
            sub = _join(path, str(key))
            if key not in properties:
                if schema.get("additionalProperties", True) is False:
                    raise ConfigError(f"Unknown key: {sub}", sub)
                continue
            validate(value, properties[key], sub)
        return

    if expected == "array":
        if len(doc) < schema.get("minItems", 0):
            raise ConfigError(f"'{name}' needs at least "
                              f"{schema['minItems']} item(s)", name)
        items = schema.get("items")
        if items:
            for i, value in enumerate(doc):
                validate(value, items, f"{name}[{i}]")
        return

    if "enum" in schema and doc not in schema["enum"]:
        raise ConfigError(f"'{name}' must be one of {schema['enum']}, "
                          f"got {doc!r}", name)
    checks = (
        ("minimum", lambda v, b: v >= b, ">="),
        ("exclusiveMinimum", lambda v, b: v > b, ">"),
        ("exclusiveMaximum", lambda v, b: v < b, "<"),
    )
    for key, ok, op in checks:
        if key in schema and not ok(doc, schema[key]):
            raise ConfigError(f"'{name}' must be {op} {schema[key]}, "
                              f"got {doc!r}", name)


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


# ======================================================================
# Typed config
# ======================================================================

@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"
    num_classes: int = 4
    per_class: int = 400
    dim: int = 2
    spread: float = 0.15
    seed: int = 0
    images: Optional[str] = None
    labels: Optional[str] = None
    downsample_to: int = 64


@dataclass(frozen=True)
class FederationConfig:
    nodes: int = 5
    alpha: float = 0.3
    test_fraction: float = 0.2


@dataclass(frozen=True)
class ArchitectureConfig:
    """Hidden-layer widths per role; input/output sizes come from the data."""

    teacher: Tuple[int, ...] = (64, 64)
    student: Tuple[int, ...] = (64, 64)
    generator: Tuple[int, ...] = (128, 128)
    discriminator: Tuple[int, ...] = (64,)
    teacher_per_node: Optional[Tuple[Tuple[int, ...], ...]] = None
    activation: str = "relu"
    patch: int = 2

    def teacher_hidden(self, k: int) -> Tuple[int, ...]:
        if self.teacher_per_node is not None:
            return self.teacher_per_node[k]
        return self.teacher


@dataclass(frozen=True)
class LocalConfig:
    epochs: int = 100
    lr: float = 0.01
    batch_size: int = 64        # 0 = full batch
    optimizer: str = "adam"


@dataclass(frozen=True)
class DistillConfig:
    steps: int = 1000
    batch_size: int = 64
    noise_dim: int = 32
    lr_generator: float = 1e-3
    lr_student: float = 5e-3
    lr_discriminator: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    tau: float = 1.0
    lambda_gan: float = 1.0
    lambda_conf: float = 1.0
    lambda_unique: float = 1.0
    # critic weight in G only; l2 mimic is a sum of squared logit gaps
    lambda_mimic: float = 0.01
    ensemble: str = "importance"
    mimic: str = "l2"
    gan_weighting: str = "local"
    running_decay: float = 0.9
    warmup_steps: int = 0
    student_steps: int = 5
    replay_batches: int = 200
    cosine: bool = True


@dataclass(frozen=True)
class FedAvgConfig:
    rounds: int = 20
    local_epochs: int = 5
    lr: float = 0.1
    batch_size: int = 0


@dataclass(frozen=True)
class DpSection:
    enabled: bool = False
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    mode: str
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    seeds: Tuple[int, ...] = (0, 1, 2)
    architectures: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    local: LocalConfig = field(default_factory=LocalConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    fedavg: FedAvgConfig = field(default_factory=FedAvgConfig)
    dp: DpSection = field(default_factory=DpSection)
    eval_interval: int = 50
    output_dir: str = "results"
    save_checkpoints: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return _thaw(dataclasses.asdict(self))

    def with_overrides(self, output_dir: str = None,
                       seed: int = None) -> "RunConfig":
        changes = {}
        if output_dir is not None:
            changes["output_dir"] = output_dir
        if seed is not None:
            changes["seeds"] = (int(seed),)
        return dataclasses.replace(self, **changes) if changes else self


_SECTIONS = {
    "dataset": DatasetConfig,
    "federation": FederationConfig,
    "architectures": ArchitectureConfig,
    "local": LocalConfig,
    "distill": DistillConfig,
    "fedavg": FedAvgConfig,
    "dp": DpSection,
}


def _freeze(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def _thaw(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [_thaw(v) for v in value]
    if isinstance(value, dict):
        return {k: _thaw(v) for k, v in value.items()}
    return value


def _cross_checks(cfg: RunConfig):
    ds = cfg.dataset
    if ds.kind == "idx" and not (ds.images and ds.labels):
        raise ConfigError("dataset.kind 'idx' needs both dataset.images "
                          "and dataset.labels", "dataset.images")
    per_node = cfg.architectures.teacher_per_node
    if per_node is not None and len(per_node) != cfg.federation.nodes:
        raise ConfigError(
            f"architectures.teacher_per_node has {len(per_node)} entries "
            f"for {cfg.federation.nodes} nodes",
            "architectures.teacher_per_node")
    if cfg.distill.warmup_steps >= cfg.distill.steps:
        raise ConfigError("distill.warmup_steps must be below distill.steps",
                          "distill.warmup_steps")


def from_dict(doc: Dict[str, Any], base_dir: str = None) -> RunConfig:
    """Validate a raw document and fill defaults."""
    if doc is None:
        raise ConfigError("Configuration is empty")
    validate(doc)
    kwargs: Dict[str, Any] = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            section = {k: _freeze(v) for k, v in value.items()}
            kwargs[key] = _SECTIONS[key](**section)
        else:
            kwargs[key] = _freeze(value)
    cfg = RunConfig(**kwargs)

    if base_dir and cfg.dataset.kind == "idx":
        resolved = {
            k: v if os.path.isabs(v) else os.path.normpath(os.path.join(base_dir, v))
            for k, v in (("images", cfg.dataset.images),
                         ("labels", cfg.dataset.labels)) if v
        }
        cfg = dataclasses.replace(
            cfg, dataset=dataclasses.replace(cfg.dataset, **resolved))
    _cross_checks(cfg)
    return cfg


def parse_config(path: str) -> RunConfig:
    """Read a YAML (or JSON) config file into a RunConfig."""
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML ({e})") from e
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = from_dict(doc, os.path.dirname(os.path.abspath(path)))
    logger.info("Loaded config %s (mode=%s, %d seed(s))",
                path, cfg.mode, len(cfg.seeds))
    return cfg


def write_config(cfg: RunConfig, path: str):
    """Dump the fully-defaulted config; parse_config reads it back equal."""
    doc = cfg.to_dict()
    for section in _SECTIONS:
        doc[section] = {k: v for k, v in doc[section].items() if v is not None}
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(doc, f, sort_keys=False)
