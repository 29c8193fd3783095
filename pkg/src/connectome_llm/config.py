"""Run configuration: one JSON document covering every pipeline stage.

Defaults follow the published model configuration (L=8, S=4, d_e=8, K=8,
V'=50, 30 epochs, lr 1e-3, OW-MSE w=20 at tau=0.9) with a desk-scale
backbone. Precedence is flags > file > defaults.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ValidationError
from .graph_distance import METRICS
from .patch_embed import PatchConfig

SEED_ENV = "CLK_SEED"


@dataclass
class WindowConfig:
    length: int = 20
    stride: int = 5


@dataclass
class ReprogramConfig:
    prototypes: int = 50
    heads: int = 8
    vocab_size: int = 1000
    vocab_file: str | None = None
    vocab_seed: int = 0


@dataclass
class BackboneSection:
    preset: str | None = None
    n_layers: int = 2
    d_h: int = 48
    n_attn_heads: int = 4
    d_ff: int = 96
    causal: bool = True
    positional: bool = False
    weight_file: str | None = None
    seed: int = 0
    # evaluate only the first k blocks of the built stack
    use_layers: int | None = None


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss: str = "ow_mse"
    # subjects per Adam step; null = full batch
    batch_size: int | None = 1
    pooling: str = "flatten"


@dataclass
class OwMseConfig:
    weight: float = 20.0
    tau: float = 0.9


@dataclass
class SplitPlan:
    train: float = 0.3
    val: float = 0.3
    test: float = 0.4
    n_repeats: int = 5
    seed: int = 0


@dataclass
class RunConfig:
    manifest: str | None = None
    window: WindowConfig = field(default_factory=WindowConfig)
    metrics: list[str] = field(default_factory=lambda: list(METRICS))
    wasserstein_p: float = 2.0
    revrin: bool = True
    patch: PatchConfig = field(default_factory=PatchConfig)
    reprogram: ReprogramConfig = field(default_factory=ReprogramConfig)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    ow_mse: OwMseConfig = field(default_factory=OwMseConfig)
    split: SplitPlan = field(default_factory=SplitPlan)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def replace(self, **changes) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"train.epochs": 3})``."""
        return from_dict(merge(self.to_dict(), dotted_to_nested(changes)))

    def validate(self, require_manifest: bool = False) -> "RunConfig":
        _validate(self, require_manifest)
        return self


_SECTIONS = {
    "window": WindowConfig,
    "patch": PatchConfig,
    "reprogram": ReprogramConfig,
    "backbone": BackboneSection,
    "train": TrainConfig,
    "ow_mse": OwMseConfig,
    "split": SplitPlan,
}


def _coerce(path: str, value: Any, annotation: str):
    ann = annotation.replace(" ", "")
    if value is None:
        if "None" in ann:
            return None
        raise ValidationError(f"config field {path!r} must not be null", field=path)
    base = ann.replace("|None", "")
    try:
        if base == "bool":
            if not isinstance(value, bool):
                raise TypeError
            return value
        if base == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if base == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if base == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
        if base == "list[str]":
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise TypeError
            return list(value)
    except (TypeError, ValueError):
        raise ValidationError(f"config field {path!r} expects {base}, got {value!r}", field=path) from None
    return value


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ValidationError(f"config section {prefix!r} must be an object", field=prefix)
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        path = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ValidationError(f"unknown config field {path!r}", field=path)
    kwargs = {}
    for name, value in data.items():
        path = f"{prefix}.{name}" if prefix else name
        if not prefix and name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], value, name)
        else:
            kwargs[name] = _coerce(path, value, str(known[name].type))
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def dotted_to_nested(flat: dict) -> dict:
    out: dict = {}
    for key, value in flat.items():
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def load_run_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Defaults, then the JSON file, then ``CLK_SEED`` for unset seeds, then flag overrides."""
    env = os.environ if env is None else env
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}", field="config") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}", field="config") from None
        if not isinstance(doc, dict):
            raise ValidationError("config root must be an object", field="config")
    seed_env = env.get(SEED_ENV)
    if seed_env not in (None, ""):
        try:
            seed = int(seed_env)
        except ValueError:
            raise ValidationError(f"{SEED_ENV} must be an integer, got {seed_env!r}", field=SEED_ENV) from None
        for section in ("train", "split"):
            sec = doc.setdefault(section, {})
            if isinstance(sec, dict):
                sec.setdefault("seed", seed)
    if overrides:
        doc = merge(doc, dotted_to_nested({k: v for k, v in overrides.items() if v is not None}))
    return from_dict(doc)


def _validate(cfg: RunConfig, require_manifest: bool) -> None:
    def fail(path, msg):
        raise ValidationError(f"config field {path!r}: {msg}", field=path)

    if require_manifest:
        if cfg.manifest is None:
            fail("manifest", "missing (set it in the config or pass --manifest)")
        if not Path(cfg.manifest).exists():
            fail("manifest", f"path {cfg.manifest!r} does not exist")
    if cfg.window.length < 2:
        fail("window.length", "must be >= 2")
    if cfg.window.stride < 1:
        fail("window.stride", "must be >= 1")
    if not cfg.metrics:
        fail("metrics", "must list at least one metric")
    bad = [m for m in cfg.metrics if m not in METRICS]
    if bad:
        fail("metrics", f"unknown {bad}; choose from {list(METRICS)}")
    if len(set(cfg.metrics)) != len(cfg.metrics):
        fail("metrics", "duplicates")
    if cfg.wasserstein_p < 1:
        fail("wasserstein_p", "must be >= 1")
    p = cfg.patch
    if p.length < 1 or p.embed_dim < 1 or p.stride < 1:
        fail("patch", "length, stride and embed_dim must be positive")
    if p.stride > p.length:
        fail("patch.stride", f"stride {p.stride} exceeds patch length {p.length}")
    r, b = cfg.reprogram, cfg.backbone
    if r.heads < 1 or b.d_h % r.heads:
        fail("reprogram.heads", f"K={r.heads} must divide d_h={b.d_h}")
    if r.vocab_file is None and not 1 <= r.prototypes <= r.vocab_size:
        fail("reprogram.prototypes", f"must be in [1, vocab_size={r.vocab_size}]")
    if r.vocab_file is not None and not Path(r.vocab_file).exists():
        fail("reprogram.vocab_file", f"path {r.vocab_file!r} does not exist")
    if b.preset is not None and b.preset not in ("gpt2", "llama", "bert"):
        fail("backbone.preset", f"unknown preset {b.preset!r}")
    if b.n_layers < 1:
        fail("backbone.n_layers", "must be >= 1")
    if b.n_attn_heads < 1 or b.d_h % b.n_attn_heads:
        fail("backbone.n_attn_heads", f"must divide d_h={b.d_h}")
    if b.weight_file is not None and not Path(b.weight_file).exists():
        fail("backbone.weight_file", f"path {b.weight_file!r} does not exist")
    if b.use_layers is not None and b.use_layers < 1:
        fail("backbone.use_layers", "must be >= 1")
    t = cfg.train
    if t.epochs < 1:
        fail("train.epochs", "must be >= 1")
    if t.learning_rate < 0:
        fail("train.learning_rate", "must be >= 0")
    if t.loss not in ("ow_mse", "mse"):
        fail("train.loss", "must be 'ow_mse' or 'mse'")
    if t.pooling not in ("flatten", "last"):
        fail("train.pooling", "must be 'flatten' or 'last'")
    if t.batch_size is not None and t.batch_size < 1:
        fail("train.batch_size", "must be >= 1 or null for full batch")
    if cfg.ow_mse.weight < 1:
        fail("ow_mse.weight", "must be >= 1")
    if not 0 < cfg.ow_mse.tau < 1:
        fail("ow_mse.tau", "must be in (0, 1)")
    s = cfg.split
    if min(s.train, s.val, s.test) <= 0 or abs(s.train + s.val + s.test - 1.0) > 1e-9:
        fail("split", "fractions must be positive and sum to 1")
    if s.n_repeats < 1:
        fail("split.n_repeats", "must be >= 1")
