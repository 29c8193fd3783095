"""Frozen pre-norm transformer encoder standing in for a pretrained LLM.

Gradients flow through the stack to its input tokens; its own tensors never
require grad.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .autograd import Tensor, add, gelu, layernorm_rows, mul, checksum
from .errors import ConfigError, DimensionError, LoadError, NumericError
from .layers import attention, linear, merge_heads, split_heads
from .tensorio import read_manifest, read_tensors, write_manifest, write_tensors

_LAYER_TENSORS = (
    "ln1.g", "ln1.b",
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
    "ln2.g", "ln2.b",
    "ff.w1", "ff.b1", "ff.w2", "ff.b2",
)  # fmt: skip


@dataclass(frozen=True)
class BackboneConfig:
    n_layers: int = 2
    d_h: int = 48
    n_attn_heads: int = 4
    d_ff: int = 96
    causal: bool = True
    positional: bool = False

    def validate(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}", module="backbone")
        if self.n_attn_heads < 1 or self.d_h % self.n_attn_heads:
            raise ConfigError(f"n_attn_heads={self.n_attn_heads} must divide d_h={self.d_h}", module="backbone")
        if self.d_ff < 1:
            raise ConfigError(f"d_ff must be >= 1, got {self.d_ff}", module="backbone")


# Depth and masking of the named backbones; width stays at desk scale.
PRESETS = {
    "gpt2": {"n_layers": 12, "causal": True},
    "llama": {"n_layers": 16, "causal": True},
    "bert": {"n_layers": 12, "causal": False},
}


def preset_config(name: str, base: BackboneConfig | None = None) -> BackboneConfig:
    try:
        overrides = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown backbone preset {name!r}; choose from {sorted(PRESETS)}", module="backbone") from None
    return replace(base or BackboneConfig(), **overrides)


@dataclass
class FrozenWeights:
    config: BackboneConfig
    layers: list[dict[str, Tensor]]
    final: dict[str, Tensor]

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, t in layer.items():
                out[f"layers.{i}.{k}"] = t
        for k, t in self.final.items():
            out[f"final.{k}"] = t
        return out

    def checksum(self) -> str:
        named = self.tensors()
        return checksum(named[k] for k in sorted(named))

    def truncated(self, n_layers: int) -> "FrozenWeights":
        """First ``n_layers`` blocks, sharing tensors with ``self``."""
        if not 1 <= n_layers <= len(self.layers):
            raise ConfigError(f"cannot truncate {len(self.layers)}-layer stack to {n_layers}", module="backbone")
        return FrozenWeights(replace(self.config, n_layers=n_layers), self.layers[:n_layers], self.final)


def build_backbone(cfg: BackboneConfig, seed: int = 0, weight_file=None) -> FrozenWeights:
    """Seeded scaled-Gaussian weights, or weights loaded from ``weight_file``."""
    cfg.validate()
    if weight_file is not None:
        return load_backbone(weight_file, cfg)
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0xBAC4B0])
    d, f = cfg.d_h, cfg.d_ff
    out_scale = 1.0 / np.sqrt(2.0 * cfg.n_layers)

    def gauss(fan_in, fan_out, scale=1.0):
        return rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))

    layers = []
    for _ in range(cfg.n_layers):
        raw = {
            "ln1.g": np.ones(d), "ln1.b": np.zeros(d),
            "attn.wq": gauss(d, d), "attn.bq": np.zeros(d),
            "attn.wk": gauss(d, d), "attn.bk": np.zeros(d),
            "attn.wv": gauss(d, d), "attn.bv": np.zeros(d),
            "attn.wo": gauss(d, d, out_scale), "attn.bo": np.zeros(d),
            "ln2.g": np.ones(d), "ln2.b": np.zeros(d),
            "ff.w1": gauss(d, f), "ff.b1": np.zeros(f),
            "ff.w2": gauss(f, d, out_scale), "ff.b2": np.zeros(d),
        }  # fmt: skip
        layers.append({k: Tensor(v) for k, v in raw.items()})
    final = {"ln.g": Tensor(np.ones(d)), "ln.b": Tensor(np.zeros(d))}
    return FrozenWeights(cfg, layers, final)


def sinusoidal_positions(M: int, d_h: int) -> np.ndarray:
    pos = np.arange(M)[:, None]
    i = np.arange(d_h)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_h)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(M: int) -> np.ndarray:
    return np.tril(np.ones((M, M), dtype=bool))


def _norm(x, g, b):
    return add(mul(layernorm_rows(x), g), b)


def backbone_forward(tokens, weights: FrozenWeights) -> Tensor:
    """(..., M, d_h) tokens -> (..., M, d_h) hidden states."""
    cfg = weights.config
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if tokens.ndim < 2 or tokens.shape[-1] != cfg.d_h:
        raise DimensionError(f"backbone: tokens {tokens.shape} do not end in d_h={cfg.d_h}", module="backbone")
    M = tokens.shape[-2]
    h = tokens
    if cfg.positional:
        h = add(h, sinusoidal_positions(M, cfg.d_h))
    mask = causal_mask(M) if cfg.causal else None
    for i, p in enumerate(weights.layers):
        a = _norm(h, p["ln1.g"], p["ln1.b"])
        q = split_heads(linear(a, p["attn.wq"], p["attn.bq"]), cfg.n_attn_heads)
        k = split_heads(linear(a, p["attn.wk"], p["attn.bk"]), cfg.n_attn_heads)
        v = split_heads(linear(a, p["attn.wv"], p["attn.bv"]), cfg.n_attn_heads)
        h = add(h, linear(merge_heads(attention(q, k, v, mask)), p["attn.wo"], p["attn.bo"]))
        f = _norm(h, p["ln2.g"], p["ln2.b"])
        h = add(h, linear(gelu(linear(f, p["ff.w1"], p["ff.b1"])), p["ff.w2"], p["ff.b2"]))
        if not np.all(np.isfinite(h.data)):
            raise NumericError(f"non-finite hidden state after layer {i}", module="backbone")
    return _norm(h, weights.final["ln.g"], weights.final["ln.b"])


def save_backbone(weights: FrozenWeights, path) -> Path:
    """Write ``path`` (binary tensors) and ``path`` + ``.json`` (layer manifest)."""
    path = Path(path)
    named = {k: t.data for k, t in weights.tensors().items()}
    entries = write_tensors(path, named)
    manifest = Path(str(path) + ".json")
    write_manifest(manifest, {"config": asdict(weights.config), "tensors": entries})
    return manifest


def load_backbone(path, cfg: BackboneConfig | None = None) -> FrozenWeights:
    path = Path(path)
    doc = read_manifest(Path(str(path) + ".json"))
    stored = BackboneConfig(**doc["config"])
    if cfg is not None:
        for key in ("d_h", "n_attn_heads", "d_ff"):
            if getattr(stored, key) != getattr(cfg, key):
                raise LoadError(f"{path}: {key}={getattr(stored, key)} in file, config wants {getattr(cfg, key)}")
        if cfg.n_layers > stored.n_layers:
            raise LoadError(f"{path}: file has {stored.n_layers} layers, config wants {cfg.n_layers}")
    arrays = read_tensors(path, doc["tensors"])
    layers = []
    for i in range(stored.n_layers):
        try:
            layers.append({k: Tensor(arrays[f"layers.{i}.{k}"]) for k in _LAYER_TENSORS})
        except KeyError as exc:
            raise LoadError(f"{path}: missing tensor {exc}") from None
    final = {"ln.g": Tensor(arrays["final.ln.g"]), "ln.b": Tensor(arrays["final.ln.b"])}
    weights = FrozenWeights(stored, layers, final)
    if cfg is not None:
        weights = FrozenWeights(replace(cfg), layers[: cfg.n_layers], final)
    return weights
