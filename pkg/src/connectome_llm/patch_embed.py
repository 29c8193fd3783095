"""Overlapping temporal patches and their shared linear embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, add, matmul
from .errors import ConfigError, DimensionError, TooShortError


@dataclass(frozen=True)
class PatchConfig:
    length: int = 8
    stride: int = 4
    embed_dim: int = 8

    def validate(self, T: int | None = None):
        if self.length < 1 or self.stride < 1 or self.embed_dim < 1:
            raise ConfigError(f"patch length, stride and embed_dim must be positive: {self}", module="patch_embed")
        if self.stride > self.length:
            raise ConfigError(f"patch stride {self.stride} exceeds length {self.length}", module="patch_embed")
        if T is not None and T < self.length:
            raise TooShortError(f"series of length {T} is shorter than patch length {self.length}")


def patch_count(T: int, length: int, stride: int) -> int:
    return (T - length) // stride + 1


def make_patches(x, cfg: PatchConfig) -> np.ndarray:
    """Rows are ``x[t*S : t*S + L]``; trailing timepoints beyond the last patch are dropped.

    Accepts a single row (T,) -> (m, L) or a stack (d, T) -> (d, m, L).
    """
    x = np.asarray(x, dtype=np.float64)
    T = x.shape[-1]
    cfg.validate(T)
    m = patch_count(T, cfg.length, cfg.stride)
    idx = np.arange(m)[:, None] * cfg.stride + np.arange(cfg.length)[None, :]
    return x[..., idx]


@dataclass
class PatchEmbedding:
    weight: Tensor  # (L, d_e)
    bias: Tensor  # (d_e,)

    @classmethod
    def init(cls, cfg: PatchConfig, rng: np.random.Generator) -> "PatchEmbedding":
        bound = 1.0 / np.sqrt(cfg.length)
        w = rng.uniform(-bound, bound, size=(cfg.length, cfg.embed_dim))
        b = rng.uniform(-bound, bound, size=cfg.embed_dim)
        return cls(Tensor(w, requires_grad=True, name="patch.weight"), Tensor(b, requires_grad=True, name="patch.bias"))

    def parameters(self) -> dict[str, Tensor]:
        return {"patch.weight": self.weight, "patch.bias": self.bias}


def embed_patches(patches, emb: PatchEmbedding) -> Tensor:
    """``patches @ weight + bias`` over the last axis; any leading batch dims."""
    patches = patches if isinstance(patches, Tensor) else Tensor(patches)
    if patches.shape[-1] != emb.weight.shape[0]:
        raise DimensionError(
            f"embed_patches: patch width {patches.shape[-1]} != embedding input {emb.weight.shape[0]}",
            module="patch_embed",
        )
    return add(matmul(patches, emb.weight), emb.bias)
