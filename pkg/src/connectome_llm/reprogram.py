"""Patch-to-token reprogramming: multi-head cross-attention from patch
embeddings onto text prototypes derived from a frozen vocabulary table."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Tensor, concat, matmul, transpose
from .errors import ConfigError, DimensionError, LoadError
from .layers import attention, attention_weights, linear, merge_heads, split_heads
from .tensorio import read_matrix, write_matrix


def random_vocab(size: int, d_h: int, seed: int) -> Tensor:
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x70CAB])
    return Tensor(rng.normal(0.0, 1.0, size=(size, d_h)), name="vocab")


def load_vocab(path, d_h: int | None = None) -> Tensor:
    m = read_matrix(path)
    if d_h is not None and m.shape[1] != d_h:
        raise LoadError(f"{path}: vocabulary width {m.shape[1]} != d_h {d_h}", module="reprogram")
    return Tensor(m, name="vocab")


def save_vocab(path, vocab: Tensor) -> None:
    write_matrix(path, vocab.data)


@dataclass
class PrototypeBank:
    vocab_embeddings: Tensor  # (V, d_h), frozen
    prototype_map: Tensor  # (V, V'), trainable

    @classmethod
    def init(cls, vocab: Tensor, n_prototypes: int, rng: np.random.Generator) -> "PrototypeBank":
        V = vocab.shape[0]
        if not 1 <= n_prototypes <= V:
            raise ConfigError(f"prototype count {n_prototypes} must be in [1, {V}]", module="reprogram")
        bound = 1.0 / np.sqrt(V)
        pmap = rng.uniform(-bound, bound, size=(V, n_prototypes))
        return cls(vocab, Tensor(pmap, requires_grad=True, name="reprogram.prototype_map"))

    @property
    def n_prototypes(self) -> int:
        return self.prototype_map.shape[1]

    def prototypes(self) -> Tensor:
        """(V', d_h) = prototype_map^T @ vocab."""
        return matmul(transpose(self.prototype_map), self.vocab_embeddings)

    def parameters(self) -> dict[str, Tensor]:
        return {"reprogram.prototype_map": self.prototype_map}


@dataclass
class CrossAttention:
    heads: int
    wq: Tensor  # (d_e, d_h)
    bq: Tensor
    wk: Tensor  # (d_h, d_h)
    bk: Tensor
    wv: Tensor  # (d_h, d_h)
    bv: Tensor
    wo: Tensor  # (d_h, d_h)
    bo: Tensor

    @classmethod
    def init(cls, d_e: int, d_h: int, heads: int, rng: np.random.Generator) -> "CrossAttention":
        if heads < 1 or d_h % heads:
            raise ConfigError(f"heads K={heads} must divide d_h={d_h}", module="reprogram")

        def w(name, fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)

        def b(name, n):
            return Tensor(np.zeros(n), requires_grad=True, name=name)

        return cls(
            heads,
            w("reprogram.wq", d_e, d_h), b("reprogram.bq", d_h),
            w("reprogram.wk", d_h, d_h), b("reprogram.bk", d_h),
            w("reprogram.wv", d_h, d_h), b("reprogram.bv", d_h),
            w("reprogram.wo", d_h, d_h), b("reprogram.bo", d_h),
        )  # fmt: skip

    @property
    def d_h(self) -> int:
        return self.wo.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        names = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
        return {f"reprogram.{n}": getattr(self, n) for n in names}


def _check(x_hat: Tensor, bank: PrototypeBank, attn: CrossAttention):
    if attn.d_h % attn.heads:
        raise ConfigError(f"heads K={attn.heads} must divide d_h={attn.d_h}", module="reprogram")
    if x_hat.shape[-1] != attn.wq.shape[0]:
        raise DimensionError(
            f"reprogram: patch embedding width {x_hat.shape[-1]} != query input {attn.wq.shape[0]}",
            module="reprogram",
        )
    if bank.vocab_embeddings.shape[1] != attn.wk.shape[0]:
        raise DimensionError(
            f"reprogram: vocabulary width {bank.vocab_embeddings.shape[1]} != key input {attn.wk.shape[0]}",
            module="reprogram",
        )


def reprogram_patches(x_hat, bank: PrototypeBank, attn: CrossAttention) -> Tensor:
    """(..., m, d_e) patch embeddings -> (..., m, d_h) tokens."""
    x_hat = x_hat if isinstance(x_hat, Tensor) else Tensor(x_hat)
    _check(x_hat, bank, attn)
    protos = bank.prototypes()
    q = split_heads(linear(x_hat, attn.wq, attn.bq), attn.heads)
    k = split_heads(linear(protos, attn.wk, attn.bk), attn.heads)
    v = split_heads(linear(protos, attn.wv, attn.bv), attn.heads)
    return linear(merge_heads(attention(q, k, v)), attn.wo, attn.bo)


def reprogram_attention_weights(x_hat, bank: PrototypeBank, attn: CrossAttention) -> np.ndarray:
    """Per-head attention weights (..., K, m, V') for inspection; no tape."""
    x_hat = x_hat if isinstance(x_hat, Tensor) else Tensor(x_hat)
    _check(x_hat, bank, attn)
    protos = Tensor(_prototype_matrix(bank))
    q = x_hat.data @ attn.wq.data + attn.bq.data
    k = protos.data @ attn.wk.data + attn.bk.data
    K = attn.heads
    qh = Tensor(np.moveaxis(q.reshape(*q.shape[:-1], K, -1), -2, -3))
    kh = Tensor(np.moveaxis(k.reshape(k.shape[0], K, -1), -2, -3))
    return attention_weights(qh, kh)


def _prototype_matrix(bank: PrototypeBank) -> np.ndarray:
    return bank.prototype_map.data.T @ bank.vocab_embeddings.data


def concat_features(z_list: Sequence[Tensor]) -> Tensor:
    """Stack per-feature token sequences (m, d_h) into (d*m, d_h), feature-major."""
    if not z_list:
        raise DimensionError("concat_features: no feature sequences", module="reprogram")
    shapes = {tuple(z.shape) for z in z_list}
    if len(shapes) != 1:
        raise DimensionError(f"concat_features: ragged inputs {sorted(shapes)}", module="reprogram")
    return concat(z_list, axis=-2)
