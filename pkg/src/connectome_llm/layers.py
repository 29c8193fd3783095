"""Shared attention helpers built on the autograd ops."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, add, matmul, mul, reshape, softmax_rows, transpose


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., n, d) -> (..., heads, n, d // heads)."""
    *lead, n, d = x.shape
    x = reshape(x, (*lead, n, heads, d // heads))
    nd = len(lead)
    return transpose(x, (*range(nd), nd + 1, nd, nd + 2))


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, n, dk) -> (..., n, heads * dk)."""
    *lead, h, n, dk = x.shape
    nd = len(lead)
    x = transpose(x, (*range(nd), nd + 1, nd, nd + 2))
    return reshape(x, (*lead, n, h * dk))


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention, scale 1/sqrt(head dim)."""
    scores = mul(matmul(q, transpose(k)), 1.0 / np.sqrt(q.shape[-1]))
    return matmul(softmax_rows(scores, mask=mask), v)


def attention_weights(q: Tensor, k: Tensor, mask: np.ndarray | None = None) -> np.ndarray:
    scores = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) / np.sqrt(q.shape[-1])
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)
