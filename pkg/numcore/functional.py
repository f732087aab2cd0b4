"""
Layer-level functions built from tensor primitives.
"""

import math
from typing import Optional

import numpy as np

from errors import ConfigurationError, DimensionError
from numcore.tensor import Tensor, as_tensor, gelu, masked_fill, softmax

__all__ = ["linear", "layer_norm", "gelu", "multi_head_attention", "split_heads"]

LN_EPS = 1e-5


def linear(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """y = xW + b over the last axis of x."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear: x {x.shape} does not match W {W.shape}")
    if x.ndim == 1:
        raise DimensionError(f"linear: x must have rank >= 2, got {x.shape}")
    y = x @ W
    if b is not None:
        b = as_tensor(b)
        if b.shape[-1] != W.shape[1]:
            raise DimensionError(f"linear: bias {b.shape} does not match W {W.shape}")
        y = y + b
    return y


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis, then apply the affine gain and bias."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"layer_norm: empty last dimension in {x.shape}")
    if as_tensor(gain).shape[-1] != x.shape[-1]:
        raise DimensionError(f"layer_norm: gain {as_tensor(gain).shape} vs x {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    centred = x - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    return centred / (var + eps).sqrt() * gain + bias


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., L, D) -> (..., H, L, D/H)."""
    *lead, length, dim = x.shape
    x = x.reshape((*lead, length, n_heads, dim // n_heads))
    n = x.ndim
    axes = list(range(n - 3)) + [n - 2, n - 3, n - 1]
    return x.transpose(tuple(axes))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, dh = x.shape
    n = x.ndim
    axes = list(range(n - 3)) + [n - 2, n - 3, n - 1]
    return x.transpose(tuple(axes)).reshape((*lead, length, heads * dh))


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    n_heads: int,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Scaled dot-product attention over ``n_heads`` heads.

    Args:
        q, k, v: (..., L, D) tensors, already projected.
        n_heads: Number of heads; must divide D.
        mask: Boolean (Lq, Lk) or (B, Lq, Lk); True marks a blocked key.

    Returns:
        (..., Lq, D) attended values.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    dim = q.shape[-1]
    if n_heads < 1 or dim % n_heads:
        raise ConfigurationError(f"model dim {dim} is not divisible by {n_heads} heads")
    if k.shape[-1] != dim or v.shape[-1] != dim or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention shapes disagree: {q.shape}, {k.shape}, {v.shape}")

    qh, kh, vh = (split_heads(t, n_heads) for t in (q, k, v))
    scores = (qh @ kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(dim // n_heads))

    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        expected = (q.shape[-2], k.shape[-2])
        if mask.shape[-2:] != expected:
            raise DimensionError(f"attention mask {mask.shape} does not match {expected}")
        if mask.all(axis=-1).any():
            raise ConfigurationError("attention mask blocks every key for some query")
        if mask.ndim == 3:
            mask = mask[:, None, :, :]
        scores = masked_fill(scores, mask, -np.inf)

    weights = softmax(scores, axis=-1)
    return _merge_heads(weights @ vh)
