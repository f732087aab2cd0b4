"""
Transformer backbones over a context + gap day sequence of embeddings.

LatentTransformer is the deterministic bridge: gap days enter as a learned
mask token and no query attends to them. VelocityNet shares the layout but
reads noisy gap embeddings plus a time embedding, and can swap the whole
context for a learned null token (classifier-free guidance).
"""

from pathlib import Path
from typing import Optional

import numpy as np

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from errors import DimensionError
from numcore import (
    MLP,
    Linear,
    Module,
    Parameter,
    Tensor,
    TransformerEncoder,
    concat,
    expand,
    no_grad,
    sinusoidal_embedding,
)


class LatentTransformer(Module):
    def __init__(
        self,
        repr_dim: int,
        d_model: int,
        n_heads: int,
        n_layers: int,
        max_len: int,
        rng: np.random.Generator,
    ):
        self.repr_dim = repr_dim
        self.in_proj = Linear(repr_dim, d_model, rng)
        self.mask_token = Parameter(0.02 * rng.standard_normal(d_model))
        self.pos = Parameter(0.02 * rng.standard_normal((max_len, d_model)))
        self.encoder = TransformerEncoder(d_model, n_heads, n_layers, rng)
        self.out_proj = Linear(d_model, repr_dim, rng)

    def forward(self, context: Tensor, gap_len: int) -> Tensor:
        """context: (B, C, p) -> (B, gap_len, p)."""
        batch, n_ctx, dim = context.shape
        if dim != self.repr_dim:
            raise DimensionError(f"context dim {dim} != {self.repr_dim}")
        length = n_ctx + gap_len
        if length > self.pos.shape[0]:
            raise DimensionError(f"sequence of {length} days exceeds backbone length {self.pos.shape[0]}")
        d_model = self.mask_token.shape[0]
        gap_tokens = expand(self.mask_token, (batch, gap_len, d_model))
        h = concat([self.in_proj(context), gap_tokens], axis=1) + self.pos[:length]
        key_blocked = np.zeros(length, dtype=bool)
        key_blocked[n_ctx:] = True
        attn_mask = np.broadcast_to(key_blocked[None, :], (length, length))
        out = self.out_proj(self.encoder(h, attn_mask))
        return out[:, n_ctx:]


class VelocityNet(Module):
    """Predicts a velocity (or v-target) for noisy gap embeddings."""

    def __init__(
        self,
        repr_dim: int,
        d_model: int,
        n_heads: int,
        n_layers: int,
        max_len: int,
        rng: np.random.Generator,
    ):
        self.repr_dim = repr_dim
        self.d_model = d_model
        self.ctx_proj = Linear(repr_dim, d_model, rng)
        self.noisy_proj = Linear(repr_dim, d_model, rng)
        self.null_token = Parameter(0.02 * rng.standard_normal(d_model))
        self.pos = Parameter(0.02 * rng.standard_normal((max_len, d_model)))
        self.time_mlp = MLP([d_model, d_model, d_model], rng)
        self.encoder = TransformerEncoder(d_model, n_heads, n_layers, rng)
        self.out_proj = Linear(d_model, repr_dim, rng)

    def forward(
        self,
        z_t: Tensor,
        t: np.ndarray,
        context: Tensor,
        uncond: Optional[np.ndarray] = None,
    ) -> Tensor:
        """
        Args:
            z_t: (B, G, p) noisy gap embeddings.
            t: (B,) times in [0, 1].
            context: (B, C, p) context embeddings.
            uncond: (B,) bool; True replaces that sample's context by the null token.
        """
        batch, gap_len, dim = z_t.shape
        n_ctx = context.shape[1]
        if dim != self.repr_dim or context.shape[2] != self.repr_dim:
            raise DimensionError(f"embedding dims {dim}, {context.shape[2]} != {self.repr_dim}")
        length = n_ctx + gap_len
        if length > self.pos.shape[0]:
            raise DimensionError(f"sequence of {length} days exceeds backbone length {self.pos.shape[0]}")

        ctx_tokens = self.ctx_proj(context)
        if uncond is not None and np.any(uncond):
            drop = np.broadcast_to(np.asarray(uncond, dtype=np.float64), (batch,)).reshape(batch, 1, 1)
            ctx_tokens = ctx_tokens * (1.0 - drop) + Tensor(drop) * self.null_token
        h = concat([ctx_tokens, self.noisy_proj(z_t)], axis=1) + self.pos[:length]

        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        t_emb = Tensor(sinusoidal_embedding(t, self.d_model))
        h = h + self.time_mlp(t_emb).reshape((batch, 1, self.d_model))
        out = self.out_proj(self.encoder(h))
        return out[:, n_ctx:]

    def predict(
        self,
        z_t: np.ndarray,
        t: np.ndarray,
        context: np.ndarray,
        uncond: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        with no_grad():
            return self.forward(Tensor(z_t), t, Tensor(context), uncond).data
