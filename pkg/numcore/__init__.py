"""Minimal float64 tensor engine with reverse-mode autodiff."""

from numcore.tensor import (
    Tape,
    Tensor,
    concat,
    expand,
    gelu,
    get_tape,
    masked_fill,
    no_grad,
    relu,
    softmax,
)
from numcore.functional import layer_norm, linear, multi_head_attention
from numcore.layers import (
    MLP,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    TransformerEncoder,
    sinusoidal_embedding,
)
from numcore.optim import AdamState, EarlyStopping, adam_step, cosine_lr, module_step
from numcore.gradcheck import grad_check
from numcore.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tape",
    "Tensor",
    "concat",
    "expand",
    "gelu",
    "get_tape",
    "masked_fill",
    "no_grad",
    "relu",
    "softmax",
    "layer_norm",
    "linear",
    "multi_head_attention",
    "MLP",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "Parameter",
    "TransformerEncoder",
    "sinusoidal_embedding",
    "AdamState",
    "EarlyStopping",
    "adam_step",
    "cosine_lr",
    "module_step",
    "grad_check",
    "load_checkpoint",
    "save_checkpoint",
]
