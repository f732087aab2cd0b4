"""
Parameterised layers: Module base class, Linear, LayerNorm, MLP and a
pre-LN Transformer encoder.
"""

import copy
import math
from typing import Iterator, Optional, Sequence

import numpy as np

from errors import CheckpointError, ConfigurationError
from numcore.functional import layer_norm, linear, multi_head_attention
from numcore.tensor import Tensor, gelu


class Parameter(Tensor):
    """A leaf tensor owned by a Module."""

    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None, requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad, name=name)


class Module:
    """Minimal container that discovers Parameters and sub-Modules by attribute."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(prefix=f"{name}.")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def freeze(self) -> "Module":
        for _, p in self.named_parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> "Module":
        for _, p in self.named_parameters():
            p.requires_grad = True
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointError(
                    f"{name}: checkpoint shape {value.shape} != model shape {p.shape}"
                )
            p.data = value.copy()

    def checksum(self) -> float:
        """Order-sensitive fingerprint of all parameter values."""
        total = 0.0
        for i, (_, p) in enumerate(self.named_parameters(), 1):
            total += i * float(np.sum(p.data * np.arange(1, p.size + 1).reshape(p.shape)))
        return total

    def clone(self) -> "Module":
        return copy.deepcopy(self)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        limit = math.sqrt(6.0 / (n_in + n_out))
        self.weight = Parameter(rng.uniform(-limit, limit, size=(n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """Linear layers with GELU between them and optional LayerNorm before each GELU."""

    def __init__(
        self,
        dims: Sequence[int],
        rng: np.random.Generator,
        norm: bool = False,
        final_activation: bool = False,
    ):
        if len(dims) < 2:
            raise ConfigurationError(f"MLP needs at least two sizes, got {dims}")
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        n_hidden = len(self.layers) if final_activation else len(self.layers) - 1
        self.norms = [LayerNorm(dims[i + 1]) for i in range(n_hidden)] if norm else []
        self.n_activated = n_hidden

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < self.n_activated:
                if self.norms:
                    x = self.norms[i](x)
                x = gelu(x)
        return x


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ConfigurationError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        attended = multi_head_attention(self.q(x), self.k(x), self.v(x), self.n_heads, mask)
        return self.out(attended)


class TransformerLayer(Module):
    """Pre-LN block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, ff_mult: int = 4):
        self.norm1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.ff = MLP([d_model, ff_mult * d_model, d_model], rng)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        x = x + self.attn(self.norm1(x), mask)
        return x + self.ff(self.norm2(x))


class TransformerEncoder(Module):
    def __init__(
        self,
        d_model: int,
        n_heads: int,
        n_layers: int,
        rng: np.random.Generator,
        ff_mult: int = 4,
    ):
        self.blocks = [TransformerLayer(d_model, n_heads, rng, ff_mult) for _ in range(n_layers)]
        self.norm = LayerNorm(d_model)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return self.norm(x)


def sinusoidal_embedding(values: np.ndarray, dim: int, scale: float = 1000.0) -> np.ndarray:
    """Fixed sinusoidal features of scalar inputs, shape (len(values), dim)."""
    values = np.asarray(values, dtype=np.float64).reshape(-1) * scale
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = values[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(values), 1))], axis=1)
    return emb
