"""
Adam with decoupled weight decay, cosine learning-rate annealing and
patience-based early stopping with best-parameter snapshots.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from errors import ConfigurationError, TrainingError
from numcore.layers import Module
from numcore.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters for Adam."""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    Parameters whose gradient is None are left untouched.

    Raises:
        TrainingError: If a gradient is not finite; carries the parameter name.
        ConfigurationError: If a gradient shape differs from its parameter.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}", parameter=name)

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ConfigurationError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def module_step(module: Module, state: AdamState) -> AdamState:
    """Adam step over every trainable parameter of ``module``, then clear grads."""
    params = {n: p for n, p in module.named_parameters() if p.requires_grad}
    adam_step(params, {n: p.grad for n, p in params.items()}, state)
    module.zero_grad()
    return state


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from lr_max at step 0 to lr_min at step total."""
    if total <= 0:
        raise ConfigurationError(f"cosine_lr: total must be positive, got {total}")
    if step < 0:
        raise ConfigurationError(f"cosine_lr: negative step {step}")
    if step >= total:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total))


class EarlyStopping:
    """Track the best validation loss and snapshot the matching parameters."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = -1
        self.best_state: Optional[dict[str, np.ndarray]] = None
        self.bad_epochs = 0

    def update(self, loss: float, module: Module, epoch: int) -> bool:
        """Record a validation loss. Returns True when it improved."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_state = module.state_dict()
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience

    def restore(self, module: Module) -> None:
        if self.best_state is not None:
            module.load_state_dict(self.best_state)
            logger.info(
                f"Restored best parameters from epoch {self.best_epoch} "
                f"(val loss {self.best_loss:.6f})"
            )
