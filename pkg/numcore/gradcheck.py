"""Central finite-difference gradient checking."""

from typing import Callable, Mapping, Sequence, Union

import numpy as np

from numcore.tensor import Tensor, get_tape, no_grad

FD_STEP = 1e-5


def grad_check(
    f: Callable[[], Tensor],
    params: Union[Sequence[Tensor], Mapping[str, Tensor]],
    h: float = FD_STEP,
) -> float:
    """Compare autodiff gradients of scalar ``f()`` with central differences.

    ``f`` takes no arguments and reads the current values of ``params``.
    The relative error of one coordinate is |a - n| / max(|a|, |n|, floor)
    with floor = 1e-4 * max(1, |f|), which keeps round-off in the
    numerical derivative of near-zero coordinates from dominating.

    Returns:
        The maximum relative error over all coordinates of all params.
    """
    tensors = list(params.values()) if isinstance(params, Mapping) else list(params)
    for p in tensors:
        p.requires_grad = True
        p.grad = None

    get_tape().clear()
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in tensors]
    floor = 1e-4 * max(1.0, abs(float(out.data)))

    worst = 0.0
    with no_grad():
        for p, a in zip(tensors, analytic):
            flat = p.data.reshape(-1)
            grad_flat = a.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + h
                up = float(f().data)
                flat[i] = original - h
                down = float(f().data)
                flat[i] = original
                numeric = (up - down) / (2.0 * h)
                denom = max(abs(grad_flat[i]), abs(numeric), floor)
                worst = max(worst, abs(grad_flat[i] - numeric) / denom)
    return worst
