"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def gradient_check(f: Callable[..., Tensor], x, eps: float = 1e-5,
                   max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    ``x`` is a tensor or a sequence of tensors passed positionally to ``f``;
    all of them are checked. With ``max_coords`` only that many randomly
    chosen coordinates per tensor are perturbed. Run under 64-bit precision.
    """
    inputs: Sequence[Tensor] = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = f(*inputs)
    if loss.size != 1:
        raise ValueError("gradient_check needs a scalar-valued function")
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                up = f(*inputs).item()
                flat[i] = orig - eps
                down = f(*inputs).item()
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                worst = max(worst, float(relative_error(analytic.reshape(-1)[i], numeric)))
    return worst
