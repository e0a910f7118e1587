"""Parameter initialisers."""

from __future__ import annotations

import numpy as np

from .core import Tensor


def truncated_normal(rng: np.random.Generator, shape, std: float, name: str | None = None) -> Tensor:
    """Normal(0, std) resampled until every draw lies within two standard deviations."""
    values = rng.standard_normal(shape)
    bad = np.abs(values) > 2.0
    while bad.any():
        values[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(values) > 2.0
    return Tensor(values * std, requires_grad=True, name=name)


def he_normal(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Tensor:
    return truncated_normal(rng, shape, float(np.sqrt(2.0 / fan_in)), name=name)


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)
