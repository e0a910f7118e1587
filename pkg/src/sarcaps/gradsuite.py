"""Finite-difference gradient suites, one per differentiable building block.

Every check runs in 64-bit precision at a random generic point. Vector
outputs are reduced by a fixed random projection so every coordinate sees an
O(1) gradient, which keeps the relative-error metric away from roundoff.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .capsnet import CapsNetConfig, dynamic_routing, margin_loss, reconstruction_loss, squash
from .cnn import cross_entropy
from .tensor import Tensor, conv2d, conv_transpose2d, gradient_check, ops, precision

EPS = 1e-5
TOLERANCE = 1e-4
DEFAULT_SEEDS = 20


def _away_from_zero(rng, shape, low=0.1):
    # keeps relu/leaky-relu kinks further than eps from every coordinate
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, 1.0, size=shape)


def _project(out: Tensor, rng) -> Tensor:
    weights = Tensor(rng.standard_normal(out.shape))
    return ops.sum(ops.mul(out, weights))


def _tensor(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


def check_conv2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    k, s = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    size = int(rng.integers(k, k + 4))
    x = _tensor(rng.standard_normal((2, size, size, int(rng.integers(1, 3)))))
    w = _tensor(rng.standard_normal((k, k, x.shape[-1], int(rng.integers(1, 4)))))
    proj = np.random.default_rng([seed, 1])
    out_shape = conv2d(x.detach(), w.detach(), s).shape
    r = Tensor(proj.standard_normal(out_shape))
    return gradient_check(lambda a, b: ops.sum(ops.mul(conv2d(a, b, s), r)), [x, w], EPS)


def check_conv_transpose2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    k, s = int(rng.integers(1, 5)), int(rng.integers(1, 3))
    size = int(rng.integers(1, 4))
    x = _tensor(rng.standard_normal((2, size, size, int(rng.integers(1, 3)))))
    w = _tensor(rng.standard_normal((k, k, int(rng.integers(1, 4)), x.shape[-1])))
    out_shape = conv_transpose2d(x.detach(), w.detach(), s).shape
    r = Tensor(np.random.default_rng([seed, 1]).standard_normal(out_shape))
    return gradient_check(lambda a, b: ops.sum(ops.mul(conv_transpose2d(a, b, s), r)), [x, w], EPS)


def check_matmul(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, m, p = (int(v) for v in rng.integers(1, 6, size=3))
    a, b = _tensor(rng.standard_normal((n, m))), _tensor(rng.standard_normal((m, p)))
    r = Tensor(rng.standard_normal((n, p)))
    return gradient_check(lambda x, y: ops.sum(ops.mul(ops.matmul(x, y), r)), [a, b], EPS)


def check_activations(seed: int) -> float:
    rng = np.random.default_rng(seed)
    shape = (3, 4)
    worst = 0.0
    for fn in (ops.relu, lambda t: ops.leaky_relu(t, 0.2), ops.sigmoid, ops.tanh, ops.exp, ops.square):
        x = _tensor(_away_from_zero(rng, shape))
        r = Tensor(rng.standard_normal(shape))
        worst = max(worst, gradient_check(lambda t: ops.sum(ops.mul(fn(t), r)), x, EPS))
    for fn in (ops.log, ops.sqrt):
        x = _tensor(rng.uniform(0.5, 2.0, size=shape))
        r = Tensor(rng.standard_normal(shape))
        worst = max(worst, gradient_check(lambda t: ops.sum(ops.mul(fn(t), r)), x, EPS))
    return worst


def check_softmax(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _tensor(rng.standard_normal((3, 5)) * 2.0)
    axis = int(rng.integers(0, 2))
    r = Tensor(rng.standard_normal(x.shape))
    return gradient_check(lambda t: ops.sum(ops.mul(ops.softmax(t, axis=axis), r)), x, EPS)


def check_instance_norm(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _tensor(rng.standard_normal((2, 3, 3, 2)))
    r = Tensor(rng.standard_normal(x.shape))
    return gradient_check(lambda t: ops.sum(ops.mul(ops.instance_norm(t), r)), x, EPS)


def check_squash(seed: int) -> float:
    rng = np.random.default_rng(seed)
    # mix of short, unit-ish and long vectors
    s = _tensor(rng.standard_normal((4, 8)) * rng.choice([0.1, 1.0, 5.0], size=(4, 1)))
    r = Tensor(rng.standard_normal(s.shape))
    return gradient_check(lambda t: ops.sum(ops.mul(squash(t), r)), s, EPS)


def check_routing(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, i, j, d = 2, int(rng.integers(2, 7)), int(rng.integers(2, 4)), 4
    u_hat = _tensor(rng.standard_normal((n, i, j, d)) * 0.5)
    iterations = int(rng.integers(1, 4))
    r = Tensor(rng.standard_normal((n, j, d)))
    return gradient_check(lambda u: ops.sum(ops.mul(dynamic_routing(u, iterations)[0], r)), u_hat, EPS)


def check_margin_loss(seed: int) -> float:
    rng = np.random.default_rng(seed)
    cfg = CapsNetConfig()
    norms = rng.uniform(0.0, 1.0, size=(5, 3))
    # stay clear of the m+ / m- hinges so the difference quotient is smooth
    for edge in (cfg.m_plus, cfg.m_minus):
        near = np.abs(norms - edge) < 1e-3
        norms[near] += 2e-3
    labels = np.eye(3)[rng.integers(0, 3, size=5)]
    return gradient_check(lambda v: margin_loss(v, labels, cfg), _tensor(norms), EPS)


def check_reconstruction_loss(seed: int) -> float:
    rng = np.random.default_rng(seed)
    recon = _tensor(rng.uniform(size=(2, 4, 4, 1)))
    target = rng.uniform(size=(2, 4, 4, 1))
    # unit scale: the 0.0005 factor would push gradients into the roundoff floor
    return gradient_check(lambda t: reconstruction_loss(t, target, 1.0), recon, EPS)


def check_cross_entropy(seed: int) -> float:
    rng = np.random.default_rng(seed)
    logits = _tensor(rng.standard_normal((4, 3)))
    labels = np.eye(3)[rng.integers(0, 3, size=4)]
    return gradient_check(lambda t: cross_entropy(ops.softmax(t, axis=-1), labels), logits, EPS)


def check_bce_with_logits(seed: int) -> float:
    rng = np.random.default_rng(seed)
    logits = _tensor(rng.standard_normal((6, 1)) * 3.0)
    target = float(rng.integers(0, 2))
    return gradient_check(lambda t: ops.bce_with_logits(t, target), logits, EPS)


SUITES = {
    "conv2d": check_conv2d,
    "conv_transpose2d": check_conv_transpose2d,
    "matmul": check_matmul,
    "activations": check_activations,
    "softmax": check_softmax,
    "instance_norm": check_instance_norm,
    "squash": check_squash,
    "routing": check_routing,
    "margin_loss": check_margin_loss,
    "reconstruction_loss": check_reconstruction_loss,
    "cross_entropy": check_cross_entropy,
    "bce_with_logits": check_bce_with_logits,
}


@dataclass
class SuiteResult:
    name: str
    seeds: int
    max_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def run_suite(name: str, seeds: int = DEFAULT_SEEDS) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(f"unknown gradient suite {name!r}; choose from {sorted(SUITES)}")
    start = time.perf_counter()
    with precision(np.float64):
        worst = max(SUITES[name](seed) for seed in range(seeds))
    return SuiteResult(name, seeds, worst, time.perf_counter() - start)


def run_all(seeds: int = DEFAULT_SEEDS, names=None) -> list:
    return [run_suite(name, seeds) for name in (names or SUITES)]
