"""Compact strided-conv classifier with the small (S) and large (L) dense heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .capsnet import one_hot
from .tensor import Tensor, conv2d, conv_output_size, no_grad, ops
from .tensor.init import he_normal, zeros

HEADS = {"S": (32, 16), "L": (1024, 512)}
CE_EPS = 1e-12


@dataclass
class CnnConfig:
    input_size: int = 64
    conv_blocks: tuple = ((16, 3, 2), (32, 3, 2), (64, 3, 2), (64, 3, 2))
    head: str = "S"
    num_classes: int = 3

    def __post_init__(self):
        self.conv_blocks = tuple(tuple(int(v) for v in b) for b in self.conv_blocks)
        if not self.conv_blocks:
            raise ValueError("the CNN needs at least one conv block")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {sorted(HEADS)}, got {self.head!r}")
        if any(min(b) < 1 for b in self.conv_blocks) or self.num_classes < 1:
            raise ValueError("conv block sizes and class count must be positive")
        if self.feature_grid < 1:
            raise ValueError("input too small for the conv blocks")

    @property
    def feature_grid(self) -> int:
        size = self.input_size
        for _, k, s in self.conv_blocks:
            size = conv_output_size(size, k, s)
        return size

    @property
    def head_widths(self) -> tuple:
        return (*HEADS[self.head], self.num_classes)

    def to_dict(self) -> dict:
        return {"input_size": self.input_size, "conv_blocks": [list(b) for b in self.conv_blocks],
                "head": self.head, "num_classes": self.num_classes}


class CompactCNN:
    kind = "cnn"

    def __init__(self, config: CnnConfig | None = None, seed: int = 0):
        self.config = c = config or CnnConfig()
        # separate streams so S and L models share the backbone for a given seed
        backbone_rng = np.random.default_rng([seed, 0])
        head_rng = np.random.default_rng([seed, 1])
        self.params = {}
        cin = 1
        for i, (cout, k, _) in enumerate(c.conv_blocks, start=1):
            self.params[f"conv{i}_w"] = he_normal(backbone_rng, (k, k, cin, cout), k * k * cin)
            self.params[f"conv{i}_b"] = zeros((cout,))
            cin = cout
        widths = [c.feature_grid ** 2 * cin, *c.head_widths]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            self.params[f"fc{i}_w"] = he_normal(head_rng, (fan_in, fan_out), fan_in)
            self.params[f"fc{i}_b"] = zeros((fan_out,))
        for name, p in self.params.items():
            p.name = name

    def parameters(self) -> dict:
        return self.params

    @property
    def input_size(self) -> int:
        return self.config.input_size

    def meta(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict()}

    def forward(self, x) -> Tensor:
        """Class probabilities (N, num_classes)."""
        c, p = self.config, self.params
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.ndim == 3:
            h = ops.reshape(h, (1,) + h.shape)
        if h.shape[1:] != (c.input_size, c.input_size, 1):
            raise ValueError(f"expected tiles of shape ({c.input_size}, {c.input_size}, 1), got {h.shape}")
        for i, (_, _, stride) in enumerate(c.conv_blocks, start=1):
            h = conv2d(h, p[f"conv{i}_w"], stride)
            h = ops.relu(ops.add(h, ops.broadcast_to(p[f"conv{i}_b"], h.shape)))
        h = ops.reshape(h, (h.shape[0], -1))
        n_fc = len(c.head_widths)
        for i in range(1, n_fc + 1):
            h = ops.dense(h, p[f"fc{i}_w"], p[f"fc{i}_b"])
            if i < n_fc:
                h = ops.relu(h)
        return ops.softmax(h, axis=-1)

    def loss(self, x, labels):
        probs = self.forward(x)
        onehot = one_hot(labels, self.config.num_classes)
        return ops.scale(cross_entropy(probs, onehot), 1.0 / onehot.shape[0]), probs.data

    def scores(self, x) -> np.ndarray:
        with no_grad():
            return self.forward(x).data


def build_cnn(config: CnnConfig | None = None, seed: int = 0) -> CompactCNN:
    return CompactCNN(config, seed)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Summed ``-sum(label * ln(p + 1e-12))`` over samples."""
    target = np.asarray(labels, dtype=np.float64)
    if target.shape != probs.shape:
        raise ValueError(f"labels shape {target.shape} does not match probabilities {probs.shape}")
    if np.any(np.abs(probs.data.sum(axis=-1) - 1.0) > 1e-5):
        raise ValueError("probabilities must sum to 1 along the class axis")
    logp = ops.log(ops.shift(probs, CE_EPS))
    return ops.scale(ops.sum(ops.mul(Tensor(target, dtype=probs.dtype), logp)), -1.0)
