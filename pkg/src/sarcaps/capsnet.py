"""Capsule network with dynamic routing and a reconstruction decoder.

Tiles are NHWC with a single channel. The forward path is

    conv1 (relu) -> primary capsules (conv, reshape, squash)
    -> per-pair predictions W_ij u_i -> routing-by-agreement -> class capsules

and the class score of class ``j`` is the length of its capsule.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tensor import Tensor, conv2d, conv_output_size, no_grad, ops
from .tensor.init import he_normal, truncated_normal, zeros

SQUASH_EPS = 1e-9
NORM_EPS = 1e-9


@dataclass
class CapsNetConfig:
    input_size: int = 128
    conv1_kernels: int = 256
    conv1_size: int = 9
    conv1_stride: int = 1
    primary_channels: int = 32
    caps_dim: int = 8
    primary_size: int = 9
    primary_stride: int = 2
    num_classes: int = 3
    class_dim: int = 16
    routing_iterations: int = 3
    recon_scale: float = 0.0005
    m_plus: float = 0.9
    m_minus: float = 0.1
    lam: float = 0.5
    decoder_hidden: tuple = (512, 1024)
    routing_init_std: float = 0.05
    # True stops gradients through the coupling coefficients
    detach_couplings: bool = False

    def __post_init__(self):
        self.decoder_hidden = tuple(int(h) for h in self.decoder_hidden)
        counts = [self.input_size, self.conv1_kernels, self.conv1_size, self.conv1_stride,
                  self.primary_channels, self.caps_dim, self.primary_size, self.primary_stride,
                  self.num_classes, self.class_dim, self.routing_iterations, *self.decoder_hidden]
        if min(counts) < 1:
            raise ValueError("all CapsNet counts must be positive")
        if not self.m_minus < self.m_plus:
            raise ValueError("m_minus must be below m_plus")
        if self.recon_scale < 0:
            raise ValueError("recon_scale must be non-negative")
        if self.primary_grid < 1:
            raise ValueError("input too small for the conv1/primary geometry")

    @classmethod
    def desk(cls, **overrides) -> "CapsNetConfig":
        """64x64 input with a stride-2 first conv: 3200 primary capsules."""
        return cls(**{"input_size": 64, "conv1_stride": 2, **overrides})

    @property
    def conv1_grid(self) -> int:
        return conv_output_size(self.input_size, self.conv1_size, self.conv1_stride)

    @property
    def primary_grid(self) -> int:
        return conv_output_size(self.conv1_grid, self.primary_size, self.primary_stride)

    @property
    def num_primary(self) -> int:
        return self.primary_grid ** 2 * self.primary_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """Shrink ``s`` to length ``|s|^2 / (1 + |s|^2)`` along ``axis``, keeping direction."""
    sq = ops.sum(ops.square(s), axis=axis, keepdims=True)
    factor = ops.div(sq, ops.mul(ops.shift(sq, 1.0), ops.sqrt(ops.shift(sq, SQUASH_EPS))))
    return ops.mul(s, ops.broadcast_to(factor, s.shape))


def capsule_lengths(v: Tensor) -> Tensor:
    return ops.sqrt(ops.shift(ops.sum(ops.square(v), axis=-1), NORM_EPS))


def _add_bias(x: Tensor, b: Tensor) -> Tensor:
    return ops.add(x, ops.broadcast_to(b, x.shape))


class CapsNet:
    kind = "capsnet"

    def __init__(self, config: CapsNetConfig | None = None, seed: int = 0):
        self.config = config = config or CapsNetConfig()
        rng = np.random.default_rng(seed)
        c = config
        prim_out = c.primary_channels * c.caps_dim
        self.params = {
            "conv1_w": he_normal(rng, (c.conv1_size, c.conv1_size, 1, c.conv1_kernels), c.conv1_size ** 2),
            "conv1_b": zeros((c.conv1_kernels,)),
            "primary_w": he_normal(rng, (c.primary_size, c.primary_size, c.conv1_kernels, prim_out),
                                   c.primary_size ** 2 * c.conv1_kernels),
            "primary_b": zeros((prim_out,)),
            "routing_w": truncated_normal(rng, (c.num_primary, c.num_classes, c.caps_dim, c.class_dim),
                                          c.routing_init_std),
        }
        widths = [c.num_classes * c.class_dim, *c.decoder_hidden, c.input_size ** 2]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            self.params[f"dec{i}_w"] = he_normal(rng, (fan_in, fan_out), fan_in)
            self.params[f"dec{i}_b"] = zeros((fan_out,))
        for name, p in self.params.items():
            p.name = name

    def parameters(self) -> dict:
        return self.params

    @property
    def input_size(self) -> int:
        return self.config.input_size

    def meta(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict()}

    def loss(self, x, labels):
        """Batch-mean of margin plus scaled reconstruction loss; also returns class scores."""
        labels = np.asarray(labels)
        norms, _, recon = capsnet_forward(x, self, mask_labels=labels)
        onehot = one_hot(labels, self.config.num_classes)
        target = _as_batch(x, self.config.input_size)
        n = onehot.shape[0]
        margin = margin_loss(norms, onehot, self.config)
        rec = reconstruction_loss(recon, target, self.config.recon_scale)
        return ops.scale(ops.add(margin, rec), 1.0 / n), norms.data

    def scores(self, x) -> np.ndarray:
        with no_grad():
            norms, _, _ = capsnet_forward(x, self, decode=False)
        return norms.data


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _as_batch(x, size: int) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.ndim == 3:
        t = ops.reshape(t, (1,) + t.shape)
    if t.ndim != 4 or t.shape[1:] != (size, size, 1):
        raise ValueError(f"expected tiles of shape ({size}, {size}, 1), got {t.shape}")
    return t


def primary_capsules(features: Tensor, model: CapsNet) -> Tensor:
    """conv1 features (N, G, G, K) -> squashed capsules (N, num_primary, caps_dim)."""
    c, p = model.config, model.params
    if features.ndim != 4 or features.shape[1:] != (c.conv1_grid, c.conv1_grid, c.conv1_kernels):
        raise ValueError(f"features of shape {features.shape} do not match the conv1 config")
    h = _add_bias(conv2d(features, p["primary_w"], c.primary_stride), p["primary_b"])
    n = h.shape[0]
    u = ops.reshape(h, (n, c.num_primary, c.caps_dim))
    return squash(u, axis=-1)


def predictions(u: Tensor, model: CapsNet) -> Tensor:
    """Per-pair prediction vectors u_hat[n, i, j] = u[n, i] @ W[i, j]."""
    return ops.einsum("nid,ijde->nije", u, model.params["routing_w"])


def dynamic_routing(u_hat: Tensor, iterations: int = 3, detach_couplings: bool = False):
    """Routing-by-agreement over u_hat of shape (N, I, J, D) or (I, J, D).

    Returns the class capsules ``v`` and the per-iteration coupling arrays
    (each (N, I, J), summing to one over J).
    """
    if iterations < 1:
        raise ValueError("routing needs at least one iteration")
    unbatched = u_hat.ndim == 3
    if unbatched:
        u_hat = ops.reshape(u_hat, (1,) + u_hat.shape)
    n, i, j, _ = u_hat.shape
    logits = Tensor(np.zeros((n, i, j)), dtype=u_hat.dtype)
    route_src = u_hat.detach() if detach_couplings else u_hat
    history = []
    for it in range(iterations):
        last = it == iterations - 1
        c = ops.softmax(logits, axis=2)
        history.append(c.data)
        if last:
            v = squash(ops.einsum("nij,nije->nje", c, u_hat), axis=-1)
        else:
            v_route = squash(ops.einsum("nij,nije->nje", c, route_src), axis=-1)
            logits = ops.add(logits, ops.einsum("nije,nje->nij", route_src, v_route))
    if unbatched:
        v = ops.reshape(v, v.shape[1:])
        history = [h[0] for h in history]
    return v, history


def margin_loss(v_norms: Tensor, labels, config: CapsNetConfig | None = None) -> Tensor:
    """Sum over samples and classes of the two-sided squared hinge on capsule lengths."""
    cfg = config or CapsNetConfig()
    target = np.asarray(labels, dtype=np.float64)
    if target.shape != v_norms.shape:
        raise ValueError(f"labels shape {target.shape} does not match norms {v_norms.shape}")
    rows = target.reshape(-1, target.shape[-1])
    if not (np.isin(rows, (0.0, 1.0)).all() and np.all(rows.sum(axis=1) == 1)):
        raise ValueError("labels must be one-hot")
    t = Tensor(target, dtype=v_norms.dtype)
    absent = Tensor(cfg.lam * (1.0 - target), dtype=v_norms.dtype)
    present = ops.square(ops.relu(ops.shift(ops.scale(v_norms, -1.0), cfg.m_plus)))
    wrong = ops.square(ops.relu(ops.shift(v_norms, -cfg.m_minus)))
    return ops.sum(ops.add(ops.mul(t, present), ops.mul(absent, wrong)))


def decoder_forward(v: Tensor, mask_labels, model: CapsNet) -> Tensor:
    """Reconstruct tiles from the class capsule selected by ``mask_labels`` (ints or one-hot)."""
    c, p = model.config, model.params
    unbatched = v.ndim == 2
    if unbatched:
        v = ops.reshape(v, (1,) + v.shape)
    n = v.shape[0]
    mask = np.asarray(mask_labels)
    # integer labels have one axis fewer than the one-hot form
    mask = mask.reshape(n, c.num_classes) if mask.ndim == v.ndim - 1 else one_hot(mask, c.num_classes)
    mask_t = Tensor(np.broadcast_to(mask[:, :, None], v.shape), dtype=v.dtype)
    h = ops.reshape(ops.mul(v, mask_t), (n, c.num_classes * c.class_dim))
    layers = len(c.decoder_hidden) + 1
    for k in range(1, layers + 1):
        h = ops.dense(h, p[f"dec{k}_w"], p[f"dec{k}_b"])
        h = ops.relu(h) if k < layers else ops.sigmoid(h)
    out = ops.reshape(h, (n, c.input_size, c.input_size, 1))
    return ops.reshape(out, out.shape[1:]) if unbatched else out


def reconstruction_loss(recon: Tensor, target, scale: float = 0.0005) -> Tensor:
    """``scale`` times the summed squared difference."""
    target = target if isinstance(target, Tensor) else Tensor(target, dtype=recon.dtype)
    if recon.shape != target.shape:
        raise ValueError(f"reconstruction {recon.shape} and target {target.shape} differ in shape")
    return ops.scale(ops.sum(ops.square(ops.sub(recon, target))), scale)


def capsnet_forward(tile, model: CapsNet, mask_labels=None, decode: bool = True):
    """Class lengths (N, J), class capsules (N, J, D) and reconstructions.

    The decoder is masked by ``mask_labels`` when given (training) and by the
    predicted class otherwise.
    """
    c, p = model.config, model.params
    x = _as_batch(tile, c.input_size)
    features = ops.relu(_add_bias(conv2d(x, p["conv1_w"], c.conv1_stride), p["conv1_b"]))
    u = primary_capsules(features, model)
    v, _ = dynamic_routing(predictions(u, model), c.routing_iterations, c.detach_couplings)
    norms = capsule_lengths(v)
    recon = None
    if decode:
        mask = mask_labels if mask_labels is not None else norms.data.argmax(axis=1)
        recon = decoder_forward(v, mask, model)
    return norms, v, recon


def predict(model: CapsNet, tiles) -> np.ndarray:
    return model.scores(tiles).argmax(axis=1)
