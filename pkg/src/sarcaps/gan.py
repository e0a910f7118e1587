"""Per-class GANs and GAN-based class rebalancing.

The generator maps a standard-normal latent vector through a dense layer to
a small base grid, then doubles the grid with four stride-2 transposed
convolutions (centre-cropped to exactly 2x). The discriminator mirrors it with
four padded stride-2 convolutions and a single logit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .data.pipeline import DB_MAX, DB_MIN, bilinear_resize, denormalize_tile, normalize_tile, select_polarization
from .data.tiles import CLASSES, ShipTile
from .harness.checkpoint import load_checkpoint, save_checkpoint
from .harness.optim import Adam
from .tensor import Tensor, backward, conv2d, conv_transpose2d, no_grad, ops
from .tensor.init import he_normal, zeros

HISTORY_FIELDS = ["epoch", "d_loss", "g_loss"]


@dataclass
class GanConfig:
    latent_dim: int = 100
    base_grid: int = 8
    base_channels: int = 256
    gen_channels: tuple = (128, 64, 32)
    disc_channels: tuple = (32, 64, 128, 256)
    kernel: int = 4
    epochs: int = 2000
    batch: int = 32
    lr: float = 0.002
    beta1: float = 0.5
    beta2: float = 0.999
    target_per_class: int = 2000
    leak: float = 0.2
    db_min: float = DB_MIN
    db_max: float = DB_MAX

    deconv_layers = 4

    def __post_init__(self):
        self.gen_channels = tuple(int(c) for c in self.gen_channels)
        self.disc_channels = tuple(int(c) for c in self.disc_channels)
        if len(self.gen_channels) != self.deconv_layers - 1 or len(self.disc_channels) != self.deconv_layers:
            raise ValueError("need 3 hidden generator widths and 4 discriminator widths")
        if min(self.latent_dim, self.base_grid, self.base_channels, self.kernel, *self.gen_channels,
               *self.disc_channels) < 1:
            raise ValueError("GAN sizes must be positive")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be positive")
        if self.kernel < 2:
            raise ValueError("kernel must be at least 2 for stride-2 resampling")

    @classmethod
    def desk(cls, **overrides) -> "GanConfig":
        """32x32 tiles, 200 epochs."""
        return cls(**{"base_grid": 2, "epochs": 200, **overrides})

    @property
    def tile_size(self) -> int:
        return self.base_grid * 2 ** self.deconv_layers

    @property
    def disc_pad(self) -> int:
        # padding that makes a stride-2 valid conv halve an even size exactly
        return (self.kernel - 2) // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen_channels"] = list(self.gen_channels)
        d["disc_channels"] = list(self.disc_channels)
        return d


class GanPair:
    """Generator and discriminator specialised to one ship class."""

    def __init__(self, config: GanConfig | None = None, ship_class: str = CLASSES[0],
                 seed: int = 0, polarization: str = "VHVV"):
        self.config = c = config or GanConfig()
        self.ship_class = ship_class
        self.polarization = polarization
        self.history: list = []
        rng = np.random.default_rng([seed, 10])
        k = c.kernel
        self.gen = {"dense_w": he_normal(rng, (c.latent_dim, c.base_grid ** 2 * c.base_channels), c.latent_dim),
                    "dense_b": zeros((c.base_grid ** 2 * c.base_channels,))}
        widths = [c.base_channels, *c.gen_channels, 1]
        for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            self.gen[f"deconv{i}_w"] = he_normal(rng, (k, k, cout, cin), k * k * cin)
            self.gen[f"deconv{i}_b"] = zeros((cout,))
        self.disc = {}
        widths = [1, *c.disc_channels]
        for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            self.disc[f"conv{i}_w"] = he_normal(rng, (k, k, cin, cout), k * k * cin)
            self.disc[f"conv{i}_b"] = zeros((cout,))
        fan_in = c.base_grid ** 2 * c.disc_channels[-1]
        self.disc["dense_w"] = he_normal(rng, (fan_in, 1), fan_in)
        self.disc["dense_b"] = zeros((1,))
        self.gen_opt = Adam(self.gen, c.lr, (c.beta1, c.beta2))
        self.disc_opt = Adam(self.disc, c.lr, (c.beta1, c.beta2))

    def tensors(self) -> dict:
        out = {f"gen.{k}": v.data for k, v in self.gen.items()}
        out.update({f"disc.{k}": v.data for k, v in self.disc.items()})
        return out

    def save(self, path) -> None:
        meta = {"kind": "gan", "config": self.config.to_dict(), "ship_class": self.ship_class,
                "polarization": self.polarization}
        save_checkpoint(path, self.tensors(), meta)

    @classmethod
    def load(cls, path) -> "GanPair":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "gan":
            raise ValueError(f"{path} is not a GAN checkpoint")
        gan = cls(GanConfig(**meta["config"]), meta["ship_class"], polarization=meta.get("polarization", "VHVV"))
        for name, arr in tensors.items():
            part, key = name.split(".", 1)
            target = gan.gen if part == "gen" else gan.disc
            if target[key].shape != arr.shape:
                raise ValueError(f"{path}: {name} has shape {arr.shape}, expected {target[key].shape}")
            target[key].data = arr.astype(target[key].dtype)
        return gan


def _bias(x: Tensor, b: Tensor) -> Tensor:
    return ops.add(x, ops.broadcast_to(b, x.shape))


def generator_forward(z, gan: GanPair, trace: list | None = None) -> Tensor:
    """Latent batch (N, latent_dim) -> tiles (N, T, T, 1) in [-1, 1]."""
    c, p = gan.config, gan.gen
    z = z if isinstance(z, Tensor) else Tensor(z)
    single = z.ndim == 1
    if single:
        z = ops.reshape(z, (1, -1))
    if z.shape[1] != c.latent_dim:
        raise ValueError(f"latent vectors must have {c.latent_dim} entries, got {z.shape[1]}")
    n = z.shape[0]
    h = ops.reshape(ops.dense(z, p["dense_w"], p["dense_b"]), (n, c.base_grid, c.base_grid, c.base_channels))
    h = ops.relu(ops.instance_norm(h))
    size = c.base_grid
    if trace is not None:
        trace.append(size)
    for i in range(1, c.deconv_layers + 1):
        size *= 2
        h = ops.center_crop2d(conv_transpose2d(h, p[f"deconv{i}_w"], stride=2), size, size)
        h = _bias(h, p[f"deconv{i}_b"])
        h = ops.relu(ops.instance_norm(h)) if i < c.deconv_layers else ops.tanh(h)
        if trace is not None:
            trace.append(size)
    return ops.reshape(h, h.shape[1:]) if single else h


def discriminator_logits(x, gan: GanPair, trace: list | None = None) -> Tensor:
    c, p = gan.config, gan.disc
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 3:
        x = ops.reshape(x, (1,) + x.shape)
    if x.shape[1:] != (c.tile_size, c.tile_size, 1):
        raise ValueError(f"discriminator expects ({c.tile_size}, {c.tile_size}, 1) tiles, got {x.shape[1:]}")
    h = x
    if trace is not None:
        trace.append(h.shape[1])
    for i in range(1, len(c.disc_channels) + 1):
        h = _bias(conv2d(ops.pad2d(h, c.disc_pad), p[f"conv{i}_w"], stride=2), p[f"conv{i}_b"])
        if i > 1:
            h = ops.instance_norm(h)
        h = ops.leaky_relu(h, c.leak)
        if trace is not None:
            trace.append(h.shape[1])
    h = ops.reshape(h, (h.shape[0], -1))
    return ops.dense(h, p["dense_w"], p["dense_b"])


def discriminator_forward(x, gan: GanPair) -> np.ndarray:
    """Probability that each tile is real, shape (N,)."""
    with no_grad():
        return ops.sigmoid(discriminator_logits(x, gan)).data[:, 0]


def gan_train_step(real_batch, gan: GanPair, rng: np.random.Generator) -> tuple[float, float]:
    """One discriminator update, then one generator update through a frozen discriminator."""
    real = np.asarray(real_batch)
    if real.ndim != 4 or len(real) == 0:
        raise ValueError("real_batch must be a non-empty (N, T, T, 1) array")
    c = gan.config
    n = len(real)

    z = rng.standard_normal((n, c.latent_dim))
    with no_grad():
        fake = generator_forward(z, gan).data
    gan.disc_opt.zero_grad()
    d_real = ops.bce_with_logits(discriminator_logits(real, gan), 1.0)
    d_fake = ops.bce_with_logits(discriminator_logits(fake, gan), 0.0)
    d_loss = ops.scale(ops.add(d_real, d_fake), 0.5)
    backward(d_loss)
    gan.disc_opt.step()

    z = rng.standard_normal((n, c.latent_dim))
    gan.gen_opt.zero_grad()
    g_loss = ops.bce_with_logits(discriminator_logits(generator_forward(z, gan), gan), 1.0)
    backward(g_loss)
    gan.gen_opt.step()
    gan.disc_opt.zero_grad()
    return d_loss.item(), g_loss.item()


def tiles_to_gan_inputs(tiles, config: GanConfig) -> np.ndarray:
    """sigma-nought tiles -> (N, T, T, 1) float32 in [-1, 1]."""
    out = []
    for t in tiles:
        img = t.pixels[:, :, 0]
        if img.shape != (config.tile_size, config.tile_size):
            img = bilinear_resize(img, config.tile_size, config.tile_size)
        out.append(normalize_tile(img, config.db_min, config.db_max) * 2.0 - 1.0)
    return np.asarray(out, dtype=np.float32).reshape(len(out), config.tile_size, config.tile_size, 1)


def train_gan(tiles, ship_class: str, config: GanConfig | None = None, seed: int = 0,
              polarization: str = "VHVV", callback=None) -> GanPair:
    """Train a GAN on the tiles of ``ship_class``; the per-epoch mean losses land in ``history``."""
    config = config or GanConfig()
    data = [t for t in select_polarization(tiles, polarization) if t.ship_class == ship_class]
    if not data:
        raise ValueError(f"no {ship_class} tiles to train on")
    x = tiles_to_gan_inputs(data, config)
    gan = GanPair(config, ship_class, seed, polarization)
    rng = np.random.default_rng([seed, 11])
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x))
        d_sum = g_sum = 0.0
        for start in range(0, len(x), config.batch):
            idx = order[start:start + config.batch]
            d, g = gan_train_step(x[idx], gan, rng)
            d_sum += d * len(idx)
            g_sum += g * len(idx)
        record = {"epoch": epoch, "d_loss": d_sum / len(x), "g_loss": g_sum / len(x)}
        gan.history.append(record)
        if callback is not None:
            callback(record)
    return gan


def history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in history:
        writer.writerow({k: repr(rec[k]) for k in HISTORY_FIELDS})
    return buf.getvalue()


def generate_tiles(gan: GanPair, count: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """``count`` generated tiles mapped back to linear sigma-nought, shape (count, S, S, 1)."""
    c = gan.config
    out = []
    with no_grad():
        for start in range(0, count, 64):
            n = min(64, count - start)
            img = generator_forward(rng.standard_normal((n, c.latent_dim)), gan).data[..., 0]
            out.extend(denormalize_tile((img + 1.0) / 2.0, c.db_min, c.db_max))
    size = size or c.tile_size
    tiles = [im if im.shape[0] == size else bilinear_resize(im, size, size) for im in out]
    return np.asarray(tiles, dtype=np.float32).reshape(count, size, size, 1)


def rebalance(tiles, gans: dict, target: int = 2000, seed: int = 0) -> list:
    """Append generated training tiles until every class holds ``target`` tiles.

    Counts cover train-split (or not yet split) tiles. Classes already at or
    above ``target`` are left untouched; nothing is subsampled.
    """
    tiles = list(tiles)
    split_known = any(t.split for t in tiles)
    pool = [t for t in tiles if t.split == "train"] if split_known else tiles
    size = tiles[0].pixels.shape[0] if tiles and tiles[0].pixels is not None else None
    out = list(tiles)
    for k, cls in enumerate(CLASSES):
        have = sum(1 for t in pool if t.ship_class == cls)
        if have == 0 and cls not in gans:
            continue
        missing = target - have
        if missing <= 0:
            continue
        gan = gans.get(cls)
        if gan is None:
            raise ValueError(f"class {cls} needs {missing} generated tiles but has no GAN")
        rng = np.random.default_rng([seed, k, have])
        images = generate_tiles(gan, missing, rng, size)
        pols = ["VH", "VV"] if gan.polarization == "VHVV" else [gan.polarization]
        for i, img in enumerate(images):
            pol = pols[i % len(pols)]
            out.append(ShipTile(id=f"gan-{cls}-{have + i:06d}_{pol}", pixels=img, polarization=pol,
                                ship_class=cls, synthetic=True, split="train" if split_known else ""))
    return out


__all__ = [
    "GanConfig", "GanPair", "discriminator_forward", "discriminator_logits", "gan_train_step",
    "generate_tiles", "generator_forward", "history_csv", "rebalance", "tiles_to_gan_inputs", "train_gan",
]

