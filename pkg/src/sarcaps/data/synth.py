"""Procedural ship-like SAR chips for desk-scale experiments.

Each class draws an elongated hull on gamma-speckled sea clutter:

* Tanker: a short, beamy, uniformly bright hull.
* ContainerShip: a long, slender, dim hull crossed by four to five bright bays.
* BulkCarrier: a mid-size dim hull with two large bright deck blocks at bow and stern.

VV chips share the geometry of their VH twin but sit on brighter clutter, so
ship/sea contrast is lower.
"""

from __future__ import annotations

import numpy as np

from .tiles import CLASSES, ShipTile

SEA_DB = {"VH": -27.0, "VV": -17.0}
LOOKS = 4.0
# (length as a fraction of the chip, width as a fraction of the length)
SHAPES = {"Tanker": ((0.5, 0.65), (0.24, 0.3)),
          "ContainerShip": ((0.62, 0.8), (0.12, 0.16)),
          "BulkCarrier": ((0.55, 0.7), (0.18, 0.22))}


def _ship_geometry(rng: np.random.Generator, ship_class: str, size: int):
    if ship_class not in SHAPES:
        raise ValueError(f"unknown ship class {ship_class!r}")
    lengths, widths = SHAPES[ship_class]
    centre = size / 2 + rng.uniform(-size / 12, size / 12, size=2)
    theta = rng.uniform(0.0, np.pi)
    length = rng.uniform(*lengths) * size
    width = length * rng.uniform(*widths)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - centre[0], xx - centre[1]
    along = dx * np.cos(theta) + dy * np.sin(theta)
    across = -dx * np.sin(theta) + dy * np.cos(theta)
    half = length / 2
    taper = np.sqrt(np.clip(1 - (along / half) ** 8, 0, 1))
    hull = np.abs(across) <= (width / 2) * taper
    return hull, along / half, length


def _ship_db(rng, ship_class, hull, along, length):
    """Per-pixel ship backscatter in dB (only meaningful inside the hull)."""
    db = np.full(hull.shape, -13.0)
    if ship_class == "Tanker":
        db[:] = rng.uniform(-5.0, -3.0)
    elif ship_class == "ContainerShip":
        db[:] = -16.0
        period = max(4.0, length / rng.uniform(4.5, 5.5))
        phase = rng.uniform(0, period)
        bays = ((along * length / 2 + phase) % period) < period / 2
        db[bays & (np.abs(along) < 0.85)] = -2.0
    elif ship_class == "BulkCarrier":
        db[(along > 0.45) | (along < -0.45)] = -1.0
    else:
        raise ValueError(f"unknown ship class {ship_class!r}")
    return db


def synth_chip(rng: np.random.Generator, ship_class: str, size: int, polarizations=("VH",)):
    """One chip in each requested polarization; returns ``({pol: pixels}, hull_mask)``."""
    hull, along, length = _ship_geometry(rng, ship_class, size)
    ship_db = _ship_db(rng, ship_class, hull, along, length)
    out = {}
    for pol in polarizations:
        db = np.where(hull, ship_db, SEA_DB[pol])
        speckle = rng.gamma(LOOKS, 1.0 / LOOKS, size=hull.shape)
        out[pol] = (10.0 ** (db / 10.0) * speckle).astype(np.float32)[:, :, None]
    return out, hull


def synth_dataset(n_per_class: int, size: int = 64, seed: int = 0, polarizations=("VH",),
                  return_masks: bool = False):
    """``n_per_class`` chips for each ship class, one tile per chip and polarization."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    tiles, masks = [], []
    for cls in CLASSES:
        for i in range(n_per_class):
            chips, hull = synth_chip(rng, cls, size, polarizations)
            for pol, px in chips.items():
                tiles.append(ShipTile(id=f"synth-{cls}-{i:05d}_{pol}", pixels=px, polarization=pol,
                                      ship_class=cls))
                masks.append(hull)
    return (tiles, masks) if return_masks else tiles
