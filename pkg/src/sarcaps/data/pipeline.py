"""Tile preparation: labelling, resize/pad, dB normalization, splits and augmentation."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import replace

import numpy as np
from scipy import ndimage

from .tiles import CLASSES, ShipTile

DB_MIN = -35.0
DB_MAX = 0.0
SIGMA0_FLOOR = 1e-10

# (ElaboratedType, inclusive AIS type range) -> class
_LABEL_RULES = {
    "Container Ship": ((70, 79), "ContainerShip"),
    "Tanker": ((80, 89), "Tanker"),
    "Bulk Carrier": ((70, 79), "BulkCarrier"),
}

POLARIZATION_MODES = ("VH", "VV", "VHVV")
AUGMENT_POLICIES = ("A", "B")


def label_from_metadata(elaborated_type: str, ais_type: int) -> str | None:
    """Ship class for an OpenSARShip chip, or ``None`` when the chip is rejected."""
    rule = _LABEL_RULES.get(str(elaborated_type).strip())
    if rule is None:
        return None
    (lo, hi), name = rule
    try:
        ais = int(ais_type)
    except (TypeError, ValueError):
        return None
    return name if lo <= ais <= hi else None


def _plane(tile) -> np.ndarray:
    arr = tile.pixels if isinstance(tile, ShipTile) else np.asarray(tile)
    return arr[:, :, 0] if arr.ndim == 3 else arr


def estimate_sea_background(tile, ring: int = 2) -> float:
    """Median of the ``ring``-pixel border of the tile."""
    img = _plane(tile)
    h, w = img.shape
    if h < 8 or w < 8:
        raise ValueError(f"tile {h}x{w} too small for a background estimate (need 8x8)")
    border = np.concatenate([
        img[:ring, :].ravel(), img[-ring:, :].ravel(),
        img[ring:-ring, :ring].ravel(), img[ring:-ring, -ring:].ravel(),
    ])
    return float(np.median(border))


def _linear_weights(src: int, dst: int):
    # half-pixel-centred sample positions, clamped at the edges
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def bilinear_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    lo, hi, f = _linear_weights(img.shape[0], height)
    rows = img[lo] * (1 - f)[:, None] + img[hi] * f[:, None]
    lo, hi, f = _linear_weights(img.shape[1], width)
    return rows[:, lo] * (1 - f) + rows[:, hi] * f


def resize_or_pad(tile, target: int = 128) -> np.ndarray:
    """Bring a chip to ``target x target x 1``.

    Chips larger than the target (in either dimension) are bilinearly
    resampled; smaller chips are centre-padded with the sea background.
    """
    img = _plane(tile)
    if img.size == 0:
        raise ValueError("empty tile")
    h, w = img.shape
    if h == target and w == target:
        out = img
    elif max(h, w) > target:
        out = bilinear_resize(img, target, target)
    else:
        out = np.full((target, target), estimate_sea_background(img), dtype=np.float64)
        top, left = (target - h) // 2, (target - w) // 2
        out[top:top + h, left:left + w] = img
    return np.asarray(out, dtype=np.float32)[:, :, None]


def _check_db(db_min, db_max):
    if db_min >= db_max:
        raise ValueError(f"db_min ({db_min}) must be below db_max ({db_max})")


def normalize_tile(x, db_min: float = DB_MIN, db_max: float = DB_MAX) -> np.ndarray:
    """Linear sigma-nought to [0, 1] through a clamped dB scale."""
    _check_db(db_min, db_max)
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("sigma-nought must be non-negative")
    db = 10.0 * np.log10(np.maximum(x, SIGMA0_FLOOR))
    return np.clip((db - db_min) / (db_max - db_min), 0.0, 1.0)


def denormalize_tile(t, db_min: float = DB_MIN, db_max: float = DB_MAX) -> np.ndarray:
    _check_db(db_min, db_max)
    t = np.asarray(t, dtype=np.float64)
    return 10.0 ** ((db_min + t * (db_max - db_min)) / 10.0)


def select_polarization(tiles, mode: str) -> list:
    """VH or VV keep matching tiles; VHVV keeps both as independent samples."""
    if mode not in POLARIZATION_MODES:
        raise ValueError(f"unknown polarization mode {mode!r}; expected one of {POLARIZATION_MODES}")
    if mode == "VHVV":
        return list(tiles)
    return [t for t in tiles if t.polarization == mode]


def split_dataset(tiles, proportions=(64, 16, 20), seed: int = 0) -> list:
    """Stratified, chip-grouped train/val/test assignment.

    Per class the shuffled chips go floor(n*p_train), floor(n*p_val) and the
    remainder to test. The VH and VV tiles of a chip always share a split and
    generated tiles always stay in train.
    """
    proportions = tuple(int(p) for p in proportions)
    if len(proportions) != 3 or sum(proportions) != 100 or min(proportions) < 0:
        raise ValueError(f"proportions must be three non-negative integers summing to 100, got {proportions}")
    tiles = list(tiles)
    if not tiles:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    assignment = {}
    for cls in CLASSES:
        chips = list(OrderedDict.fromkeys(t.chip for t in tiles if t.ship_class == cls and not t.synthetic))
        n = len(chips)
        if n == 0:
            continue
        order = rng.permutation(n)
        n_train = n * proportions[0] // 100
        n_val = n * proportions[1] // 100
        for rank, idx in enumerate(order):
            split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            assignment[(cls, chips[idx])] = split
    out = []
    for t in tiles:
        split = "train" if t.synthetic else assignment[(t.ship_class, t.chip)]
        out.append(replace(t, split=split))
    return out


def flip_horizontal(pixels: np.ndarray) -> np.ndarray:
    return pixels[:, ::-1].copy()


def flip_vertical(pixels: np.ndarray) -> np.ndarray:
    return pixels[::-1].copy()


def rotate(pixels: np.ndarray, angle_deg: float) -> np.ndarray:
    """Bilinear rotation about the centre; uncovered corners get the sea background."""
    img = _plane(pixels).astype(np.float64)
    fill = estimate_sea_background(img)
    out = ndimage.rotate(img, angle_deg, reshape=False, order=1, mode="constant", cval=fill)
    return out.astype(np.float32)[:, :, None]


def augment(tiles, policy: str, seed: int = 0) -> list:
    """Policy A: original plus both flips (3n). Policy B: A plus one random rotation (4n)."""
    if policy not in AUGMENT_POLICIES:
        raise ValueError(f"unknown augmentation policy {policy!r}")
    tiles = list(tiles)
    for t in tiles:
        if t.split in ("val", "test"):
            raise ValueError(f"augmentation is train-only; tile {t.id} is in {t.split}")
    rng = np.random.default_rng(seed)
    out = []
    for t in tiles:
        out.append(t)
        out.append(_derived(t, flip_horizontal(t.pixels), "hflip"))
        out.append(_derived(t, flip_vertical(t.pixels), "vflip"))
        if policy == "B":
            angle = float(rng.uniform(-180.0, 180.0))
            out.append(_derived(t, rotate(t.pixels, angle), "rot"))
    return out


def _derived(t: ShipTile, pixels: np.ndarray, tag: str) -> ShipTile:
    # keep the polarization suffix last so the chip key still groups the pair
    base, pol = t.chip, t.polarization
    new_id = f"{base}-{tag}_{pol}" if t.id.endswith("_" + pol) else f"{t.id}-{tag}"
    return t.with_pixels(pixels, id=new_id, split="train")
