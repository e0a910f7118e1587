from .pipeline import (
    augment,
    denormalize_tile,
    estimate_sea_background,
    flip_horizontal,
    flip_vertical,
    label_from_metadata,
    normalize_tile,
    resize_or_pad,
    rotate,
    select_polarization,
    split_dataset,
)
from .synth import synth_dataset
from .tiles import CLASSES, POLARIZATIONS, Manifest, ShipTile, read_tile, write_tile

__all__ = [
    "CLASSES", "POLARIZATIONS", "Manifest", "ShipTile", "augment", "denormalize_tile",
    "estimate_sea_background", "flip_horizontal", "flip_vertical", "label_from_metadata",
    "normalize_tile", "read_tile", "resize_or_pad", "rotate", "select_polarization",
    "split_dataset", "synth_dataset", "write_tile",
]
