"""Import a directory of per-chip rasters with OpenSARShip-style metadata.

Expected layout (any nesting depth)::

    <chip>_vh.npy   <chip>_vv.npy   <chip>.xml

Rasters may be ``.npy`` (2-D float arrays), ``.sart`` tiles or float TIFFs.
The XML file must contain ``ElaboratedType`` and ``AISShipInformation``
elements somewhere in its tree.
"""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .pipeline import label_from_metadata, resize_or_pad
from .tiles import Manifest, ShipTile, read_tile

logger = logging.getLogger(__name__)

RASTER_SUFFIXES = (".npy", ".sart", ".tif", ".tiff")


def read_metadata(path: Path) -> tuple[str, int | None]:
    root = ET.parse(path).getroot()

    def find(tag):
        for el in root.iter():
            if el.tag.split("}")[-1] == tag and el.text is not None:
                return el.text.strip()
        return None

    elaborated = find("ElaboratedType") or ""
    ais = find("AISShipInformation")
    try:
        ais_type = int(float(ais)) if ais is not None else None
    except ValueError:
        ais_type = None
    return elaborated, ais_type


def read_raster(path: Path) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".npy":
        arr = np.load(path)
    elif suffix == ".sart":
        arr, _ = read_tile(path)
    else:
        from PIL import Image

        with Image.open(path) as im:
            arr = np.asarray(im, dtype=np.float32)
    arr = np.asarray(arr, dtype=np.float32)
    return arr[:, :, 0] if arr.ndim == 3 else arr


def _split_name(path: Path):
    stem = path.stem
    for pol in ("VH", "VV"):
        if stem.upper().endswith("_" + pol):
            return stem[: -len(pol) - 1], pol
    return None, None


def import_directory(root: str | Path, target: int = 128) -> Manifest:
    """Scan ``root`` for labelled chips and return a manifest of prepared tiles."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"input directory {root} does not exist")
    tiles, rejected = [], 0
    for path in sorted(p for p in root.rglob("*") if p.suffix.lower() in RASTER_SUFFIXES):
        chip, pol = _split_name(path)
        if chip is None:
            logger.warning("skipping %s: no _vh/_vv suffix", path)
            continue
        meta = path.with_name(chip + ".xml")
        if not meta.exists():
            logger.warning("skipping %s: missing metadata %s", path, meta.name)
            continue
        elaborated, ais = read_metadata(meta)
        ship_class = label_from_metadata(elaborated, ais)
        if ship_class is None:
            rejected += 1
            continue
        chip_id = str(path.parent.relative_to(root) / chip).replace("/", "-").lstrip(".-")
        pixels = resize_or_pad(read_raster(path), target)
        tiles.append(ShipTile(id=f"{chip_id}_{pol}", pixels=pixels, polarization=pol,
                              ship_class=ship_class, elaborated_type=elaborated,
                              ais_type=ais if ais is not None else -1))
    logger.info("imported %d tiles, rejected %d by class filter", len(tiles), rejected)
    return Manifest(tiles)
