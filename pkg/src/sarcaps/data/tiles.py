"""Ship tiles, the binary tile format and the CSV manifest."""

from __future__ import annotations

import csv
import json
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

CLASSES = ("Tanker", "ContainerShip", "BulkCarrier")
POLARIZATIONS = ("VH", "VV")
SPLITS = ("train", "val", "test")

TILE_MAGIC = b"SART"
TILE_VERSION = 1
_TILE_HEADER = struct.Struct("<4sHHHBB")

MANIFEST_FIELDS = ["id", "path", "ship_class", "polarization", "split", "synthetic",
                   "elaborated_type", "ais_type"]


class TileFormatError(ValueError):
    pass


def class_index(name: str) -> int:
    try:
        return CLASSES.index(name)
    except ValueError:
        raise ValueError(f"unknown ship class {name!r}; expected one of {CLASSES}") from None


@dataclass
class ShipTile:
    """One sigma-nought chip (linear power, H x W x 1) and its labels."""

    id: str
    pixels: np.ndarray | None
    polarization: str
    ship_class: str
    synthetic: bool = False
    split: str = ""
    elaborated_type: str = ""
    ais_type: int = -1
    path: str = ""

    def __post_init__(self):
        if self.polarization not in POLARIZATIONS:
            raise ValueError(f"unknown polarization {self.polarization!r}")
        if self.pixels is not None:
            px = np.asarray(self.pixels, dtype=np.float32)
            if px.ndim == 2:
                px = px[:, :, None]
            if px.ndim != 3 or px.shape[2] != 1:
                raise ValueError(f"tile pixels must be H x W x 1, got {px.shape}")
            self.pixels = px

    @property
    def chip(self) -> str:
        """Physical chip key shared by the VH and VV tiles of one acquisition."""
        for pol in POLARIZATIONS:
            if self.id.endswith("_" + pol):
                return self.id[: -len(pol) - 1]
        return self.id

    @property
    def label(self) -> int:
        return class_index(self.ship_class)

    def with_pixels(self, pixels: np.ndarray, **changes) -> "ShipTile":
        return replace(self, pixels=pixels, path="", **changes)


def write_tile(path: str | Path, pixels: np.ndarray, polarization: str) -> None:
    px = np.asarray(pixels, dtype="<f4")
    if px.ndim == 2:
        px = px[:, :, None]
    h, w, c = px.shape
    header = _TILE_HEADER.pack(TILE_MAGIC, TILE_VERSION, h, w, c, POLARIZATIONS.index(polarization))
    Path(path).write_bytes(header + np.ascontiguousarray(px).tobytes())


def read_tile(path: str | Path) -> tuple[np.ndarray, str]:
    raw = Path(path).read_bytes()
    if len(raw) < _TILE_HEADER.size:
        raise TileFormatError(f"{path}: truncated header")
    magic, version, h, w, c, pol = _TILE_HEADER.unpack_from(raw)
    if magic != TILE_MAGIC:
        raise TileFormatError(f"{path}: bad magic {magic!r}")
    if version != TILE_VERSION:
        raise TileFormatError(f"{path}: unsupported version {version}")
    if pol >= len(POLARIZATIONS):
        raise TileFormatError(f"{path}: bad polarization code {pol}")
    body = raw[_TILE_HEADER.size:]
    if len(body) != h * w * c * 4:
        raise TileFormatError(f"{path}: expected {h * w * c} floats, found {len(body) // 4}")
    pixels = np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float32)
    return pixels, POLARIZATIONS[pol]


@dataclass
class Manifest:
    tiles: list = field(default_factory=list)
    seed: int | None = None

    def __len__(self):
        return len(self.tiles)

    def __iter__(self):
        return iter(self.tiles)

    def split(self, name: str) -> list:
        return [t for t in self.tiles if t.split == name]

    def class_counts(self, split: str | None = None) -> dict:
        tiles = self.tiles if split is None else self.split(split)
        counts = Counter(t.ship_class for t in tiles)
        return {c: counts.get(c, 0) for c in CLASSES}

    def polarization_counts(self) -> dict:
        counts = Counter(t.polarization for t in self.tiles)
        return {p: counts.get(p, 0) for p in POLARIZATIONS}

    def save(self, path: str | Path, tile_dir: str = "tiles") -> None:
        """Write the CSV and any tile whose pixels are not yet on disk."""
        path = Path(path)
        root = path.parent
        (root / tile_dir).mkdir(parents=True, exist_ok=True)
        for t in self.tiles:
            if not t.path:
                t.path = f"{tile_dir}/{t.id}.sart"
                write_tile(root / t.path, t.pixels, t.polarization)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
            writer.writeheader()
            for t in self.tiles:
                writer.writerow({
                    "id": t.id, "path": t.path, "ship_class": t.ship_class,
                    "polarization": t.polarization, "split": t.split,
                    "synthetic": int(t.synthetic), "elaborated_type": t.elaborated_type,
                    "ais_type": t.ais_type,
                })
        meta = {"seed": self.seed, **self.fingerprint()}
        path.with_name(path.name + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path, load_pixels: bool = True) -> "Manifest":
        path = Path(path)
        tiles = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != MANIFEST_FIELDS:
                raise TileFormatError(f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}")
            for row in reader:
                pixels = None
                if load_pixels:
                    pixels, pol = read_tile(path.parent / row["path"])
                    if pol != row["polarization"]:
                        raise TileFormatError(f"{row['id']}: polarization differs between tile and manifest")
                tiles.append(ShipTile(
                    id=row["id"], pixels=pixels, polarization=row["polarization"],
                    ship_class=row["ship_class"], synthetic=row["synthetic"] in ("1", "true", "True"),
                    split=row["split"], elaborated_type=row["elaborated_type"],
                    ais_type=int(row["ais_type"] or -1), path=row["path"],
                ))
        for t in tiles:
            class_index(t.ship_class)
        seed = None
        meta = path.with_name(path.name + ".meta.json")
        if meta.exists():
            seed = json.loads(meta.read_text()).get("seed")
        return cls(tiles, seed=seed)

    def fingerprint(self) -> dict:
        return {
            "tiles": len(self.tiles),
            "classes": self.class_counts(),
            "polarizations": self.polarization_counts(),
            "splits": {s: len(self.split(s)) for s in SPLITS},
        }
