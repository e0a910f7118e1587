import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarcaps.data import (
    CLASSES,
    Manifest,
    ShipTile,
    augment,
    denormalize_tile,
    estimate_sea_background,
    flip_horizontal,
    flip_vertical,
    label_from_metadata,
    normalize_tile,
    read_tile,
    resize_or_pad,
    rotate,
    select_polarization,
    split_dataset,
    synth_dataset,
    write_tile,
)
from sarcaps.data.importer import import_directory
from sarcaps.data.pipeline import bilinear_resize
from sarcaps.data.tiles import MANIFEST_FIELDS, TileFormatError


def make_tiles(n, cls="Tanker", pols=("VH",), size=8, synthetic=False):
    px = np.ones((size, size, 1), dtype=np.float32)
    return [ShipTile(id=f"c{i:05d}_{p}", pixels=px, polarization=p, ship_class=cls, synthetic=synthetic)
            for i in range(n) for p in pols]


# -- labelling ---------------------------------------------------------------

@pytest.mark.parametrize("etype,ais,expected", [
    ("Tanker", 84, "Tanker"),
    ("Tanker", 80, "Tanker"),
    ("Tanker", 89, "Tanker"),
    ("Tanker", 90, None),
    ("Container Ship", 75, "ContainerShip"),
    ("Container Ship", 80, None),
    ("Bulk Carrier", 70, "BulkCarrier"),
    ("Bulk Carrier", 85, None),
    ("Fishing", 30, None),
    ("Tanker", None, None),
])
def test_label_from_metadata(etype, ais, expected):
    assert label_from_metadata(etype, ais) == expected


# -- background, resize, normalization ---------------------------------------

def test_sea_background_is_border_median():
    tile = np.full((16, 16), 0.01)
    tile[4:12, 4:12] = 1.0
    assert estimate_sea_background(tile) == pytest.approx(0.01)
    assert estimate_sea_background(np.full((8, 8), 0.3)) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        estimate_sea_background(np.ones((7, 9)))


def test_sea_background_ignores_interior_permutations():
    rng = np.random.default_rng(0)
    tile = rng.uniform(size=(12, 12))
    shuffled = tile.copy()
    inner = shuffled[2:-2, 2:-2].ravel()
    shuffled[2:-2, 2:-2] = rng.permutation(inner).reshape(8, 8)
    assert estimate_sea_background(tile) == estimate_sea_background(shuffled)


def test_resize_or_pad_cases():
    same = np.random.default_rng(0).uniform(size=(128, 128)).astype(np.float32)
    np.testing.assert_array_equal(resize_or_pad(same)[:, :, 0], same)
    padded = resize_or_pad(np.full((64, 64), 0.2))
    assert padded.shape == (128, 128, 1)
    np.testing.assert_allclose(padded, 0.2, rtol=1e-6)
    with pytest.raises(ValueError):
        resize_or_pad(np.zeros((0, 0)))


def test_downsample_by_two_equals_box_average():
    board = (np.indices((256, 256)).sum(axis=0) % 2).astype(np.float64)
    board += np.random.default_rng(0).uniform(size=board.shape)
    out = resize_or_pad(board)[:, :, 0]
    box = board.reshape(128, 2, 128, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(out, box, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 40), st.integers(8, 40))
def test_padding_keeps_interior_pixels(h, w):
    img = np.random.default_rng(h * 100 + w).uniform(0.1, 1.0, size=(h, w)).astype(np.float32)
    out = resize_or_pad(img, 48)[:, :, 0]
    top, left = (48 - h) // 2, (48 - w) // 2
    np.testing.assert_array_equal(out[top:top + h, left:left + w], img)
    assert out.shape == (48, 48)


def test_bilinear_resize_identity_and_constant():
    img = np.random.default_rng(1).uniform(size=(10, 12))
    np.testing.assert_allclose(bilinear_resize(img, 10, 12), img)
    np.testing.assert_allclose(bilinear_resize(np.full((5, 7), 3.0), 11, 13), 3.0)


def test_normalize_closed_forms():
    np.testing.assert_allclose(normalize_tile(np.array([1.0, 10 ** -3.5, 0.0, 5.0])), [1.0, 0.0, 0.0, 1.0],
                               atol=1e-12)
    with pytest.raises(ValueError):
        normalize_tile(np.array([1.0]), db_min=0.0, db_max=-35.0)
    with pytest.raises(ValueError):
        normalize_tile(np.array([-1.0]))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0))
def test_normalize_inverts_denormalize(t):
    assert normalize_tile(denormalize_tile(t)) == pytest.approx(t, abs=1e-5)


# -- polarization and splits --------------------------------------------------

def test_polarization_modes_on_2738_chips():
    tiles = make_tiles(2738, pols=("VH", "VV"))
    assert len(select_polarization(tiles, "VH")) == 2738
    assert len(select_polarization(tiles, "VHVV")) == 5476
    assert select_polarization(make_tiles(3), "VV") == []
    with pytest.raises(ValueError):
        select_polarization(tiles, "HH")


def test_split_2738_follows_floor_and_remainder():
    out = split_dataset(make_tiles(2738), seed=0)
    counts = [sum(t.split == s for t in out) for s in ("train", "val", "test")]
    assert counts == [1752, 438, 548]


def test_split_is_stratified_and_keeps_chip_pairs_together():
    tiles = make_tiles(100, "Tanker", ("VH", "VV")) + make_tiles(50, "BulkCarrier", ("VH", "VV"))
    tiles = [ShipTile(id=f"{t.ship_class}-{t.id}", pixels=t.pixels, polarization=t.polarization,
                      ship_class=t.ship_class) for t in tiles]
    out = split_dataset(tiles, seed=3)
    for cls, n in (("Tanker", 100), ("BulkCarrier", 50)):
        vh = [t for t in out if t.ship_class == cls and t.polarization == "VH"]
        got = [sum(t.split == s for t in vh) for s in ("train", "val", "test")]
        assert got == [n * 64 // 100, n * 16 // 100, n - n * 64 // 100 - n * 16 // 100]
    by_chip = {}
    for t in out:
        by_chip.setdefault(t.chip, set()).add(t.split)
    assert all(len(s) == 1 for s in by_chip.values())


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 60), st.integers(0, 2 ** 16))
def test_split_is_disjoint_exhaustive_and_deterministic(n, seed):
    tiles = make_tiles(n)
    a, b = split_dataset(tiles, seed=seed), split_dataset(tiles, seed=seed)
    assert [t.split for t in a] == [t.split for t in b]
    assert all(t.split in ("train", "val", "test") for t in a)
    assert len(a) == n


def test_generated_tiles_always_train():
    tiles = make_tiles(10) + make_tiles(5, synthetic=True)
    tiles[-5:] = [ShipTile(id=f"gen{i}_VH", pixels=t.pixels, polarization="VH", ship_class="Tanker",
                           synthetic=True) for i, t in enumerate(tiles[-5:])]
    out = split_dataset(tiles, seed=0)
    assert all(t.split == "train" for t in out if t.synthetic)


def test_split_rejects_bad_proportions():
    with pytest.raises(ValueError):
        split_dataset(make_tiles(5), (50, 30, 30))
    with pytest.raises(ValueError):
        split_dataset([], seed=0)


# -- augmentation -------------------------------------------------------------

def test_flips_are_involutions():
    img = np.random.default_rng(0).uniform(size=(9, 11, 1)).astype(np.float32)
    np.testing.assert_array_equal(flip_horizontal(flip_horizontal(img)), img)
    np.testing.assert_array_equal(flip_vertical(flip_vertical(img)), img)
    assert not np.array_equal(flip_horizontal(img), img)


def test_rotation_fills_corners_with_background():
    img = np.full((32, 32, 1), 0.02, dtype=np.float32)
    img[12:20, 4:28] = 1.0
    out = rotate(img, 45.0)
    assert out.shape == img.shape
    assert out[0, 0, 0] == pytest.approx(0.02)
    np.testing.assert_allclose(rotate(img, 0.0), img, atol=1e-6)


@pytest.mark.parametrize("policy,factor", [("A", 3), ("B", 4)])
def test_augment_counts(policy, factor):
    train = [t.with_pixels(np.random.default_rng(i).uniform(size=(16, 16, 1)), split="train")
             for i, t in enumerate(make_tiles(10, size=16))]
    out = augment(train, policy, seed=0)
    assert len(out) == factor * 10
    assert len({t.id for t in out}) == len(out)
    assert all(t.split == "train" for t in out)
    again = augment(train, policy, seed=0)
    for a, b in zip(out, again):
        np.testing.assert_array_equal(a.pixels, b.pixels)


def test_augment_refuses_held_out_tiles():
    tiles = [t.with_pixels(t.pixels, split="test") for t in make_tiles(2)]
    with pytest.raises(ValueError):
        augment(tiles, "A")
    with pytest.raises(ValueError):
        augment(make_tiles(2), "C")


# -- synthetic generator ---------------------------------------------------------

def test_synth_dataset_counts_determinism_and_contrast():
    tiles, masks = synth_dataset(20, 64, seed=7, return_masks=True)
    assert len(tiles) == 60
    assert {c: sum(t.ship_class == c for t in tiles) for c in CLASSES} == {c: 20 for c in CLASSES}
    again = synth_dataset(20, 64, seed=7)
    for a, b in zip(tiles, again):
        np.testing.assert_array_equal(a.pixels, b.pixels)
    for cls in CLASSES:
        ship = np.mean([t.pixels[m, 0].mean() for t, m in zip(tiles, masks) if t.ship_class == cls])
        sea = np.mean([t.pixels[~m, 0].mean() for t, m in zip(tiles, masks) if t.ship_class == cls])
        assert ship > 5 * sea
    with pytest.raises(ValueError):
        synth_dataset(0)


def test_synth_vv_twin_shares_the_chip_key():
    tiles = synth_dataset(2, 32, seed=1, polarizations=("VH", "VV"))
    assert len(tiles) == 12
    assert tiles[0].chip == tiles[1].chip and tiles[0].polarization != tiles[1].polarization


# -- file formats ---------------------------------------------------------------

def test_tile_round_trip_and_corruption(tmp_path):
    px = np.random.default_rng(0).uniform(size=(5, 7, 1)).astype(np.float32)
    path = tmp_path / "a.sart"
    write_tile(path, px, "VV")
    back, pol = read_tile(path)
    np.testing.assert_array_equal(back, px)
    assert pol == "VV"
    raw = path.read_bytes()
    assert raw[:4] == b"SART"
    (tmp_path / "bad.sart").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(TileFormatError):
        read_tile(tmp_path / "bad.sart")
    (tmp_path / "short.sart").write_bytes(raw[:-4])
    with pytest.raises(TileFormatError):
        read_tile(tmp_path / "short.sart")


def test_manifest_round_trip(tmp_path):
    tiles = split_dataset(synth_dataset(5, 16, seed=2, polarizations=("VH", "VV")), seed=4)
    manifest = Manifest(tiles, seed=4)
    manifest.save(tmp_path / "m.csv")
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header == ",".join(MANIFEST_FIELDS)
    assert header == "id,path,ship_class,polarization,split,synthetic,elaborated_type,ais_type"
    back = Manifest.load(tmp_path / "m.csv")
    assert back.seed == 4 and len(back) == 30
    assert back.fingerprint() == manifest.fingerprint()
    for a, b in zip(tiles, back.tiles):
        assert (a.id, a.split, a.ship_class) == (b.id, b.split, b.ship_class)
        np.testing.assert_array_equal(a.pixels, b.pixels)
    meta = json.loads((tmp_path / "m.csv.meta.json").read_text())
    assert meta["splits"]["train"] == back.fingerprint()["splits"]["train"]


def test_importer_reads_rasters_and_filters_classes(tmp_path):
    def chip(name, etype, ais, size):
        np.save(tmp_path / f"{name}_vh.npy", np.full((size, size), 0.01, dtype=np.float32))
        np.save(tmp_path / f"{name}_vv.npy", np.full((size, size), 0.05, dtype=np.float32))
        (tmp_path / f"{name}.xml").write_text(
            f"<Ship><ElaboratedType>{etype}</ElaboratedType>"
            f"<AISShipInformation>{ais}</AISShipInformation></Ship>")

    chip("a", "Tanker", 84, 40)
    chip("b", "Container Ship", 72, 200)
    chip("c", "Fishing", 30, 40)
    manifest = import_directory(tmp_path, target=64)
    assert len(manifest) == 4
    assert manifest.class_counts() == {"Tanker": 2, "ContainerShip": 2, "BulkCarrier": 0}
    assert all(t.pixels.shape == (64, 64, 1) for t in manifest.tiles)
    with pytest.raises(FileNotFoundError):
        import_directory(tmp_path / "missing")
