import numpy as np
import pytest

from sarcaps.data import CLASSES, ShipTile, normalize_tile, split_dataset, synth_dataset
from sarcaps.gan import (
    GanConfig,
    GanPair,
    discriminator_forward,
    discriminator_logits,
    gan_train_step,
    generate_tiles,
    generator_forward,
    history_csv,
    rebalance,
    tiles_to_gan_inputs,
    train_gan,
)
from sarcaps.tensor import Tensor, gradient_check, ops, precision


def tiny(**kw):
    return GanConfig(**{**dict(latent_dim=8, base_grid=2, base_channels=8, gen_channels=(8, 8, 4),
                               disc_channels=(4, 8, 8, 8), epochs=2, batch=8), **kw})


def test_grid_sizes_of_desk_and_reference_configs():
    assert GanConfig.desk().tile_size == 32
    assert GanConfig().tile_size == 128
    ref = GanConfig()
    assert (ref.latent_dim, ref.lr, ref.beta1, ref.batch, ref.epochs) == (100, 0.002, 0.5, 32, 2000)


def test_generator_output_shape_and_range():
    gan = GanPair(tiny(), "Tanker", seed=0)
    z = np.random.default_rng(0).standard_normal((5, 8))
    out = generator_forward(z, gan).data
    assert out.shape == (5, 32, 32, 1)
    assert (np.abs(out) < 1).all()
    assert generator_forward(z[0], gan).shape == (32, 32, 1)
    with pytest.raises(ValueError):
        generator_forward(np.zeros((1, 7)), gan)


def test_discriminator_mirrors_generator_sizes():
    gan = GanPair(tiny(), "Tanker", seed=0)
    g_trace, d_trace = [], []
    fake = generator_forward(np.zeros((1, 8)), gan, trace=g_trace)
    discriminator_logits(fake, gan, trace=d_trace)
    assert g_trace == [2, 4, 8, 16, 32]
    assert d_trace == g_trace[::-1]


def test_discriminator_probabilities_and_determinism():
    x = np.random.default_rng(1).uniform(-1, 1, size=(3, 32, 32, 1))
    a = discriminator_forward(x, GanPair(tiny(), "Tanker", seed=4))
    b = discriminator_forward(x, GanPair(tiny(), "Tanker", seed=4))
    assert a.shape == (3,) and ((a > 0) & (a < 1)).all()
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        discriminator_forward(np.zeros((1, 16, 16, 1)), GanPair(tiny(), "Tanker"))


def test_generator_and_discriminator_gradients():
    rng = np.random.default_rng(0)
    with precision(np.float64):
        gan = GanPair(tiny(), "Tanker", seed=1)
        for p in list(gan.gen.values()) + list(gan.disc.values()):
            if p.ndim == 1:
                p.data = rng.uniform(0.01, 0.1, size=p.shape)
        # a bias feeding an instance norm has an exactly zero gradient, so only its vanishing is checked
        normed = {"deconv1_b", "deconv2_b", "deconv3_b", "conv2_b", "conv3_b", "conv4_b"}
        z = rng.standard_normal((2, 8))
        r = Tensor(rng.standard_normal((2, 32, 32, 1)))
        gen = [p for k, p in gan.gen.items() if k not in normed]
        gen_err = gradient_check(lambda *_: ops.sum(ops.mul(generator_forward(z, gan), r)), gen, max_coords=6)
        x = rng.uniform(-1, 1, size=(2, 32, 32, 1))
        disc = [p for k, p in gan.disc.items() if k not in normed]
        disc_err = gradient_check(lambda *_: ops.bce_with_logits(discriminator_logits(x, gan), 1.0), disc,
                                  max_coords=6)
        gradient_check(lambda *_: ops.bce_with_logits(discriminator_logits(x, gan), 1.0),
                       list(gan.disc.values()), max_coords=1)
        gradient_check(lambda *_: ops.sum(ops.mul(generator_forward(z, gan), r)), list(gan.gen.values()),
                       max_coords=1)
    assert gen_err < 1e-4 and disc_err < 1e-4
    for k in normed:
        params = gan.gen if k.startswith("deconv") else gan.disc
        assert np.abs(params[k].grad).max() < 1e-10


def test_train_step_freezes_discriminator_during_generator_update(monkeypatch):
    gan = GanPair(tiny(), "Tanker", seed=0)
    real = np.random.default_rng(0).uniform(-1, 1, size=(4, 32, 32, 1)).astype(np.float32)
    snapshots = []
    original = gan.gen_opt.step

    def spy(lr=None):
        snapshots.append({k: p.data.copy() for k, p in gan.disc.items()})
        original(lr)
        snapshots.append({k: p.data.copy() for k, p in gan.disc.items()})

    monkeypatch.setattr(gan.gen_opt, "step", spy)
    d_before = {k: p.data.copy() for k, p in gan.disc.items()}
    d_loss, g_loss = gan_train_step(real, gan, np.random.default_rng(0))
    assert np.isfinite(d_loss) and np.isfinite(g_loss) and d_loss > 0 and g_loss > 0
    # D moved in its own step but not during the generator step
    assert any(not np.array_equal(d_before[k], snapshots[0][k]) for k in d_before)
    for k in d_before:
        np.testing.assert_array_equal(snapshots[0][k], snapshots[1][k])
    assert all(p.grad is None for p in gan.disc.values())
    with pytest.raises(ValueError):
        gan_train_step(np.zeros((0, 32, 32, 1)), gan, np.random.default_rng(0))


def test_discriminator_separates_real_from_generated_after_one_epoch():
    tiles = synth_dataset(24, 32, seed=3)
    config = tiny(epochs=1)
    gan = train_gan(tiles, "Tanker", config, seed=0, polarization="VH")
    real = tiles_to_gan_inputs([t for t in tiles if t.ship_class == "Tanker" and t.polarization == "VH"], config)
    fake = generator_forward(np.random.default_rng(9).standard_normal((24, 8)), gan).data
    assert discriminator_forward(real, gan).mean() > discriminator_forward(fake, gan).mean()


def test_training_is_deterministic_and_history_is_csv():
    tiles = synth_dataset(8, 32, seed=3)
    a = train_gan(tiles, "BulkCarrier", tiny(epochs=3), seed=5, polarization="VH")
    b = train_gan(tiles, "BulkCarrier", tiny(epochs=3), seed=5, polarization="VH")
    assert a.history == b.history and len(a.history) == 3
    assert history_csv(a.history).splitlines()[0] == "epoch,d_loss,g_loss"
    with pytest.raises(ValueError):
        train_gan([t for t in tiles if t.ship_class == "Tanker"], "BulkCarrier", tiny(), polarization="VH")


def test_checkpoint_round_trip(tmp_path):
    gan = GanPair(tiny(), "ContainerShip", seed=2, polarization="VH")
    gan.save(tmp_path / "g.ckpt")
    back = GanPair.load(tmp_path / "g.ckpt")
    assert back.ship_class == "ContainerShip" and back.polarization == "VH"
    z = np.random.default_rng(0).standard_normal((2, 8))
    np.testing.assert_array_equal(generator_forward(z, back).data, generator_forward(z, gan).data)


def test_generated_tiles_are_sigma_nought():
    gan = GanPair(tiny(), "Tanker", seed=0)
    out = generate_tiles(gan, 3, np.random.default_rng(0), size=64)
    assert out.shape == (3, 64, 64, 1)
    t = normalize_tile(generate_tiles(gan, 2, np.random.default_rng(1)))
    assert (t >= 0).all() and (t <= 1).all()


def unbalanced_tiles():
    counts = {"Tanker": 150, "ContainerShip": 90, "BulkCarrier": 200}
    px = np.full((32, 32, 1), 0.01, dtype=np.float32)
    return [ShipTile(id=f"{c}-{i}_VH", pixels=px, polarization="VH", ship_class=c)
            for c, n in counts.items() for i in range(n)]


def test_rebalance_tops_up_exactly_and_is_idempotent():
    gans = {c: GanPair(tiny(), c, seed=k, polarization="VH") for k, c in enumerate(CLASSES)}
    tiles = unbalanced_tiles()
    once = rebalance(tiles, gans, target=200, seed=0)
    counts = {c: sum(t.ship_class == c for t in once) for c in CLASSES}
    assert counts == {c: 200 for c in CLASSES}
    assert sum(t.synthetic for t in once) == 50 + 110
    twice = rebalance(once, gans, target=200, seed=0)
    assert len(twice) == len(once)


def test_rebalance_counts_train_and_keeps_generated_out_of_held_out_splits():
    gans = {c: GanPair(tiny(), c, seed=0) for c in CLASSES}
    tiles = split_dataset(unbalanced_tiles(), seed=0)
    out = rebalance(tiles, gans, target=150, seed=0)
    for c in CLASSES:
        assert sum(t.ship_class == c and t.split == "train" for t in out) >= 150
    assert all(t.split == "train" for t in out if t.synthetic)
    assert len({t.id for t in out}) == len(out)


def test_rebalance_leaves_large_classes_and_requires_gans():
    tiles = unbalanced_tiles()
    with pytest.raises(ValueError):
        rebalance(tiles, {"Tanker": GanPair(tiny(), "Tanker")}, target=200)
    out = rebalance(tiles, {}, target=50)
    assert len(out) == len(tiles)
