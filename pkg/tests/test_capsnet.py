import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sarcaps.capsnet import (
    SQUASH_EPS,
    CapsNet,
    CapsNetConfig,
    capsnet_forward,
    decoder_forward,
    dynamic_routing,
    margin_loss,
    one_hot,
    predict,
    reconstruction_loss,
    squash,
)
from sarcaps.tensor import Tensor, backward, gradient_check, no_grad, ops, precision


def tiny_config(**kw):
    base = dict(input_size=12, conv1_kernels=4, conv1_size=3, conv1_stride=1, primary_channels=2, caps_dim=4,
                primary_size=3, primary_stride=2, class_dim=4, decoder_hidden=(8, 8))
    return CapsNetConfig(**{**base, **kw})


def generic_point(model, rng):
    """Random biases so no relu pre-activation sits exactly on its kink."""
    for name, p in model.parameters().items():
        if name.endswith("_b"):
            p.data = rng.uniform(0.01, 0.1, size=p.shape).astype(p.dtype)


def squash_oracle(s):
    sq = np.sum(s * s, axis=-1, keepdims=True)
    return s * (sq / ((sq + 1.0) * np.sqrt(sq + SQUASH_EPS)))


# -- squash -----------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (5, 8), elements=st.floats(-1e3, 1e3)))
def test_squash_keeps_direction_and_bounds_length(s):
    with precision(np.float64):
        v = squash(Tensor(s)).data
    norms = np.linalg.norm(v, axis=-1)
    assert (norms < 1.0).all()
    s_norm = np.linalg.norm(s, axis=-1)
    ok = s_norm > 1e-3
    cos = np.sum(v[ok] * s[ok], axis=-1) / (norms[ok] * s_norm[ok])
    np.testing.assert_allclose(cos, 1.0, atol=1e-9)


def test_squash_length_closed_form():
    with precision(np.float64):
        for length in (0.5, 1.0, 3.0):
            v = squash(Tensor([[length, 0.0, 0.0]])).data
            assert np.linalg.norm(v) == pytest.approx(length ** 2 / (1 + length ** 2), rel=1e-8)


# -- routing ----------------------------------------------------------------

@pytest.mark.parametrize("iterations", [1, 2, 3, 5])
def test_couplings_sum_to_one_every_iteration(iterations):
    rng = np.random.default_rng(iterations)
    u_hat = Tensor(rng.standard_normal((3, 20, 4, 6)))
    _, history = dynamic_routing(u_hat, iterations)
    assert len(history) == iterations
    for c in history:
        np.testing.assert_allclose(c.sum(axis=-1), 1.0, atol=1e-6)


def test_single_iteration_is_squashed_uniform_average_bit_exact():
    # dyadic entries and a power-of-two class count keep every sum exact
    rng = np.random.default_rng(0)
    u_hat = rng.integers(-8, 9, size=(8, 4, 5)) / 8.0
    with precision(np.float64):
        v, history = dynamic_routing(Tensor(u_hat), iterations=1)
    np.testing.assert_array_equal(history[0], np.full((8, 4), 0.25))
    s = u_hat.sum(axis=0) / 4.0
    np.testing.assert_array_equal(v.data, squash_oracle(s))


@pytest.mark.parametrize("seed", range(5))
def test_single_iteration_matches_oracle_generic(seed):
    rng = np.random.default_rng(seed)
    i, j = int(rng.integers(1, 9)), int(rng.integers(2, 5))
    u_hat = rng.standard_normal((i, j, 6))
    with precision(np.float64):
        v, _ = dynamic_routing(Tensor(u_hat), iterations=1)
    np.testing.assert_allclose(v.data, squash_oracle(u_hat.mean(axis=0) * i / j), atol=1e-12)


def test_agreeing_capsules_gain_coupling():
    # capsules 0-2 agree on class 0; capsule 3 predicts noise for it
    u_hat = np.zeros((4, 2, 3))
    u_hat[:3, 0] = [1.0, 0.0, 0.0]
    u_hat[3, 0] = [-1.0, 0.0, 0.0]
    u_hat[:, 1] = [[0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
    with precision(np.float64):
        _, history = dynamic_routing(Tensor(u_hat), iterations=3)
    assert history[-1][0, 0] > history[0][0, 0]
    assert history[-1][3, 0] < history[0][3, 0]


def test_detached_couplings_do_not_change_the_forward_pass():
    rng = np.random.default_rng(1)
    u_hat = Tensor(rng.standard_normal((2, 6, 3, 4)))
    a, _ = dynamic_routing(u_hat, 3)
    b, _ = dynamic_routing(u_hat, 3, detach_couplings=True)
    np.testing.assert_array_equal(a.data, b.data)


def test_routing_rejects_zero_iterations():
    with pytest.raises(ValueError):
        dynamic_routing(Tensor(np.ones((2, 2, 2))), 0)


# -- losses -----------------------------------------------------------------

@pytest.mark.parametrize("norms,labels,expected", [
    ([0.9, 0.0, 0.0], [1, 0, 0], 0.0),
    ([0.0, 0.0, 0.0], [1, 0, 0], 0.81),
    ([0.9, 1.0, 0.0], [1, 0, 0], 0.405),
    ([0.95, 0.1, 0.05], [1, 0, 0], 0.0),
])
def test_margin_loss_closed_forms(norms, labels, expected):
    with precision(np.float64):
        value = margin_loss(Tensor([norms]), np.array([labels])).item()
    assert abs(value - expected) < 1e-7


def test_margin_loss_sums_over_samples():
    with precision(np.float64):
        norms = Tensor([[0.0, 0.0, 0.0], [0.9, 1.0, 0.0]])
        assert margin_loss(norms, one_hot([0, 0], 3)).item() == pytest.approx(0.81 + 0.405)


def test_margin_loss_rejects_bad_labels():
    with pytest.raises(ValueError):
        margin_loss(Tensor([[0.5, 0.5, 0.5]]), np.array([[1.0, 1.0, 0.0]]))
    with pytest.raises(ValueError):
        margin_loss(Tensor([[0.5, 0.5, 0.5]]), np.array([[1.0, 0.0]]))


def test_reconstruction_loss_closed_form():
    recon = Tensor(np.full((1, 2, 2, 1), 0.5))
    target = np.zeros((1, 2, 2, 1))
    assert reconstruction_loss(recon, target).item() == pytest.approx(0.0005 * 4 * 0.25)
    with pytest.raises(ValueError):
        reconstruction_loss(recon, np.zeros((1, 3, 3, 1)))


# -- model ------------------------------------------------------------------

def test_geometry_of_reference_and_desk_configs():
    ref = CapsNetConfig()
    assert (ref.conv1_grid, ref.primary_grid, ref.num_primary) == (120, 56, 56 * 56 * 32)
    desk = CapsNetConfig.desk()
    assert (desk.conv1_grid, desk.primary_grid, desk.num_primary) == (28, 10, 3200)
    assert desk.decoder_hidden == (512, 1024) and desk.recon_scale == 0.0005


@pytest.mark.parametrize("bad", [dict(conv1_kernels=0), dict(m_minus=0.95), dict(recon_scale=-1.0),
                                 dict(input_size=4)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        tiny_config(**bad)


def test_forward_shapes_and_ranges():
    model = CapsNet(tiny_config(), seed=0)
    x = np.random.default_rng(0).uniform(size=(3, 12, 12, 1))
    norms, v, recon = capsnet_forward(x, model, mask_labels=[0, 1, 2])
    assert norms.shape == (3, 3) and v.shape == (3, 3, 4) and recon.shape == (3, 12, 12, 1)
    assert (norms.data < 1).all() and (recon.data > 0).all() and (recon.data < 1).all()
    assert predict(model, x).shape == (3,)
    single, _, _ = capsnet_forward(x[0], model)
    np.testing.assert_allclose(single.data[0], norms.data[0], rtol=1e-5)


def test_decoder_sees_only_the_masked_capsule():
    model = CapsNet(tiny_config(), seed=0)
    rng = np.random.default_rng(0)
    v = rng.standard_normal((1, 3, 4)) * 0.3
    other = v.copy()
    other[0, 2] = rng.standard_normal(4)
    a = decoder_forward(Tensor(v), [1], model).data
    b = decoder_forward(Tensor(other), [1], model).data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, decoder_forward(Tensor(v), one_hot([1], 3), model).data)


def test_same_seed_same_parameters():
    a, b = CapsNet(tiny_config(), seed=5), CapsNet(tiny_config(), seed=5)
    for name in a.parameters():
        np.testing.assert_array_equal(a.parameters()[name].data, b.parameters()[name].data)


def test_scores_do_not_touch_parameters():
    model = CapsNet(tiny_config(), seed=0)
    before = {k: p.data.copy() for k, p in model.parameters().items()}
    x = np.random.default_rng(0).uniform(size=(2, 12, 12, 1))
    first = model.scores(x)
    np.testing.assert_array_equal(first, model.scores(x))
    for k, p in model.parameters().items():
        np.testing.assert_array_equal(before[k], p.data)


def test_end_to_end_gradients():
    rng = np.random.default_rng(2)
    with precision(np.float64):
        # a larger routing init puts class lengths mid-range, away from the FD noise floor
        model = CapsNet(tiny_config(recon_scale=1.0, routing_init_std=0.5), seed=3)
        generic_point(model, rng)
        x = rng.uniform(size=(2, 12, 12, 1))
        labels = np.array([0, 2])
        # the checker perturbs the parameter arrays in place
        err = gradient_check(lambda *_: model.loss(x, labels)[0], list(model.parameters().values()),
                             max_coords=12, seed=0)
    assert err < 1e-4


def test_detached_couplings_change_only_the_routing_gradient():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(2, 12, 12, 1))
    grads = {}
    with precision(np.float64):
        for detach in (False, True):
            model = CapsNet(tiny_config(detach_couplings=detach, routing_init_std=0.5), seed=3)
            backward(model.loss(x, [0, 2])[0])
            grads[detach] = {k: p.grad for k, p in model.parameters().items()}
    np.testing.assert_allclose(grads[True]["dec1_w"], grads[False]["dec1_w"], atol=1e-12)
    assert not np.allclose(grads[True]["routing_w"], grads[False]["routing_w"])


def test_loss_is_batch_mean_of_margin_plus_reconstruction():
    model = CapsNet(tiny_config(), seed=0)
    x = np.random.default_rng(0).uniform(size=(2, 12, 12, 1)).astype(np.float32)
    with no_grad():
        total, _ = model.loss(x, [0, 1])
        norms, _, recon = capsnet_forward(x, model, mask_labels=[0, 1])
        expected = (margin_loss(norms, one_hot([0, 1], 3)).item()
                    + reconstruction_loss(recon, x).item()) / 2
    assert total.item() == pytest.approx(expected, rel=1e-6)


def test_softmax_of_routing_logits_uses_class_axis():
    # sanity check of the axis convention: couplings for one input capsule sum over classes
    c = ops.softmax(Tensor(np.zeros((1, 5, 3))), axis=2).data
    np.testing.assert_allclose(c, 1 / 3)
