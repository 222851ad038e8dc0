"""Network building blocks: init statistics, forward paths, Adam, serialization."""

import numpy as np
import pytest

from koopcontrol import autodiff as ad
from koopcontrol import neural


def test_init_weights_moments():
    rng = np.random.default_rng(77)
    w = neural.init_weights(50, 2, rng)
    assert w.shape == (50, 2)
    draws = neural.init_weights(500, 100, np.random.default_rng(7)).ravel()
    # var = 2/d_in = 0.02; 50000 draws, se(var) ~ var*sqrt(2/n)
    var = draws.var()
    se = 0.02 * np.sqrt(2.0 / draws.size)
    assert abs(var - 0.02) < 3.0 * se
    assert abs(draws.mean()) < 3.0 * np.sqrt(0.02 / draws.size)


def test_init_weights_deterministic_per_seed():
    a = neural.init_weights(4, 3, np.random.default_rng(5))
    b = neural.init_weights(4, 3, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_identity_linear_layer_passes_through():
    layer = neural.DenseLayer(np.eye(3), np.zeros(3), "linear")
    net = neural.Network([layer])
    x = np.array([[0.3, -1.2, 4.0]])
    assert np.array_equal(net.predict(x), x)


def test_relu_layer_clips_negative():
    layer = neural.DenseLayer(np.eye(2), np.zeros(2), "relu")
    net = neural.Network([layer])
    out = net.predict(np.array([[-1.0, 2.0]]))
    assert np.array_equal(out, [[0.0, 2.0]])


def test_predict_handles_single_sample_vector():
    net = neural.make_mlp([3, 5, 2], np.random.default_rng(0))
    flat = net.predict(np.array([1.0, 2.0, 3.0]))
    batched = net.predict(np.array([[1.0, 2.0, 3.0]]))
    assert flat.shape == (2,)
    assert np.allclose(flat, batched[0])


def test_forward_tape_matches_predict():
    net = neural.make_mlp([4, 8, 3], np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(6, 4))
    out = net.forward(ad.constant(x))
    assert np.allclose(out.value, net.predict(x), atol=1e-14)


def test_make_mlp_shapes_and_activations():
    net = neural.make_mlp([4, 128, 64, 32, 2], np.random.default_rng(1))
    assert net.d_in == 4 and net.d_out == 2
    assert [l.activation for l in net.layers] == ["relu"] * 3 + ["linear"]
    assert [l.d_out for l in net.layers] == [128, 64, 32, 2]
    # parameters in layer order, weights before biases
    params = net.parameters()
    assert len(params) == 8
    assert params[0].value.shape == (128, 4)
    assert params[1].value.shape == (128,)


def test_network_rejects_chain_mismatch():
    l1 = neural.DenseLayer(np.zeros((3, 2)), np.zeros(3), "relu")
    l2 = neural.DenseLayer(np.zeros((4, 5)), np.zeros(4), "linear")
    with pytest.raises(ValueError):
        neural.Network([l1, l2])


def test_dense_layer_rejects_unknown_activation():
    with pytest.raises(ValueError):
        neural.DenseLayer(np.zeros((2, 2)), np.zeros(2), "tanh")


def test_adam_first_step_magnitude():
    # First step with gradient 1: m_hat = 1, v_hat = 1, so
    # delta = -lr/(1 + eps) = -9.9999999e-5 at lr = 1e-4.
    p = ad.Parameter(np.array([1.0]))
    opt = neural.Adam([p], lr=1e-4)
    p.grad = np.array([1.0])
    opt.step()
    delta = p.value[0] - 1.0
    assert np.isclose(delta, -1e-4 / (1.0 + 1e-8), rtol=0, atol=1e-12)
    assert -1e-4 < delta < -9.9999e-5
    # sign-following at any magnitude: |delta| ~ lr for g = 0.1 too
    p2 = ad.Parameter(np.array([1.0]))
    opt2 = neural.Adam([p2], lr=1e-4)
    p2.grad = np.array([0.1])
    opt2.step()
    assert np.isclose(p2.value[0] - 1.0, -1e-4, rtol=1e-6)


def test_adam_none_gradient_leaves_param_untouched():
    p1 = ad.Parameter(np.array([1.0]))
    p2 = ad.Parameter(np.array([2.0]))
    opt = neural.Adam([p1, p2], lr=1e-2)
    p1.grad = np.array([1.0])
    p2.grad = None
    opt.step()
    assert p1.value[0] != 1.0
    assert p2.value[0] == 2.0


def test_adam_shared_step_counter_bias_correction():
    # Two steps with the same gradient: the second update is smaller than
    # the first would be repeated, due to v accumulating.
    p = ad.Parameter(np.array([0.0]))
    opt = neural.Adam([p], lr=1e-3)
    p.grad = np.array([1.0])
    opt.step()
    first = p.value[0]
    p.grad = np.array([1.0])
    opt.step()
    assert opt.t == 2
    assert p.value[0] < first < 0.0


def test_adam_rejects_shape_mismatch():
    p = ad.Parameter(np.zeros((2, 2)))
    opt = neural.Adam([p])
    with pytest.raises(ValueError):
        opt.step(grads=[np.zeros(3)])
    with pytest.raises(ValueError):
        opt.step(grads=[np.zeros((2, 2)), np.zeros(1)])


def test_adam_matches_reference_trajectory():
    # hand-rolled reference implementation over a few steps
    rng = np.random.default_rng(11)
    w0 = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(5)]

    p = ad.Parameter(w0.copy())
    opt = neural.Adam([p], lr=3e-3)
    for g in grads:
        p.grad = g.copy()
        opt.step()

    m = np.zeros_like(w0)
    v = np.zeros_like(w0)
    ref = w0.copy()
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 3e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p.value, ref, atol=1e-15)


def test_serialization_bitwise_roundtrip(tmp_path):
    net = neural.make_mlp([3, 16, 8, 2], np.random.default_rng(9))
    path = tmp_path / "net.json"
    neural.save_network(net, path)
    loaded = neural.load_network(path)
    for a, b in zip(net.parameters(), loaded.parameters()):
        assert np.array_equal(a.value, b.value)
    x = np.random.default_rng(10).normal(size=(4, 3))
    assert np.array_equal(net.predict(x), loaded.predict(x))


def test_load_rejects_wrong_format():
    with pytest.raises(ValueError):
        neural.network_from_dict({"format": "something-else", "layers": []})
