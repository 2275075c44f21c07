import numpy as np
import pytest

from wtcsim.nn_core import (
    AdamState,
    DenseNet,
    LossStats,
    NetError,
    TrainConfig,
    backward,
    cce_loss,
    forward,
    init_dense,
    load_net,
    optimizer_step,
    save_net,
    softmax,
)


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Independent oracle: central differences on every parameter entry."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def test_forward_zero_net():
    net = DenseNet([(np.zeros((3, 2)), np.zeros(2), "linear")])
    out, _ = forward(net, np.ones((4, 3)))
    np.testing.assert_array_equal(out, np.zeros((4, 2)))


def test_forward_identity_layer():
    net = DenseNet([(np.eye(3), np.zeros(3), "linear")])
    x = np.random.default_rng(0).normal(size=(5, 3))
    out, _ = forward(net, x)
    np.testing.assert_array_equal(out, x)


def test_forward_deterministic():
    rng = np.random.default_rng(1)
    net = init_dense([4, 8, 2], ["gelu", "linear"], rng)
    x = np.random.default_rng(2).normal(size=(6, 4))
    out1, _ = forward(net, x)
    out2, _ = forward(net, x)
    np.testing.assert_array_equal(out1, out2)


def test_forward_width_mismatch():
    net = init_dense([4, 2], ["linear"], np.random.default_rng(0))
    with pytest.raises(NetError):
        forward(net, np.zeros((3, 5)))


def test_backward_bias_gradient_is_summed_upstream():
    net = DenseNet([(np.random.default_rng(0).normal(size=(3, 2)), np.zeros(2), "linear")])
    x = np.random.default_rng(1).normal(size=(7, 3))
    _, cache = forward(net, x)
    up = np.random.default_rng(2).normal(size=(7, 2))
    grads, _ = backward(net, up, cache)
    np.testing.assert_allclose(grads[1], up.sum(axis=0))


def test_backward_zero_upstream():
    net = init_dense([3, 4, 2], ["gelu", "linear"], np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(5, 3))
    _, cache = forward(net, x)
    grads, dx = backward(net, np.zeros((5, 2)), cache)
    for g in grads:
        np.testing.assert_array_equal(g, np.zeros_like(g))
    np.testing.assert_array_equal(dx, np.zeros_like(x))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    net = init_dense([4, 6, 5, 3], ["gelu", "gelu", "linear"], rng)
    x = rng.normal(size=(8, 4))
    up = rng.normal(size=(8, 3))

    def loss_fn():
        out, _ = forward(net, x)
        return float(np.sum(out * up))

    _, cache = forward(net, x)
    grads, dx = backward(net, up, cache)
    fd = finite_difference_grads(loss_fn, net.params())
    for g, f in zip(grads, fd):
        rel = np.max(np.abs(g - f) / np.maximum(np.abs(f), 1e-6))
        assert rel < 1e-4


def test_backward_input_gradient_finite_differences():
    rng = np.random.default_rng(6)
    net = init_dense([3, 5, 2], ["gelu", "linear"], rng)
    x = rng.normal(size=(2, 3))
    up = rng.normal(size=(2, 2))
    _, cache = forward(net, x)
    _, dx = backward(net, up, cache)
    fd = finite_difference_grads(
        lambda: float(np.sum(forward(net, x)[0] * up)), [x])
    rel = np.max(np.abs(dx - fd[0]) / np.maximum(np.abs(fd[0]), 1e-6))
    assert rel < 1e-4


def test_backward_stale_cache_raises():
    net1 = init_dense([3, 2], ["linear"], np.random.default_rng(0))
    net2 = init_dense([4, 6, 2], ["gelu", "linear"], np.random.default_rng(1))
    _, cache = forward(net1, np.zeros((2, 3)))
    with pytest.raises(NetError):
        backward(net2, np.zeros((2, 2)), cache)


def test_softmax_basics():
    p = softmax(np.zeros((2, 5)))
    np.testing.assert_allclose(p, 0.2)
    p = softmax(np.array([[0.0, 60.0]]))
    assert p[0, 1] > 1 - 1e-12
    x = np.random.default_rng(7).normal(size=(3, 4))
    np.testing.assert_allclose(softmax(x + 3.7), softmax(x), atol=1e-12)
    np.testing.assert_allclose(softmax(x).sum(axis=1), 1.0, atol=1e-12)


def test_cce_loss_values():
    probs = np.array([[1.0, 0.0, 0.0]])
    loss, _ = cce_loss(probs, np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-10)
    probs = np.full((1, 8), 1 / 8)
    loss, _ = cce_loss(probs, np.array([3]))
    assert loss == pytest.approx(np.log(8))
    probs = np.array([[0.5, 0.5], [0.25, 0.75]])
    loss, _ = cce_loss(probs, np.array([0, 0]))
    assert loss == pytest.approx((np.log(2) + np.log(4)) / 2, abs=1e-4)


def test_cce_loss_clamps_and_counts():
    stats = LossStats()
    probs = np.array([[1.0, 0.0]])
    loss, _ = cce_loss(probs, np.array([1]), stats)
    assert stats.clamped == 1
    assert np.isfinite(loss)


def test_cce_rejects_unnormalized_rows():
    with pytest.raises(NetError):
        cce_loss(np.array([[0.9, 0.3]]), np.array([0]))


def test_cce_gradient_is_softmax_gradient():
    rng = np.random.default_rng(8)
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 1])
    probs = softmax(logits)
    _, dlogits = cce_loss(probs, labels)

    def loss_at(lg):
        p = softmax(lg)
        return float(-np.mean(np.log(p[np.arange(4), labels])))

    fd = finite_difference_grads(lambda: loss_at(logits), [logits])
    np.testing.assert_allclose(dlogits, fd[0], atol=1e-8)


def test_optimizer_zero_gradient_no_change():
    params = [np.ones((2, 2))]
    state = AdamState()
    cfg = TrainConfig(batch_size=4, learning_rate=0.1)
    optimizer_step(params, [np.zeros((2, 2))], state, cfg)
    np.testing.assert_array_equal(params[0], np.ones((2, 2)))


def test_optimizer_first_step_magnitude():
    params = [np.zeros(3)]
    cfg = TrainConfig(batch_size=4, learning_rate=1e-3, clip_norm=0.0)
    optimizer_step(params, [np.full(3, 0.37)], AdamState(), cfg)
    np.testing.assert_allclose(np.abs(params[0]), cfg.learning_rate, rtol=1e-6)


def test_optimizer_skips_nonfinite():
    params = [np.ones(2)]
    state = AdamState()
    cfg = TrainConfig(batch_size=4)
    optimizer_step(params, [np.array([np.nan, 1.0])], state, cfg)
    assert state.skipped == 1
    np.testing.assert_array_equal(params[0], np.ones(2))


def test_optimizer_deterministic_trajectory():
    def run():
        rng = np.random.default_rng(9)
        params = [rng.normal(size=(3, 3))]
        state = AdamState()
        cfg = TrainConfig(batch_size=4, learning_rate=0.01)
        for _ in range(20):
            optimizer_step(params, [params[0] * 0.3 + 0.1], state, cfg)
        return params[0]

    np.testing.assert_array_equal(run(), run())


def test_xor_smoke_training():
    # Engine smoke test: 4-point XOR classification to loss < 1e-3.
    rng = np.random.default_rng(10)
    net = init_dense([2, 16, 16, 2], ["gelu", "gelu", "linear"], rng)
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    labels = np.array([0, 1, 1, 0])
    state = AdamState()
    cfg = TrainConfig(batch_size=4, learning_rate=3e-3, clip_norm=0.0)
    loss = np.inf
    for _ in range(5000):
        out, cache = forward(net, x)
        loss, dlogits = cce_loss(softmax(out), labels)
        if loss < 1e-3:
            break
        grads, _ = backward(net, dlogits, cache)
        optimizer_step(net.params(), grads, state, cfg)
    assert loss < 1e-3


def test_checkpoint_round_trip_bitwise(tmp_path):
    net = init_dense([5, 7, 3], ["gelu", "linear"], np.random.default_rng(11))
    path = tmp_path / "net.npz"
    save_net(path, net)
    loaded = load_net(path)
    assert [a for _, _, a in loaded.layers] == [a for _, _, a in net.layers]
    for (W1, b1, _), (W2, b2, _) in zip(net.layers, loaded.layers):
        assert W1.tobytes() == W2.tobytes()
        assert b1.tobytes() == b2.tobytes()
