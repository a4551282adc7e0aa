import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lulc.dataset import normalize
from lulc.network import (Checkpoint, Network, NetworkSpec, build_network, conv, fc, from_checkpoint, pool,
                          replace_head, toy_cnn_spec)
from lulc.synthetic import DOMAIN_B, texture_set
from lulc.trainer import (DivergenceError, TrainConfig, TrainingLog, batch_order, gradient_check, predict,
                          relative_error, sgd_step, train)


def toy_data(seed=0, per_class=20, size=8):
    x, y = texture_set(DOMAIN_B, per_class, size, seed)
    return normalize(x, [0.5, 0.5, 0.5]), y


def small_net(seed=0, classes=3):
    return build_network(toy_cnn_spec((3, 8, 8), classes, width=4, hidden=16), seed)


def snapshot(net):
    return {k: v.tobytes() for k, v in net.blobs().items()}


# -- config -----------------------------------------------------------------

def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.base_lr, cfg.momentum, cfg.weight_decay, cfg.iterations) == (0.001, 0.9, 5e-4, 25000)
    assert (cfg.lr_policy, cfg.gamma, cfg.step_size) == ("step", 0.1, 10000)


@pytest.mark.parametrize("kwargs", [dict(base_lr=0), dict(momentum=1.0), dict(momentum=-0.1),
                                    dict(weight_decay=-1), dict(batch_size=0), dict(lr_policy="cosine")])
def test_config_rejects_out_of_range(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_step_policy_schedule():
    cfg = TrainConfig(base_lr=1.0, gamma=0.5, step_size=3)
    assert [cfg.learning_rate(i) for i in range(7)] == [1, 1, 1, 0.5, 0.5, 0.5, 0.25]


# -- sgd_step ---------------------------------------------------------------

def test_sgd_zero_mult_is_bitwise_identity(rng):
    w, g, v = rng.normal(size=5), rng.normal(size=5), rng.normal(size=5)
    w2, v2 = sgd_step(w, g, v, TrainConfig(), 0)
    assert w2.tobytes() == w.tobytes() and v2.tobytes() == v.tobytes()


def test_sgd_hand_arithmetic():
    cfg = TrainConfig(base_lr=0.1, momentum=0, weight_decay=0, lr_policy="fixed")
    w, _ = sgd_step(np.array([1.0]), np.array([0.5]), np.zeros(1), cfg, 1)
    assert w[0] == pytest.approx(0.95, abs=1e-15)


def test_sgd_two_momentum_steps_match_unrolled():
    cfg = TrainConfig(base_lr=0.1, momentum=0.9, weight_decay=0.01, lr_policy="fixed")
    w0, g1, g2 = 2.0, 0.3, -0.7
    v1 = -0.1 * (g1 + 0.01 * w0)
    w1 = w0 + v1
    v2 = 0.9 * v1 - 0.1 * (g2 + 0.01 * w1)
    w2 = w1 + v2
    w, v = sgd_step(np.array([w0]), np.array([g1]), np.zeros(1), cfg, 1)
    w, v = sgd_step(w, np.array([g2]), v, cfg, 1)
    assert abs(w[0] - w2) < 1e-7 and abs(v[0] - v2) < 1e-7


def test_sgd_non_finite_gradient_reports_iteration():
    with pytest.raises(DivergenceError) as info:
        sgd_step(np.ones(2), np.array([1.0, np.nan]), np.zeros(2), TrainConfig(), 1, iteration=17)
    assert info.value.iteration == 17


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step(np.ones(2), np.ones(3), np.zeros(2), TrainConfig(), 1)


@given(st.floats(1e-4, 0.5), st.integers(0, 2**31))
def test_weight_decay_with_zero_gradient_shrinks_norm(decay, seed):
    w = np.random.default_rng(seed).normal(size=6) + 0.1
    cfg = TrainConfig(base_lr=0.1, momentum=0.9, weight_decay=decay, lr_policy="fixed")
    v = np.zeros_like(w)
    norm = np.linalg.norm(w)
    for _ in range(5):
        w, v = sgd_step(w, np.zeros_like(w), v, cfg, 1)
        assert np.linalg.norm(w) < norm
        norm = np.linalg.norm(w)


def test_plain_gd_on_quadratic_matches_closed_form():
    # f(w) = a/2 (w - c)^2; gradient descent gives w_t = c + (1 - lr a)^t (w0 - c)
    a, c, lr, w0 = 3.0, 1.5, 0.1, -2.0
    cfg = TrainConfig(base_lr=lr, momentum=0, weight_decay=0, lr_policy="fixed")
    w, v = np.array([w0]), np.zeros(1)
    for t in range(1, 21):
        w, v = sgd_step(w, a * (w - c), v, cfg, 1)
        assert w[0] == pytest.approx(c + (1 - lr * a) ** t * (w0 - c), rel=1e-12, abs=1e-12)


# -- batch order and log ----------------------------------------------------

def test_batch_order_covers_each_epoch():
    batches = list(batch_order(10, 5, 4, seed=3))
    assert sorted(np.concatenate(batches[:2])) == list(range(10))
    assert sorted(np.concatenate(batches[2:])) == list(range(10))
    again = list(batch_order(10, 5, 4, seed=3))
    assert all((a == b).all() for a, b in zip(batches, again))


def test_log_csv_header():
    log = TrainingLog([(10, 0.5, 0.25)])
    assert log.to_csv() == "iteration,loss,train_accuracy\n10,0.5,0.25\n"


# -- train ------------------------------------------------------------------

def test_zero_iterations_leaves_checkpoint_identical():
    net = small_net()
    before = net.to_checkpoint()
    after, log = train(net, toy_data(), TrainConfig(iterations=0))
    assert log.rows == []
    assert all(after.blobs[k].tobytes() == before.blobs[k].tobytes() for k in before.blobs)


def test_frozen_body_is_bitwise_unchanged():
    ckpt = replace_head(small_net(1).to_checkpoint(), 3, head_lr_mult=10, body_lr_mult=0, init_seed=4)
    net = from_checkpoint(ckpt)
    before = snapshot(net)
    train(net, toy_data(1), TrainConfig(base_lr=0.01, iterations=100, batch_size=8, log_interval=50))
    after = snapshot(net)
    for k in before:
        if k.startswith("fc8"):
            assert after[k] != before[k]
        else:
            assert after[k] == before[k], k


def test_training_is_reproducible():
    data = toy_data(2)
    cfg = TrainConfig(base_lr=0.01, iterations=30, batch_size=8, seed=9, log_interval=10)
    a, log_a = train(small_net(3), data, cfg)
    b, log_b = train(small_net(3), data, cfg)
    assert all(a.blobs[k].tobytes() == b.blobs[k].tobytes() for k in a.blobs)
    assert log_a.to_csv() == log_b.to_csv()
    assert a.meta["iteration"] == 30


def test_training_loss_decreases_for_most_seeds():
    decreasing = 0
    for seed in range(10):
        net = build_network(toy_cnn_spec((3, 8, 8), 3), seed)
        cfg = TrainConfig(base_lr=0.01, iterations=100, batch_size=16, lr_policy="fixed", log_interval=10,
                          seed=seed)
        _, log = train(net, toy_data(seed), cfg)
        losses = log.losses
        assert len(losses) == 10
        decreasing += all(b < a for a, b in zip(losses, losses[1:]))
    assert decreasing >= 8


def test_labels_out_of_range_rejected():
    x, y = toy_data()
    with pytest.raises(ValueError):
        train(small_net(classes=2), (x, y), TrainConfig(iterations=1))


def test_divergence_aborts_with_last_good_iteration():
    x, y = toy_data()
    net = small_net()
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        train(net, (x * 1e30, y), TrainConfig(base_lr=1e10, momentum=0, iterations=50, batch_size=8))
    assert 0 <= info.value.iteration < 50


def test_predict_is_argmax_of_forward(rng):
    net = small_net()
    x = rng.normal(size=(5, 3, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(predict(net, x, batch_size=2), net.forward(x).argmax(axis=1))


# -- gradient check ---------------------------------------------------------

def test_relative_error_floor():
    assert relative_error(0.0, 1e-9) == pytest.approx(1e-3)
    assert relative_error(2.0, 1.0) == 0.5


def test_gradient_check_linear_fc_net(rng):
    spec = NetworkSpec([fc("f", 3)], (4, 1, 1), 3)
    net = from_checkpoint(Checkpoint(spec, {"f.weights": rng.normal(size=(3, 4)), "f.bias": rng.normal(size=3)}))
    report = gradient_check(net, (rng.normal(size=(6, 4, 1, 1)), np.array([0, 1, 2, 0, 1, 2])),
                            epsilon=1e-5, tolerance=1e-8)
    assert report.ok, report.max_rel_error


def test_gradient_check_conv_pool_fc(rng):
    spec = NetworkSpec([conv("c", 3, 3, pad=1, activation="relu"), pool("p", 2, 2), fc("f", 3)], (2, 6, 6), 3)
    net = build_network(spec, 5, np.float64)
    for p in net.params.values():
        p.bias[:] = rng.normal(size=p.bias.shape)
    report = gradient_check(net, (rng.normal(size=(4, 2, 6, 6)), np.array([0, 1, 2, 1])), epsilon=1e-5)
    assert report.ok, report.max_rel_error
    assert min(report.checked.values()) == 3 and report.checked["c.weights"] == 50


def test_gradient_check_catches_sign_flip(rng):
    spec = NetworkSpec([fc("h", 4, activation="sigmoid"), fc("f", 3)], (3, 1, 1), 3)
    net = build_network(spec, 0, np.float64)

    def flipped(n, g):
        grads = Network.backward(n, g)
        grads["h.weights"] = -grads["h.weights"]
        return grads

    report = gradient_check(net, (rng.normal(size=(4, 3, 1, 1)), np.array([0, 1, 2, 0])), epsilon=1e-5,
                            backward=flipped)
    assert report.failed == ["h.weights"]


def test_gradient_check_leaves_network_untouched(rng):
    net = small_net()
    before = snapshot(net)
    gradient_check(net, (rng.normal(size=(2, 3, 8, 8)), np.array([0, 1])), samples_per_blob=3)
    assert snapshot(net) == before
    assert net.dtype == np.float32
