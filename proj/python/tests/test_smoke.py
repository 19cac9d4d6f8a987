# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import channeldropback as cdb


def naive_conv(x, w, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w)
    return out


def test_kernels_match_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(cdb.matmul(a, b), a @ b, rtol=1e-13)

    x, w = rng.normal(size=(2, 3, 6, 5)), rng.normal(size=(4, 3, 3, 3))
    np.testing.assert_allclose(cdb.conv2d(x, w, 2, 1), naive_conv(x, w, 2, 1), rtol=1e-12, atol=1e-12)

    np.testing.assert_array_equal(cdb.relu(np.array([-1.0, 0.0, 2.5])), [0.0, 0.0, 2.5])

    logits = rng.normal(size=(3, 4))
    labels = [0, 3, 1]
    loss, grad = cdb.softmax_cross_entropy(logits, labels)
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    assert loss == pytest.approx(-np.mean(np.log(p[np.arange(3), labels])), rel=1e-12)
    onehot = np.eye(4)[labels]
    np.testing.assert_allclose(grad, (p - onehot) / 3, atol=1e-14)


def test_conv_grads_are_adjoint():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    g = rng.normal(size=cdb.conv2d(x, w, 1, 1).shape)
    gx, gw = cdb.conv2d_grads(x, w, g, 1, 1)
    dx = rng.normal(size=x.shape)
    assert np.sum(gx * dx) == pytest.approx(np.sum(g * cdb.conv2d(dx, w, 1, 1)), rel=1e-10)
    dw = rng.normal(size=w.shape)
    assert np.sum(gw * dw) == pytest.approx(np.sum(g * cdb.conv2d(x, dw, 1, 1)), rel=1e-10)


def test_schedule_values():
    cfg = cdb.TrainConfig()
    cfg.epochs = 200
    assert cdb.milestone_epochs(cfg) == [60, 120, 160]
    assert cdb.lr_at_epoch(cfg, 0) == pytest.approx(0.01)
    assert cdb.lr_at_epoch(cfg, 160) == pytest.approx(1e-5)
    assert cdb.layer_drop_rate_at_epoch(cfg, 59) == 0.0
    assert cdb.layer_drop_rate_at_epoch(cfg, 60) == pytest.approx(0.01)
    assert cdb.layer_drop_rate_at_epoch(cfg, 199) == pytest.approx(0.3)


def test_drop_decision_respects_skip():
    net = cdb.Network.architecture("mlp", [8], 3)
    policy = cdb.DropPolicy()
    policy.layer_drop_rate = 1.0
    droppable = net.droppable_layers()
    seen = set()
    for seed in range(200):
        layer, mask = cdb.make_drop_decision(net, policy, seed)
        seen.add(layer)
        assert len(mask) == net.channel_count(layer)
        assert mask.count(False) == cdb.drop_count(len(mask), policy.channel_drop_rate)
    assert seen == set(droppable[4:])
    assert cdb.select_channels(10, policy, 7).count(False) == 5


def test_training_and_checkpoint_round_trip(tmp_path):
    train, test = cdb.load_dataset("blobs:60,3,8,0.5", "", 3)
    cfg = cdb.TrainConfig()
    cfg.epochs = 8
    cfg.seed = 3
    net = cdb.Network.architecture("mlp", train.sample_shape, train.num_classes)
    net.initialize(3)
    before = net.forward(test.inputs)
    metrics = cdb.run_training(cfg, cdb.DropPolicy(), net, train, test)
    assert [m["epoch"] for m in metrics] == list(range(8))
    assert metrics[-1]["test_accuracy"] >= 0.95
    assert not np.array_equal(before, net.forward(test.inputs))

    path = tmp_path / "model.cdbk"
    cdb.save_checkpoint(net, path)
    back = cdb.load_checkpoint(path)
    assert back.digest() == net.digest()
    np.testing.assert_array_equal(back.forward(test.inputs), net.forward(test.inputs))
    assert cdb.evaluate(back, test)[1] == metrics[-1]["test_accuracy"]
    assert cdb.decode_checkpoint(cdb.encode_checkpoint(net)).describe() == net.describe()


def test_degenerate_rate_matches_baseline():
    train, test = cdb.load_dataset("blobs:30,3,8,0.5", "", 5)
    cfg = cdb.TrainConfig()
    cfg.epochs = 4
    init = cdb.Network.architecture("mlp", train.sample_shape, 3)
    init.initialize(5)
    a, b = init.copy(), init.copy()
    cdb.run_training(cfg, cdb.DropPolicy(), a, train, test, schedule=cdb.DropSchedule.off)
    cdb.run_training(cfg, cdb.DropPolicy(), b, train, test, layer_drop_rate=0.0)
    assert a.digest() == b.digest()


def test_compare_shares_initial_weights():
    train, test = cdb.load_dataset("blobs:20,3,8,0.5", "", 1)
    cfg = cdb.TrainConfig()
    cfg.epochs = 2
    init = cdb.Network.architecture("mlp", train.sample_shape, 3)
    init.initialize(1)
    rows = cdb.compare(cfg, cdb.DropPolicy(), init, ["baseline", "dropback_adaptive", "dropout"], train, test)
    assert [r["variant"] for r in rows] == ["baseline", "dropback_adaptive", "dropout"]
    assert len({r["init_digest"] for r in rows}) == 1
    sweep = cdb.sweep(cfg, cdb.DropPolicy(), init, [0.0, 1.0], train, test)
    assert [r for r, _ in sweep] == [0.0, 1.0]


def test_gradcheck_and_errors():
    report = cdb.gradcheck(trials=4)
    assert report["passed"] and report["max_rel_error"] <= 1e-5
    with pytest.raises(cdb.ConfigError):
        cdb.gradcheck(epsilon=0.0)
    with pytest.raises(cdb.DimensionError):
        cdb.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(cdb.Error):
        cdb.Network("dense:2")
    ds = cdb.Dataset(np.zeros((4, 2)), [0, 1, 2, 1])
    assert ds.num_classes == 3 and len(ds) == 4
    loss, acc = cdb.evaluate(cdb.Network("dense:2,3"), ds)
    assert loss == pytest.approx(math.log(3)) and acc == 0.25
