import math

import numpy as np
import pytest

from wheelgen import neural as nn


def rel_error(analytic, numeric):
    return np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)


def check_network(net, x, seed=0):
    """Analytic vs central-difference gradients of a random linear functional of the output."""
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=net.forward(x).shape)

    def loss():
        return float(np.sum(net.forward(x) * weights))

    net.zero_grad()
    net.forward(x)
    dx = net.backward(weights)
    errors = [rel_error(dx, nn.numerical_gradient(loss, x))]
    for p in net.params():
        errors.append(rel_error(p.grad, nn.numerical_gradient(loss, p.values)))
    return max(errors)


def naive_conv(x, k, b):
    h, w, c = x.shape
    out = np.zeros((h, w, k.shape[3]))
    for i in range(h):
        for j in range(w):
            for o in range(k.shape[3]):
                s = b[o]
                for di in range(3):
                    for dj in range(3):
                        for ci in range(c):
                            ii, jj = i + di - 1, j + dj - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                s += x[ii, jj, ci] * k[di, dj, ci, o]
                out[i, j, o] = s
    return out


def test_elu_values():
    assert nn.elu(np.array(0.0)) == 0.0
    assert nn.elu(np.array(1.0)) == 1.0
    assert nn.elu(np.array(-1.0)) == pytest.approx(math.exp(-1) - 1, abs=1e-15)
    assert nn.elu(np.array(-1.0)) == pytest.approx(-0.63212, abs=1e-5)


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(5, 6, 1))
    k = np.zeros((3, 3, 1, 1))
    k[1, 1, 0, 0] = 1.0
    np.testing.assert_array_equal(nn.conv3x3_forward(x, k), x)


def test_conv_impulse_gives_plateau():
    x = np.zeros((7, 7, 1))
    x[3, 3, 0] = 1.0
    out = nn.conv3x3_forward(x, np.ones((3, 3, 1, 1)))[..., 0]
    expected = np.zeros((7, 7))
    expected[2:5, 2:5] = 1.0
    np.testing.assert_array_equal(out, expected)


def test_conv_matches_naive_loops():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 5, 2))
    k = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    np.testing.assert_allclose(nn.conv3x3_forward(x, k, b), naive_conv(x, k, b), atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        nn.conv3x3_forward(np.zeros((4, 4, 2)), np.zeros((3, 3, 1, 1)))


@pytest.mark.parametrize("spec,shape", [
    ([{"type": "conv3x3", "in": 2, "out": 3}], (2, 4, 4, 2)),
    ([{"type": "subsample"}], (2, 4, 6, 2)),
    ([{"type": "upsample"}], (2, 3, 2, 2)),
    ([{"type": "dense", "in": 5, "out": 3}], (4, 5)),
    ([{"type": "elu"}], (3, 7)),
    ([{"type": "flatten"}], (2, 2, 3, 2)),
    ([{"type": "reshape", "h": 2, "w": 2, "c": 3}], (2, 12)),
])
def test_each_layer_passes_gradient_check(spec, shape):
    rng = np.random.default_rng(2)
    net = nn.build_network(spec, rng)
    assert check_network(net, rng.normal(size=shape)) < 1e-4


def test_composite_network_passes_gradient_check():
    rng = np.random.default_rng(3)
    spec = nn.encoder_spec(16, 4, base=3) + nn.decoder_spec(16, 4, base=3)
    net = nn.build_network(spec, rng)
    assert check_network(net, rng.uniform(size=(2, 16, 16, 1))) < 1e-4


def test_conv_plus_dense_net_passes_gradient_check():
    rng = np.random.default_rng(4)
    net = nn.build_network([{"type": "conv3x3", "in": 1, "out": 2}, {"type": "elu"},
                            {"type": "flatten"}, {"type": "dense", "in": 32, "out": 3}], rng)
    assert check_network(net, rng.normal(size=(2, 4, 4, 1))) < 1e-4


def test_identity_layers_pass_ones_through():
    net = nn.build_network([{"type": "flatten"}, {"type": "reshape", "h": 2, "w": 3, "c": 1}])
    x = np.random.default_rng(0).normal(size=(2, 2, 3, 1))
    net.forward(x)
    np.testing.assert_array_equal(net.backward(np.ones_like(x)), np.ones_like(x))


def test_dense_quadratic_loss_closed_form():
    rng = np.random.default_rng(5)
    net = nn.build_network([{"type": "dense", "in": 4, "out": 3}], rng)
    layer = net.layers[0]
    x, target = rng.normal(size=(2, 4)), rng.normal(size=(2, 3))
    y = net.forward(x)
    residual = y - target  # loss = 0.5 * |y - target|^2
    net.zero_grad()
    dx = net.backward(residual)
    params = layer.params()
    weight = next(p for p in params if p.values.ndim == 2)
    bias = next(p for p in params if p.values.ndim == 1)
    w = weight.values
    if w.shape == (4, 3):
        np.testing.assert_allclose(weight.grad, x.T @ residual, atol=1e-12)
        np.testing.assert_allclose(dx, residual @ w.T, atol=1e-12)
    else:
        np.testing.assert_allclose(weight.grad, residual.T @ x, atol=1e-12)
        np.testing.assert_allclose(dx, residual @ w, atol=1e-12)
    np.testing.assert_allclose(bias.grad, residual.sum(axis=0), atol=1e-12)


def test_backward_does_not_modify_input():
    rng = np.random.default_rng(6)
    net = nn.build_network(nn.encoder_spec(8, 3, base=2), rng)
    x = rng.normal(size=(2, 8, 8, 1))
    keep = x.copy()
    net.backward(np.ones_like(net.forward(x)))
    np.testing.assert_array_equal(x, keep)


@pytest.mark.parametrize("spec", [[{"type": "conv3x3", "in": 1, "out": 1}], [{"type": "subsample"}],
                                  [{"type": "upsample"}], [{"type": "dense", "in": 2, "out": 2}],
                                  [{"type": "elu"}], [{"type": "flatten"}]])
def test_backward_before_forward_raises(spec):
    net = nn.build_network(spec)
    with pytest.raises(RuntimeError):
        net.backward(np.ones((1, 2, 2, 1)))


@pytest.mark.parametrize("side,stages", [(8, 0), (16, 1), (32, 2), (128, 4)])
def test_encoder_shape_algebra(side, stages):
    assert nn.subsample_stages(side) == stages
    net = nn.build_network(nn.autoencoder_spec(side, 5, base=2))
    enc = nn.build_network(nn.encoder_spec(side, 5, base=2))
    x = np.zeros((1, side, side, 1))
    assert enc.forward(x).shape == (1, 5)
    assert net.forward(x).shape == x.shape


@pytest.mark.parametrize("side", [12, 24, 4])
def test_incompatible_sides_rejected(side):
    with pytest.raises(ValueError):
        nn.subsample_stages(side)


def test_initialization_is_seeded_and_bounded():
    a = nn.build_network(nn.encoder_spec(16, 4), np.random.default_rng(7))
    b = nn.build_network(nn.encoder_spec(16, 4), np.random.default_rng(7))
    for p, q in zip(a.params(), b.params()):
        assert np.array_equal(p.values, q.values)
    w = nn.glorot_uniform(np.random.default_rng(0), (1000,), 10, 20)
    assert np.abs(w).max() <= math.sqrt(6 / 30)


def test_adam_zero_gradient_keeps_parameters():
    p = nn.Tensor(np.array([1.0, -2.0]))
    nn.adam_step([p], nn.AdamState())
    np.testing.assert_array_equal(p.values, [1.0, -2.0])


def test_adam_single_step_hand_value():
    p = nn.Tensor(np.array([0.5]))
    p.grad[...] = 1.0
    st = nn.AdamState(lr=1e-3)
    nn.adam_step([p], st)
    # m_hat = 1, v_hat = 1, step = lr / (1 + eps)
    assert p.values[0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)
    assert st.step == 1


def test_adam_constant_gradient_moves_by_lr_per_step():
    p = nn.Tensor(np.array([0.0, 0.0]))
    st = nn.AdamState(lr=1e-2)
    g = np.array([3.0, -0.5])
    for _ in range(200):
        before = p.values.copy()
        nn.adam_step([p], st, [g])
    np.testing.assert_allclose(p.values - before, -np.sign(g) * 1e-2, rtol=1e-6)


def test_adam_rejects_nonfinite_gradient_with_name():
    p = nn.Tensor(np.zeros(2), name="decoder.3.weight")
    p.grad[0] = np.nan
    with pytest.raises(FloatingPointError, match="decoder.3.weight"):
        nn.adam_step([p], nn.AdamState())


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    g = nn.build_network(nn.decoder_spec(16, 4, base=2), rng)
    d = nn.build_network(nn.autoencoder_spec(16, 4, base=2), rng)
    path = tmp_path / "m.ckpt"
    nn.save_checkpoint(path, {"generator": g, "discriminator": d}, {"k": 0.25})
    nets, meta = nn.load_checkpoint(path)
    assert meta == {"k": 0.25}
    assert nets["generator"].spec == g.spec
    for src, dst in ((g, nets["generator"]), (d, nets["discriminator"])):
        for p, q in zip(src.params(), dst.params()):
            assert np.array_equal(p.values, q.values)
    assert path.read_bytes().startswith(nn.CHECKPOINT_MAGIC)


@pytest.mark.parametrize("damage", ["magic", "truncate", "append", "version"])
def test_corrupted_checkpoint_rejected(tmp_path, damage):
    path = tmp_path / "m.ckpt"
    nn.save_checkpoint(path, {"net": nn.build_network(nn.encoder_spec(8, 2, base=2))})
    data = bytearray(path.read_bytes())
    if damage == "magic":
        data[0:1] = b"X"
    elif damage == "truncate":
        data = data[:-5]
    elif damage == "append":
        data += b"\x00"
    else:
        data[8] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError):
        nn.load_checkpoint(path)
