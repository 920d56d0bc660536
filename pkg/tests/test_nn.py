import numpy as np
import pytest
from scipy.signal import correlate

from pilotfatigue.nn import (Adam, AvgPool, BatchNorm, Conv2D, ELU, LastStep, LayerSpec, Linear,
                             LSTM, MaxPool, Network, NumericalError, SGDMomentum, ShapeError,
                             Softmax, ToSequence, TrainConfig, load_checkpoint, make_optimizer,
                             save_checkpoint, softmax, softmax_xent)
from pilotfatigue.nn.checkpoint import CheckpointError
from pilotfatigue.nn.gradcheck import check_layer, numeric_grad, rel_error

TOL = 1e-4
SEEDS = (0, 1, 2)


def built(layer, in_shape, seed):
    layer.build(in_shape, np.random.default_rng(seed), np.float64)
    return layer


def away_from_kinks(shape, rng, gap=1e-2):
    """Distinct values no closer than ``gap`` to each other or to zero."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.5) * gap * 2
    return vals.reshape(shape)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("kernel", [(1, 3), (3, 1), (2, 2)])
def test_gradcheck_conv2d(seed, kernel):
    rng = np.random.default_rng(seed)
    layer = built(Conv2D(3, kernel), (2, 4, 6), seed)
    layer.params["b"] = rng.standard_normal(3)
    errs = check_layer(layer, rng.standard_normal((2, 2, 4, 6)), seed)
    assert max(errs.values()) < TOL, errs


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("shape", [(4, 3, 2, 5), (6, 4)])
def test_gradcheck_batchnorm(seed, shape):
    rng = np.random.default_rng(seed)
    layer = built(BatchNorm(), shape[1:], seed)
    layer.params["gamma"] = rng.uniform(0.5, 1.5, shape[1])
    layer.params["beta"] = rng.standard_normal(shape[1])
    errs = check_layer(layer, rng.standard_normal(shape), seed)
    assert max(errs.values()) < TOL, errs


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_elu(seed):
    rng = np.random.default_rng(seed)
    errs = check_layer(ELU(), away_from_kinks((3, 4, 5), rng), seed)
    assert errs["input"] < TOL
    errs = check_layer(ELU(alpha=0.7), away_from_kinks((3, 4, 5), rng), seed)
    assert errs["input"] < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("size", [(1, 2), (2, 2)])
def test_gradcheck_maxpool(seed, size):
    rng = np.random.default_rng(seed)
    layer = built(MaxPool(size), (2, 4, 7), seed)
    errs = check_layer(layer, away_from_kinks((2, 2, 4, 7), rng), seed)
    assert errs["input"] < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("size", [(1, 2), (2, 3)])
def test_gradcheck_avgpool(seed, size):
    rng = np.random.default_rng(seed)
    layer = built(AvgPool(size), (2, 4, 7), seed)
    errs = check_layer(layer, rng.standard_normal((2, 2, 4, 7)), seed)
    assert errs["input"] < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_lstm(seed):
    rng = np.random.default_rng(seed)
    layer = built(LSTM(4), (5, 3), seed)
    layer.params["b"] = rng.standard_normal(16) * 0.5
    errs = check_layer(layer, rng.standard_normal((5, 2, 3)), seed)
    assert max(errs.values()) < TOL, errs


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_linear(seed):
    rng = np.random.default_rng(seed)
    layer = built(Linear(3), (5,), seed)
    layer.params["b"] = rng.standard_normal(3)
    errs = check_layer(layer, rng.standard_normal((4, 5)), seed)
    assert max(errs.values()) < TOL, errs


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_sequence_and_last_step(seed):
    rng = np.random.default_rng(seed)
    assert check_layer(ToSequence(), rng.standard_normal((2, 3, 2, 4)), seed)["input"] < TOL
    assert check_layer(LastStep(), rng.standard_normal((4, 2, 3)), seed)["input"] < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_softmax_xent(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((5, 3)) * 2
    labels = rng.integers(0, 3, 5)
    _, _, d = softmax_xent(logits, labels)
    num = numeric_grad(lambda: softmax_xent(logits, labels)[0], logits)
    assert rel_error(d, num) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_softmax_layer(seed):
    rng = np.random.default_rng(seed)
    assert check_layer(Softmax(), rng.standard_normal((4, 3)), seed)["input"] < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_whole_network(seed):
    specs = [LayerSpec("conv2d", {"filters": 3, "kernel": (1, 3)}), LayerSpec("batchnorm"),
             LayerSpec("elu"), LayerSpec("avgpool", {"size": (1, 2)}),
             LayerSpec("conv2d", {"filters": 2, "kernel": (2, 1)}), LayerSpec("sequence"),
             LayerSpec("lstm", {"units": 4}), LayerSpec("last_step"),
             LayerSpec("linear", {"units": 3}), LayerSpec("softmax")]
    net = Network(specs, (1, 3, 10), seed=seed, dtype=np.float64)
    net.layers[0].needs_input_grad = True
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 1, 3, 10))
    y = np.array([0, 1, 2, 1])

    def loss():
        return softmax_xent(net.logits(x, train=True), y)[0]

    _, _, d = softmax_xent(net.logits(x, train=True), y)
    dx = net.backward(d)
    grads = [g.copy() for g in net.gradients()]
    # the conv bias feeding batch norm has an exactly zero gradient; the floor
    # keeps finite-difference round-off (~1e-11) from dominating the ratio
    for (name, p), g in zip(net.parameters(), grads):
        assert rel_error(g, numeric_grad(loss, p), floor=1e-6) < TOL, name
    assert rel_error(dx, numeric_grad(loss, x)) < TOL


# ---------------------------------------------------------------- forward oracles

def test_conv_forward_matches_scipy_correlate():
    rng = np.random.default_rng(0)
    layer = built(Conv2D(2, (2, 3)), (3, 4, 6), 0)
    layer.params["b"] = np.array([0.5, -1.0])
    x = rng.standard_normal((2, 3, 4, 6))
    out = layer.forward(x)
    W = layer.params["W"]
    for n in range(2):
        for f in range(2):
            ref = sum(correlate(x[n, c], W[f, c], mode="valid") for c in range(3))
            np.testing.assert_allclose(out[n, f], ref + layer.params["b"][f], atol=1e-12)


def test_lstm_forward_matches_step_by_step_reference():
    rng = np.random.default_rng(1)
    layer = built(LSTM(3), (4, 2), 1)
    x = rng.standard_normal((4, 2, 2))
    out = layer.forward(x)
    W, U, b = layer.params["W"], layer.params["U"], layer.params["b"]
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    for n in range(2):
        h = np.zeros(3)
        c = np.zeros(3)
        for t in range(4):
            z = x[t, n] @ W + h @ U + b
            i, f, g, o = sig(z[:3]), sig(z[3:6]), np.tanh(z[6:9]), sig(z[9:])
            c = f * c + i * g
            h = o * np.tanh(c)
            np.testing.assert_allclose(out[t, n], h, atol=1e-12)


def test_batchnorm_train_and_eval_modes():
    rng = np.random.default_rng(2)
    layer = built(BatchNorm(momentum=0.5), (3, 2, 2), 0)
    x = rng.normal(3.0, 2.0, size=(8, 3, 2, 2))
    y = layer.forward(x, train=True)
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-3)
    rm = layer.buffers["running_mean"]
    np.testing.assert_allclose(rm, 0.5 * x.mean(axis=(0, 2, 3)))
    y_eval = layer.forward(x, train=False)
    assert not np.allclose(y_eval, y)


def test_pooling_forward_values():
    x = np.arange(16.0).reshape(1, 1, 2, 8)
    x[0, 0, 0, 1] = 100
    mp = MaxPool((1, 2)).forward(x)
    np.testing.assert_array_equal(mp[0, 0, 0], [100, 3, 5, 7])
    ap = AvgPool((2, 2)).forward(x)
    assert ap.shape == (1, 1, 1, 4)
    assert ap[0, 0, 0, 1] == pytest.approx((2 + 3 + 10 + 11) / 4)
    # odd width: trailing column dropped, its gradient is zero
    x5 = np.arange(5.0).reshape(1, 1, 1, 5)
    layer = MaxPool((1, 2))
    assert layer.forward(x5).shape == (1, 1, 1, 2)
    assert layer.backward(np.ones((1, 1, 1, 2)))[0, 0, 0, 4] == 0


def test_maxpool_ties_route_to_first_index():
    layer = MaxPool((1, 2))
    layer.forward(np.array([[[[1.0, 1.0]]]]))
    np.testing.assert_array_equal(layer.backward(np.array([[[[1.0]]]])), [[[[1.0, 0.0]]]])


def test_softmax_is_stable():
    p = softmax(np.array([[1000.0, 0.0, -1000.0]]))
    np.testing.assert_allclose(p, [[1.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        softmax_xent(np.zeros((2, 3)), [0, 3])
    loss, probs, _ = softmax_xent(np.zeros((2, 3)), np.eye(3)[[0, 1]])
    assert loss == pytest.approx(np.log(3))


# ---------------------------------------------------------------- network plumbing

def small_net(dtype=np.float32, seed=0):
    specs = [LayerSpec("conv2d", {"filters": 2, "kernel": (1, 3)}), LayerSpec("batchnorm"),
             LayerSpec("elu"), LayerSpec("maxpool", {"size": (1, 2)}), LayerSpec("sequence"),
             LayerSpec("lstm", {"units": 5}), LayerSpec("last_step"),
             LayerSpec("linear", {"units": 3}), LayerSpec("softmax")]
    return Network(specs, (1, 4, 9), seed=seed, dtype=dtype)


def test_network_shapes_and_errors():
    net = small_net()
    assert net.output_shape == (3,)
    out = net.forward(np.zeros((2, 1, 4, 9), dtype=np.float32))
    np.testing.assert_allclose(out.sum(axis=1), 1, rtol=1e-6)
    with pytest.raises(ShapeError, match="layer trace"):
        net.forward(np.zeros((2, 1, 4, 8)))
    with pytest.raises(ShapeError):
        Network([LayerSpec("conv2d", {"filters": 2, "kernel": (5, 1)})], (1, 4, 9))


def test_network_detects_non_finite():
    net = small_net(np.float64)
    x = np.zeros((2, 1, 4, 9))
    x[0, 0, 0, 0] = np.inf
    with pytest.raises(NumericalError), np.errstate(invalid="ignore"):
        net.forward(x)


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec("dropout")
    with pytest.raises(ValueError):
        LayerSpec("conv2d", {"filters": 0, "kernel": (1, 5)})
    s = LayerSpec("conv2d", {"filters": 4, "kernel": (1, 5)})
    assert LayerSpec.from_dict(s.to_dict()) == s


def test_same_seed_same_weights():
    a, b, c = small_net(seed=3), small_net(seed=3), small_net(seed=4)
    for (_, pa), (_, pb), (_, pc) in zip(a.parameters(), b.parameters(), c.parameters()):
        np.testing.assert_array_equal(pa, pb)
    assert any(not np.array_equal(pa, pc) for (_, pa), (_, pc) in zip(a.parameters(), c.parameters()))


def test_checkpoint_roundtrip(tmp_path):
    net = small_net()
    x = np.random.default_rng(0).standard_normal((3, 1, 4, 9)).astype(np.float32)
    net.forward(x, train=True)            # move the batch-norm running stats
    path = tmp_path / "m.fatn"
    save_checkpoint(net, path, {"epochs": 1}, {"train_acc": [0.5]}, extra={"k": 1})
    net2, extra = load_checkpoint(path)
    assert extra == {"k": 1}
    np.testing.assert_array_equal(net.forward(x), net2.forward(x))
    assert (tmp_path / "m.fatn.json").exists()


def test_checkpoint_rejects_corruption(tmp_path):
    net = small_net()
    path = tmp_path / "m.fatn"
    save_checkpoint(net, path)
    raw = path.read_bytes()
    (tmp_path / "bad.fatn").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.fatn")
    (tmp_path / "trail.fatn").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trail.fatn")


def test_sgd_momentum_updates():
    p = np.array([1.0, 2.0])
    opt = SGDMomentum([p], lr=0.1, momentum=0.9)
    g = np.array([1.0, -1.0])
    opt.step([g])
    np.testing.assert_allclose(p, [0.9, 2.1])
    opt.step([g])        # v = 0.9 * g + g
    np.testing.assert_allclose(p, [0.9 - 0.19, 2.1 + 0.19])


def test_adam_first_step_is_lr_times_sign():
    p = np.array([1.0, 2.0, 3.0])
    opt = Adam([p], lr=0.01)
    opt.step([np.array([5.0, -0.2, 1e-3])])
    np.testing.assert_allclose(p, [0.99, 2.01, 2.99], atol=1e-7)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert isinstance(make_optimizer([np.zeros(2)], TrainConfig(optimizer="sgd_momentum")),
                      SGDMomentum)


def test_conv_output_shape_full_epoch():
    layer = built(Conv2D(32, (1, 5)), (1, 30, 100), 0)
    assert layer.forward(np.zeros((1, 1, 30, 100))).shape == (1, 32, 30, 96)


def test_conv_identity_kernel():
    layer = built(Conv2D(1, (1, 1)), (1, 3, 7), 0)
    layer.params["W"][:] = 1.0
    layer.params["b"][:] = 0.0
    x = np.random.default_rng(0).standard_normal((2, 1, 3, 7))
    np.testing.assert_array_equal(layer.forward(x), x)


@pytest.mark.parametrize("gamma,beta", [(1.0, 0.0), (2.0, 3.0)])
def test_batchnorm_affine_output_moments(gamma, beta):
    layer = built(BatchNorm(), (4, 3, 5), 0)
    layer.params["gamma"][:] = gamma
    layer.params["beta"][:] = beta
    x = np.random.default_rng(1).normal(-2.0, 5.0, size=(16, 4, 3, 5))
    y = layer.forward(x, train=True)
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), beta, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), gamma ** 2, atol=1e-5)


def test_batchnorm_rejects_single_sample_batch():
    layer = built(BatchNorm(), (2, 1, 3), 0)
    with pytest.raises(ShapeError):
        layer.forward(np.ones((1, 2, 1, 3)), train=True)


def test_elu_continuous_at_zero():
    assert ELU().forward(np.array([0.0]))[0] == 0.0


def test_maxpool_small_row():
    out = MaxPool((1, 2)).forward(np.array([1.0, 3.0, 2.0, 0.0]).reshape(1, 1, 1, 4))
    np.testing.assert_array_equal(out.ravel(), [3.0, 2.0])


def test_lstm_zero_weights_give_zero_output():
    layer = built(LSTM(4), (3, 5), 0)
    for p in layer.params.values():
        p[:] = 0
    x = np.random.default_rng(2).standard_normal((3, 2, 5))
    np.testing.assert_array_equal(layer.forward(x), 0)


def test_lstm_single_step_hand_computed():
    layer = built(LSTM(2), (1, 1), 0)
    layer.params["W"][:] = np.arange(1, 9).reshape(1, 8) / 10
    layer.params["U"][:] = 7.0          # unused: the initial state is zero
    layer.params["b"][:] = 0.1
    out = layer.forward(np.full((1, 1, 1), 0.5))
    np.testing.assert_allclose(out[0, 0], [0.10920326414438435, 0.12817798337504693], rtol=1e-12)


def test_softmax_xent_limits():
    loss, probs, _ = softmax_xent(np.full((1, 3), 2.5), [1])
    np.testing.assert_allclose(probs, 1 / 3)
    assert loss == pytest.approx(np.log(3))
    loss, _, _ = softmax_xent(np.array([[800.0, 0.0, 0.0]]), [0])
    assert loss < 1e-12


def test_softmax_xent_gradcheck_tight():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((4, 3))
    labels = [0, 2, 1, 2]
    _, _, d = softmax_xent(logits, labels)
    num = numeric_grad(lambda: softmax_xent(logits, labels)[0], logits)
    assert rel_error(d, num) < 1e-6


@pytest.mark.parametrize("opt_cls", [SGDMomentum, Adam])
def test_zero_gradient_leaves_parameters(opt_cls):
    p = np.array([0.3, -1.2])
    opt = opt_cls([p], lr=0.1)
    for _ in range(3):
        opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p, [0.3, -1.2])


def test_sgd_contracts_quadratic():
    w = np.array([2.0])
    opt = SGDMomentum([w], lr=0.05, momentum=0.0)
    trace = []
    for _ in range(40):
        opt.step([2 * w])
        trace.append(abs(w[0]))
    assert all(b < a for a, b in zip(trace, trace[1:]))
    assert w[0] == pytest.approx(2.0 * 0.9 ** 40, rel=1e-12)
