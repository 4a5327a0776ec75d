import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uwbpatch import nn

from .oracles import central_difference, max_relative_error, smooth_coordinates

# Output shape column of the architecture table, input length 660.
TABLE_SHAPES = [
    ("conv", (16, 658)), ("pool", (16, 329)),
    ("conv", (32, 327)), ("pool", (32, 163)),
    ("conv", (64, 161)), ("pool", (64, 80)),
    ("flatten", (5120,)),
]
TABLE_PARAMETERS = 89_861


def test_architecture_matches_table():
    arch = nn.ArchSpec()
    assert arch.layer_shapes() == TABLE_SHAPES
    assert arch.num_parameters() == TABLE_PARAMETERS
    params = nn.init_params(arch, seed=0)
    assert params.flat().size == TABLE_PARAMETERS
    assert nn.intermediate_shapes(params, np.zeros(660)) == TABLE_SHAPES
    assert nn.forward(params, np.zeros(660)).shape == (5,)


def test_short_input_rejected():
    with pytest.raises(nn.ShapeError):
        nn.ArchSpec(input_length=20).layer_shapes()


def test_zero_params_give_uniform_output_and_zero_gradient():
    params = nn.zero_params()
    x = np.random.default_rng(0).uniform(-1, 1, 660)
    np.testing.assert_allclose(nn.forward(params, x), np.full(5, np.log(1 / 5)), atol=1e-15)
    _, grad = nn.loss_and_input_gradient(params, x, 2)
    assert np.all(grad == 0)


def test_log_softmax_normalised():
    params = nn.init_params(seed=3)
    X = np.random.default_rng(1).uniform(-1, 1, (6, 660))
    np.testing.assert_allclose(np.exp(nn.forward(params, X)).sum(axis=1), 1.0, atol=1e-9)


def test_forward_deterministic_and_batch_consistent():
    params = nn.init_params(seed=4)
    X = np.random.default_rng(2).uniform(-1, 1, (3, 660))
    batch = nn.forward(params, X)
    for i in range(3):
        np.testing.assert_array_equal(nn.forward(params, X[i]), nn.forward(params, X[i]))
        np.testing.assert_allclose(nn.forward(params, X[i]), batch[i], atol=1e-12)


# -- layer-wise gradient checks ---------------------------------------------------


def _projected(f, shape, rng):
    r = rng.normal(size=shape)
    return r, lambda z: float(np.sum(f(z) * r))


def test_conv_layer_gradient():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 12, 2))
    w = rng.normal(size=(3, 2, 3))
    b = rng.normal(size=3)
    out, cache = nn.conv1d_forward(x, w, b)
    r, loss = _projected(lambda z: nn.conv1d_forward(z.reshape(x.shape), w, b)[0], out.shape, rng)
    dx, dw, db = nn.conv1d_backward(r, w, cache)
    assert max_relative_error(dx.ravel(), central_difference(loss, x.ravel())) <= 1e-4
    loss_w = lambda z: float(np.sum(nn.conv1d_forward(x, z.reshape(w.shape), b)[0] * r))
    assert max_relative_error(dw.ravel(), central_difference(loss_w, w.ravel())) <= 1e-4
    np.testing.assert_allclose(db, r.sum(axis=(0, 1)))


def test_leaky_and_pool_gradients():
    rng = np.random.default_rng(1)
    # keep samples away from 0 and pool pairs away from ties
    x = rng.uniform(0.1, 1.0, size=(1, 11, 2)) * rng.choice([-1, 1], size=(1, 11, 2))
    x[:, 1:10:2] = x[:, 0:10:2] + rng.choice([-0.05, 0.05], size=(1, 5, 2))
    x[np.abs(x) < 0.01] = 0.5
    out, pos = nn.leaky_forward(x, 0.01)
    r, loss = _projected(lambda z: nn.leaky_forward(z.reshape(x.shape), 0.01)[0], out.shape, rng)
    dx = nn.leaky_backward(r, pos, 0.01)
    assert max_relative_error(dx.ravel(), central_difference(loss, x.ravel())) <= 1e-4
    out, cache = nn.maxpool_forward(x)
    assert out.shape == (1, 5, 2)  # odd tail dropped
    r, loss = _projected(lambda z: nn.maxpool_forward(z.reshape(x.shape))[0], out.shape, rng)
    dx = nn.maxpool_backward(r, cache)
    assert max_relative_error(dx.ravel(), central_difference(loss, x.ravel())) <= 1e-4
    assert np.all(dx[:, -1] == 0)


def test_pool_tie_goes_to_first():
    x = np.array([[[1.0], [1.0], [0.0], [2.0]]])
    out, cache = nn.maxpool_forward(x)
    dx = nn.maxpool_backward(np.ones_like(out), cache)
    np.testing.assert_array_equal(dx[0, :, 0], [1.0, 0.0, 0.0, 1.0])


def test_dense_head_matches_closed_form():
    # softmax(z) - onehot(y) is the gradient of the NLL with respect to the logits
    rng = np.random.default_rng(5)
    z = rng.normal(size=(1, 5))
    logp = nn.log_softmax(z)
    y = 3
    closed = np.exp(logp[0]) - np.eye(5)[y]
    fd = central_difference(lambda v: -float(nn.log_softmax(v[None, :])[0, y]), z[0])
    np.testing.assert_allclose(closed, fd, atol=1e-9)


def test_full_network_input_gradient():
    rng = np.random.default_rng(7)
    for seed in range(2):
        params = nn.init_params(seed=seed)
        x = rng.uniform(-1, 1, 660)
        y = int(rng.integers(0, 4))
        loss, grad = nn.loss_and_input_gradient(params, x, y)
        fd = central_difference(lambda v: nn.loss_and_input_gradient(params, v, y)[0], x)
        ok = smooth_coordinates(params, x)
        assert ok.mean() > 0.9
        assert max_relative_error(grad[ok], fd[ok]) <= 1e-4


def test_param_gradient_spot_check():
    rng = np.random.default_rng(8)
    params = nn.init_params(seed=1)
    X = rng.uniform(-1, 1, (3, 660))
    y = np.array([0, 1, 3])
    _, grads = nn.loss_and_param_gradients(params, X, y)
    for name in ("conv1", "fc2"):
        w = params.weights[name]
        idx = [tuple(rng.integers(0, s) for s in w.shape) for _ in range(5)]
        for i in idx:
            old = w[i]
            w[i] = old + 1e-5
            up, _ = nn.loss_and_param_gradients(params, X, y)
            w[i] = old - 1e-5
            down, _ = nn.loss_and_param_gradients(params, X, y)
            w[i] = old
            assert grads[name][0][i] == pytest.approx((up - down) / 2e-5, rel=1e-4, abs=1e-9)


def test_bad_labels_rejected():
    params = nn.init_params()
    with pytest.raises(ValueError):
        nn.loss_and_input_gradient(params, np.zeros(660), 5)
    with pytest.raises(nn.ShapeError):
        nn.forward(params, np.zeros(100))


# -- training -------------------------------------------------------------------------


def _toy(n=8, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 0.3, (n, 660))
    y = np.arange(n) % 4
    for i in range(n):
        X[i, 100 + 100 * y[i] : 120 + 100 * y[i]] += 1.0
    return np.clip(X, -1, 1), y


def test_toy_set_memorised():
    X, y = _toy()
    params, hist = nn.train(X, y, nn.TrainConfig(epochs=200, seed=0))
    assert nn.accuracy(params, X, y) == 1.0
    assert hist.train_loss[-1] < hist.train_loss[0]


def test_zero_epochs_returns_initialisation():
    X, y = _toy()
    params, hist = nn.train(X, y, nn.TrainConfig(epochs=0, seed=3))
    np.testing.assert_array_equal(params.flat(), nn.init_params(seed=3).flat())
    assert hist.train_loss == []


def test_training_is_deterministic():
    X, y = _toy()
    a, _ = nn.train(X, y, nn.TrainConfig(epochs=3, seed=1))
    b, _ = nn.train(X, y, nn.TrainConfig(epochs=3, seed=1))
    np.testing.assert_array_equal(a.flat(), b.flat())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    X, y = _toy()
    X = X.copy()
    X[0, 0] = np.inf
    with pytest.raises((nn.TrainingDivergedError, FloatingPointError)):
        nn.train(X, y, nn.TrainConfig(epochs=1))


def test_accuracy_and_success_rate():
    X, y = _toy(8)
    params = nn.init_params()
    acc = nn.accuracy(params, X, y)
    assert nn.success_rate(params, X, y) == 1.0 - acc
    const = lambda Z: np.zeros(len(Z), dtype=int)
    assert nn.accuracy(const, X, y) == 0.25


@given(st.integers(0, 2**31 - 1))
def test_checkpoint_round_trip(seed):
    import os
    import tempfile

    params = nn.init_params(seed=seed)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.bin")
        nn.save_params(params, path)
        back = nn.load_params(path)
    np.testing.assert_array_equal(back.flat(), params.flat())
    assert back.arch == params.arch


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.bin"
    nn.save_params(nn.init_params(), path)
    raw = path.read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:100])
    with pytest.raises(nn.CheckpointError, match="offset"):
        nn.load_params(tmp_path / "cut.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(nn.CheckpointError):
        nn.load_params(tmp_path / "magic.bin")
