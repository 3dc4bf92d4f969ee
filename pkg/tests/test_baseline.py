import math

import numpy as np
import pytest

from cnlqnn.baseline import MLPConfig, MLPParams, StaleCacheError, mlp_backward, mlp_forward, mlp_train
from cnlqnn.data import synthetic_dataset
from cnlqnn.rng import stream


def unit_net(w=1.0):
    return MLPParams(np.array([[w]]), np.zeros(1), np.array([1.0]), 0.0)


def test_config_validation():
    for bad in (dict(hidden=0), dict(batch=0), dict(epochs=-1), dict(lr=-1.0)):
        with pytest.raises(ValueError):
            MLPConfig(**bad)


def test_zero_weights_predict_zero():
    params = MLPParams.zeros(5, 4)
    out, _ = mlp_forward(params, np.random.default_rng(0).uniform(size=(3, 5)))
    assert np.all(out == 0)


def test_output_range():
    params = MLPParams.init(6, 16, np.random.default_rng(1))
    params.w2 *= 50
    out, _ = mlp_forward(params, np.random.default_rng(2).normal(scale=10, size=(100, 6)))
    assert np.all(np.abs(out) <= 1)


@pytest.mark.parametrize("x", [-1.5, 0.0, 0.3, 2.0])
def test_unit_net_composition(x):
    out, _ = mlp_forward(unit_net(), np.array([x]))
    assert out == pytest.approx(math.tanh(math.tanh(x)), abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        mlp_forward(MLPParams.zeros(3, 2), np.zeros(4))


def test_perfect_prediction_zero_gradient():
    params = unit_net()
    out, cache = mlp_forward(params, np.array([[0.4]]))
    grads = mlp_backward(params, cache, out)
    for g in grads.values():
        assert np.all(g == 0)


@pytest.mark.parametrize("x,y", [(0.3, 1.0), (-0.8, -1.0), (1.2, -1.0)])
def test_unit_net_input_gradient(x, y):
    params = unit_net()
    yhat = math.tanh(math.tanh(x))
    expected = (1 - math.tanh(math.tanh(x)) ** 2) * (1 - math.tanh(x) ** 2) * (-2 * (y - yhat))
    _, cache = mlp_forward(params, np.array([[x]]))
    assert mlp_backward(params, cache, y)["x"][0, 0] == pytest.approx(expected, abs=1e-14)


def _loss(params, X, y):
    out, _ = mlp_forward(params, X)
    return float(np.mean((y - out) ** 2))


@pytest.mark.parametrize("seed", range(50))
def test_backprop_matches_fd(seed):
    rng = np.random.default_rng(seed)
    d, h, n = rng.integers(1, 6), rng.integers(1, 8), rng.integers(1, 5)
    params = MLPParams.init(d, h, rng)
    params.b1 = rng.normal(size=h)
    params.b2 = float(rng.normal())
    X = rng.normal(size=(n, d))
    y = rng.choice([-1.0, 1.0], size=n)
    _, cache = mlp_forward(params, X)
    grads = mlp_backward(params, cache, y)
    step = 1e-6
    for name in ("w1", "b1", "w2"):
        arr = getattr(params, name)
        for i in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[i] += step
            minus[i] -= step
            lp = _loss(MLPParams(**{**vars(params), name: plus}), X, y)
            lm = _loss(MLPParams(**{**vars(params), name: minus}), X, y)
            assert abs(grads[name][i] - (lp - lm) / (2 * step)) <= 1e-6
    lp = _loss(MLPParams(**{**vars(params), "b2": params.b2 + step}), X, y)
    lm = _loss(MLPParams(**{**vars(params), "b2": params.b2 - step}), X, y)
    assert abs(float(grads["b2"]) - (lp - lm) / (2 * step)) <= 1e-6
    # per-sample input gradient of that sample's own loss
    for r in range(n):
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            fd = (_loss(params, X[r : r + 1] + e, y[r : r + 1]) - _loss(params, X[r : r + 1] - e, y[r : r + 1])) / (2 * step)
            assert abs(grads["x"][r, j] - fd) <= 1e-6


def test_stale_cache_rejected():
    params = MLPParams.init(3, 4, np.random.default_rng(0))
    _, cache = mlp_forward(params, np.ones((2, 3)))
    grads = mlp_backward(params, cache, np.ones(2))
    params.apply(grads, 0.1)
    with pytest.raises(StaleCacheError):
        mlp_backward(params, cache, np.ones(2))
    other = MLPParams.init(3, 4, np.random.default_rng(0))
    _, fresh = mlp_forward(params, np.ones((2, 3)))
    with pytest.raises(StaleCacheError):
        mlp_backward(other, fresh, np.ones(2))


@pytest.fixture(scope="module")
def split():
    return synthetic_dataset(3, 600, 300, stream(0, "data"))


def test_training_reaches_high_accuracy(split):
    model = mlp_train(split.x_train, split.y_train, MLPConfig(), np.random.default_rng(0),
                      split.x_test, split.y_test)
    assert model.trained
    assert model.test_accuracy >= 0.95
    assert len(model.losses) == MLPConfig().epochs


def test_training_deterministic(split):
    cfg = MLPConfig(epochs=5)
    a = mlp_train(split.x_train, split.y_train, cfg, np.random.default_rng(4))
    b = mlp_train(split.x_train, split.y_train, cfg, np.random.default_rng(4))
    for name in ("w1", "b1", "w2"):
        assert np.array_equal(getattr(a.params, name), getattr(b.params, name))
    assert a.params.b2 == b.params.b2


@pytest.mark.parametrize("lr", [0.01, 0.05])
def test_training_loss_non_increasing(split, lr):
    model = mlp_train(split.x_train, split.y_train, MLPConfig(lr=lr, epochs=30), np.random.default_rng(1))
    assert all(b <= a + 1e-6 for a, b in zip(model.losses, model.losses[1:]))


def test_empty_training_set():
    with pytest.raises(ValueError):
        mlp_train(np.zeros((0, 3)), np.zeros(0), MLPConfig(), np.random.default_rng(0))
