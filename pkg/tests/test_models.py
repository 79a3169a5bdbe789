import numpy as np
import pytest

from corexplain.data import Dataset
from corexplain.errors import ConfigError, FormatError, ShapeError
from corexplain.models import (
    MLPModel,
    TrainConfig,
    forward,
    grad_input,
    init_model,
    load_weights,
    save_weights,
    scalar_function,
    train,
)
from corexplain.rng import substream
from corexplain.synthetic import gaussian_classification, nonlinear_regression

from conftest import make_dataset, random_model


def linear_model(w, b=0.0):
    w = np.asarray(w, dtype=np.float64)
    return MLPModel(
        layer_dims=(w.shape[0], 1),
        weights=[w[:, None].copy()],
        biases=[np.array([b])],
        head="identity",
        loss="mse",
    )


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_zero_weight_classifier_outputs_half():
    model = init_model((3, 2), head="softmax", seed=0)
    model.weights[0][:] = 0.0
    out = forward(model, np.zeros((4, 3)))
    assert np.allclose(out, 0.5)


def test_linear_regression_forward():
    model = linear_model([1.0, 2.0])
    assert forward(model, np.array([[3.0, 4.0]]))[0] == pytest.approx(11.0)


def test_forward_rows_independent(rng):
    model = random_model(4, seed=1)
    X = rng.standard_normal((6, 4))
    perm = rng.permutation(6)
    out = forward(model, X)
    assert np.allclose(forward(model, X[perm]), out[perm])


def test_forward_shape_error():
    model = random_model(4, seed=0)
    with pytest.raises(ShapeError):
        forward(model, np.zeros((2, 5)))


def test_softmax_rows_sum_to_one(rng):
    model = random_model(5, seed=2, hidden=(16, 8), n_out=3)
    out = forward(model, rng.standard_normal((50, 5)) * 3)
    assert np.all(out >= 0) and np.all(out <= 1)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_batch_matches_single_rows(rng):
    model = random_model(4, seed=3, hidden=(8, 4))
    X = rng.standard_normal((10, 4))
    batch = forward(model, X)
    singles = np.array([forward(model, X[i : i + 1])[0] for i in range(10)])
    assert np.allclose(batch, singles)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def test_linear_gradient_is_weight_vector():
    model = linear_model([1.5, -2.0, 0.25])
    g = grad_input(model, np.array([0.3, 0.7, -0.1]))
    assert np.allclose(g, [1.5, -2.0, 0.25])


def test_constant_model_zero_gradient():
    model = init_model((3, 2), head="softmax", seed=0)
    model.weights[0][:] = 0.0
    g = grad_input(model, np.array([1.0, -1.0, 0.5]), class_index=1)
    assert np.allclose(g, 0.0)


def test_gradient_matches_finite_differences(rng):
    # 100 random smooth points on both heads; central differences, h = 1e-4.
    h = 1e-4
    checked = 0
    for head, n_out in (("softmax", 2), ("identity", 1)):
        model = random_model(5, seed=7, hidden=(12, 6), head=head, n_out=n_out)
        fn = scalar_function(model, 1 if head == "softmax" else None)
        X = rng.standard_normal((50, 5))
        g = grad_input(model, X, class_index=1 if head == "softmax" else None)
        for i in range(50):
            fd = np.empty(5)
            for j in range(5):
                e = np.zeros(5)
                e[j] = h
                fd[j] = (fn((X[i] + e)[None, :])[0] - fn((X[i] - e)[None, :])[0]) / (2 * h)
            denom = max(np.abs(g[i]).max(), 1e-3)
            if np.abs(fd - g[i]).max() / denom < 1e-4:
                checked += 1
    assert checked >= 95  # a few points may sit on ReLU kinks


def test_gradient_class_index_out_of_range():
    model = random_model(3, seed=0)
    with pytest.raises(ConfigError):
        grad_input(model, np.zeros(3), class_index=5)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_train_separable_blobs():
    rng = substream(0, "blobs")
    X = np.vstack([rng.standard_normal((60, 2)) + 3.0, rng.standard_normal((60, 2)) - 3.0])
    y = np.array([1.0] * 60 + [0.0] * 60)
    data = make_dataset(X, y, "classification")
    model = train(data, TrainConfig(epochs=50, batch_size=16, learning_rate=0.1, seed=0), hidden=(8,))
    assert model.train_stats["train_accuracy"] > 0.95


def test_train_deterministic():
    data = gaussian_classification(120, d=4, seed=5)
    cfg = TrainConfig(epochs=5, batch_size=32, learning_rate=0.05, seed=9)
    m1 = train(data, cfg, hidden=(8,))
    m2 = train(data, cfg, hidden=(8,))
    for W1, W2 in zip(m1.weights, m2.weights):
        assert np.array_equal(W1, W2)


def test_train_regression_correlates():
    rng = substream(1, "reg")
    X = rng.standard_normal((300, 3))
    y = 3.0 * X[:, 0] + 0.1 * rng.standard_normal(300)
    data = make_dataset(X, y, "regression")
    model = train(data, TrainConfig(epochs=60, batch_size=32, learning_rate=0.01, seed=0, loss="mse"), hidden=(16,))
    pred = forward(model, X)
    assert np.corrcoef(pred, y)[0, 1] > 0.9


def test_train_requires_labels():
    data = make_dataset(np.zeros((8, 2)))
    with pytest.raises(ConfigError):
        train(data, TrainConfig())


# ---------------------------------------------------------------------------
# weight serialization
# ---------------------------------------------------------------------------


def test_weights_roundtrip(tmp_path, rng):
    model = random_model(6, seed=11, hidden=(10, 5))
    path = str(tmp_path / "weights.json")
    save_weights(model, path)
    back = load_weights(path)
    X = rng.standard_normal((20, 6))
    assert np.array_equal(forward(model, X), forward(back, X))
    assert back.layer_dims == model.layer_dims


def test_truncated_weight_file(tmp_path):
    model = random_model(3, seed=0)
    path = str(tmp_path / "weights.json")
    save_weights(model, path)
    raw = open(path).read()
    open(path, "w").write(raw[: len(raw) // 2])
    with pytest.raises(FormatError):
        load_weights(path)


def test_schema_mismatch(tmp_path):
    path = str(tmp_path / "weights.json")
    open(path, "w").write('{"schema": "corexplain.weights/999"}')
    with pytest.raises(FormatError):
        load_weights(path)


def test_dimension_mismatch_detectable(tmp_path):
    model13 = random_model(13, seed=0)
    path = str(tmp_path / "weights.json")
    save_weights(model13, path)
    back = load_weights(path)
    assert back.input_dim == 13
    with pytest.raises(ShapeError):
        forward(back, np.zeros((1, 10)))
