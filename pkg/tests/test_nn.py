import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedpoison.data import gen_blobs
from fedpoison.errors import ConfigError, DataError, ShapeError
from fedpoison.nn import (
    ModelParams,
    TrainConfig,
    epoch_batches,
    flatten,
    forward,
    init_model,
    input_grad,
    loss_and_grad,
    predict,
    sgd_epochs,
    sgd_step,
    unflatten,
    zeros_like,
)


def numeric_grad(model, X, y, h=1e-6):
    g = np.zeros(model.size)
    for i in range(model.size):
        up = model.flat.copy()
        dn = model.flat.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (loss_and_grad(model.with_flat(up), X, y)[0]
                - loss_and_grad(model.with_flat(dn), X, y)[0]) / (2 * h)
    return g


def test_init_deterministic_and_zero_bias():
    a = init_model([4, 3], seed=7)
    b = init_model([4, 3], seed=7)
    assert a == b
    W, bias = a.layers()[0]
    assert W.shape == (3, 4)
    assert np.all(bias == 0)
    assert np.all(np.abs(W) <= 1 / math.sqrt(4))


def test_param_count_arithmetic():
    assert init_model([4, 8, 3], 0).size == 4 * 8 + 8 + 8 * 3 + 3 == 67


@pytest.mark.parametrize("dims", [[], [4], [4, 0], [3, -1, 2]])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(ConfigError):
        init_model(dims, 0)


def test_flatten_roundtrip_bit_exact():
    m = init_model([5, 7, 3], 1)
    assert np.array_equal(flatten(unflatten(m)), m.flat)
    assert ModelParams(m.layer_shapes, flatten(unflatten(m))) == m


def test_wrong_flat_length():
    with pytest.raises(ShapeError):
        ModelParams(((3, 4),), np.zeros(5))


def test_zero_weights_uniform_probabilities():
    m = zeros_like(init_model([5, 3], 0))
    P = forward(m, np.random.default_rng(0).normal(size=(4, 5)))
    np.testing.assert_allclose(P, 1 / 3, atol=1e-15)


def test_probability_rows_sum_to_one(rng):
    m = init_model([6, 10, 4], 2)
    P = forward(m, rng.normal(size=(50, 6)) * 10)
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_single_layer_hand_computation():
    # W picks feature j as logit for class j; bias shifts class 2
    W = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    b = np.array([0.0, 0.0, 0.5])
    m = ModelParams(((3, 3),), flatten([(W, b)]))
    X = np.array([[2.0, 1.0, 0.0], [0.0, 1.0, 0.9], [0.0, 0.0, 0.0]])
    # logits: (2,1,.5), (0,1,1.4), (0,0,.5)
    assert predict(m, X).tolist() == [0, 2, 2]
    z = np.array([2.0, 1.0, 0.5])
    np.testing.assert_allclose(forward(m, X[:1])[0], np.exp(z) / np.exp(z).sum(), rtol=1e-14)


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        forward(init_model([4, 3], 0), np.zeros((2, 5)))


@pytest.mark.parametrize("C", [2, 3, 10])
def test_zero_weight_loss_is_log_C(C):
    m = zeros_like(init_model([4, 6, C], 0))
    X = np.random.default_rng(C).normal(size=(9, 4))
    loss, _ = loss_and_grad(m, X, np.arange(9) % C)
    assert abs(loss - math.log(C)) < 1e-9


def test_label_out_of_range():
    m = init_model([4, 3], 0)
    with pytest.raises(DataError):
        loss_and_grad(m, np.zeros((2, 4)), np.array([0, 3]))


def test_gradient_ten_parameter_model(rng):
    model = ModelParams(((2, 4),), rng.normal(size=10))  # 4*2 weights + 2 biases
    X = rng.normal(size=(6, 4))
    y = rng.integers(0, 2, size=6)
    _, g = loss_and_grad(model, X, y)
    np.testing.assert_allclose(g, numeric_grad(model, X, y), rtol=1e-5, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gradient_check_random_models(seed):
    r = np.random.default_rng(seed)
    d, h, C = int(r.integers(2, 6)), int(r.integers(2, 8)), int(r.integers(2, 5))
    m = init_model([d, h, C], seed)
    m = m.with_flat(m.flat + r.normal(scale=0.1, size=m.size))
    X = r.normal(size=(7, d))
    y = r.integers(0, C, size=7)
    _, g = loss_and_grad(m, X, y)
    ng = numeric_grad(m, X, y)
    err = np.abs(g - ng) / np.maximum(np.abs(g) + np.abs(ng), 1e-7)
    assert err.max() < 1e-4


def test_input_grad_matches_finite_differences(rng):
    m = init_model([3, 5, 3], 2)
    X = rng.normal(size=(4, 3))
    y = np.array([0, 1, 2, 1])
    _, dX = input_grad(m, X, y)
    h = 1e-6
    for i in range(4):
        for j in range(3):
            Xp, Xm = X.copy(), X.copy()
            Xp[i, j] += h
            Xm[i, j] -= h
            num = (input_grad(m, Xp, y)[0] - input_grad(m, Xm, y)[0]) / (2 * h)
            assert abs(num - dX[i, j]) < 1e-6


def test_duplicated_rows_same_loss_and_grad(rng):
    m = init_model([4, 5, 3], 0)
    X = rng.normal(size=(5, 4))
    y = rng.integers(0, 3, size=5)
    l1, g1 = loss_and_grad(m, X, y)
    l2, g2 = loss_and_grad(m, np.vstack([X, X]), np.concatenate([y, y]))
    assert abs(l1 - l2) < 1e-12
    np.testing.assert_allclose(g1, g2, atol=1e-14)


def test_sgd_step_examples():
    m = ModelParams(((1, 1),), np.array([1.0, 1.0]))
    assert sgd_step(m, np.array([2.0, -2.0]), 0.5).flat.tolist() == [0.0, 2.0]
    assert sgd_step(m, np.array([2.0, -2.0]), 0.0) == m
    assert sgd_step(m, np.zeros(2), 0.3) == m
    with pytest.raises(ShapeError):
        sgd_step(m, np.zeros(3), 0.1)


def test_train_config_validation():
    TrainConfig()
    for kw in ({"learning_rate": 0}, {"batch_size": 0}, {"base_epochs": 0}):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


def test_epoch_batches_keep_short_batch():
    b = epoch_batches(10, 4, np.random.default_rng(0))
    assert [len(x) for x in b] == [4, 4, 2]
    assert sorted(np.concatenate(b).tolist()) == list(range(10))


def test_sgd_deterministic_trajectory():
    ds = gen_blobs(3, 4, 30, 1.0, 0)
    runs = []
    for _ in range(2):
        m = init_model([4, 6, 3], 1)
        runs.append(sgd_epochs(m, ds.features, ds.labels, 3, 0.1, 8, np.random.default_rng(9)))
    assert runs[0] == runs[1]


def test_loss_decreases_on_separable_blobs():
    ds = gen_blobs(2, 2, 50, 0.3, 4)
    m = init_model([2, 2], 0)
    losses = []
    for _ in range(50):
        loss, g = loss_and_grad(m, ds.features, ds.labels)
        losses.append(loss)
        m = sgd_step(m, g, 0.1)
    smooth = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) <= 0)
