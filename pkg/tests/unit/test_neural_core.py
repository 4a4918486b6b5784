import numpy as np
import pytest

from learning.neural_core import (
    AdamState,
    MlpParams,
    adam_step,
    grad_check,
    init_mlp,
    layer_norm,
    layer_norm_backward,
    mlp_backward,
    mlp_forward,
    mse_grad,
    mse_loss,
)
from utils.common_utils import ArgumentError


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def small_mlp(rng, sizes, activate_output=True):
    params = init_mlp(rng, sizes, activate_output)
    # A damped last layer keeps third derivatives small for the central differences.
    params.weights[-1] *= 0.1
    return params


def mlp_objective(x, labels, params):
    def f(blocks):
        prediction, cache = mlp_forward(x, params)
        _, grads = mlp_backward(mse_grad(prediction, labels), params, cache)
        return mse_loss(prediction, labels), grads.named_blocks("mlp")
    return f


def test_init_mlp_shapes_and_zero_biases(rng):
    params = init_mlp(rng, [4, 8, 3])
    assert [w.shape for w in params.weights] == [(8, 4), (3, 8)]
    assert all(np.all(b == 0) for b in params.biases)
    limit = np.sqrt(6.0 / 12.0)
    assert np.all(np.abs(params.weights[0]) <= limit)


def test_init_mlp_is_seeded():
    first = init_mlp(np.random.default_rng(1), [3, 5, 2])
    second = init_mlp(np.random.default_rng(1), [3, 5, 2])
    assert all(np.array_equal(a, b) for a, b in zip(first.weights, second.weights))


def test_mlp_params_reject_broken_chain():
    with pytest.raises(ArgumentError):
        MlpParams([np.zeros((4, 3)), np.zeros((2, 5))], [np.zeros(4), np.zeros(2)])
    with pytest.raises(ArgumentError):
        MlpParams([np.zeros((4, 3))], [np.zeros(3)])


def test_mlp_forward_shape_and_width_check(rng):
    params = init_mlp(rng, [3, 6, 2])
    y, _ = mlp_forward(rng.normal(size=(5, 3)), params)
    assert y.shape == (5, 2)
    assert np.all(np.abs(y) < 1.0)
    with pytest.raises(ArgumentError):
        mlp_forward(np.zeros((5, 4)), params)


def test_mlp_with_zero_params_outputs_zero(rng):
    params = init_mlp(rng, [3, 6, 2]).zeros_like()
    y, _ = mlp_forward(rng.normal(size=(4, 3)), params)
    assert np.array_equal(y, np.zeros((4, 2)))


def test_mlp_is_row_wise(rng):
    params = init_mlp(rng, [3, 6, 2])
    x = rng.normal(size=(4, 3))
    stacked, _ = mlp_forward(x, params)
    rows = np.vstack([mlp_forward(x[i:i + 1], params)[0] for i in range(4)])
    np.testing.assert_allclose(stacked, rows, rtol=0, atol=1e-14)


@pytest.mark.parametrize("activate_output", [True, False])
def test_mlp_gradients_match_finite_differences(rng, activate_output):
    params = small_mlp(rng, [3, 5, 4], activate_output)
    x = rng.normal(size=(6, 3))
    prediction, _ = mlp_forward(x, params)
    labels = prediction + 1e-5 * rng.normal(size=prediction.shape)
    error = grad_check(mlp_objective(x, labels, params), params.named_blocks("mlp"))
    assert error <= 1e-5


def test_layer_norm_normalizes_rows(rng):
    x = rng.normal(3.0, 5.0, size=(4, 16))
    out, _ = layer_norm(x, np.ones(16), np.zeros(16))
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=1), 1.0, rtol=1e-5)


def test_layer_norm_rejects_empty_rows():
    with pytest.raises(ArgumentError):
        layer_norm(np.zeros((2, 0)), np.zeros(0), np.zeros(0))


def test_layer_norm_gradients_match_finite_differences(rng):
    blocks = {
        "x": rng.normal(0.0, 3.0, size=(5, 6)),
        "gamma": 0.1 * rng.normal(size=6),
        "beta": rng.normal(size=6),
    }
    out, _ = layer_norm(blocks["x"], blocks["gamma"], blocks["beta"])
    labels = out + 1e-5 * rng.normal(size=out.shape)

    def f(params):
        prediction, cache = layer_norm(params["x"], params["gamma"], params["beta"])
        dx, dgamma, dbeta = layer_norm_backward(mse_grad(prediction, labels), params["gamma"], cache)
        return mse_loss(prediction, labels), {"x": dx, "gamma": dgamma, "beta": dbeta}

    assert grad_check(f, blocks) <= 1e-5


def test_mse_loss_and_gradient():
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    target = np.zeros((2, 2))
    assert mse_loss(pred, target) == pytest.approx(7.5)
    np.testing.assert_allclose(mse_grad(pred, target), pred / 2.0)
    with pytest.raises(ArgumentError):
        mse_loss(pred, np.zeros((2, 3)))


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -4.0, 1e-3])}
    state = AdamState(lr=0.01)
    adam_step(params, grads, state)
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * grads["w"] / (np.abs(grads["w"]) + 1e-8)
    np.testing.assert_allclose(params["w"], expected, rtol=1e-12)
    assert state.t == 1


def test_adam_updates_in_place_and_tracks_moments():
    weight = np.ones(2)
    params = {"w": weight}
    state = AdamState()
    for _ in range(3):
        adam_step(params, {"w": np.array([1.0, -1.0])}, state)
    assert params["w"] is weight
    assert weight[0] < 1.0 < weight[1]
    assert state.t == 3


def test_adam_rejects_mismatched_gradient():
    with pytest.raises(ArgumentError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState())
    with pytest.raises(ArgumentError):
        adam_step({"w": np.zeros(3)}, {}, AdamState())


def test_grad_check_detects_wrong_gradient():
    def f(params):
        value = float(np.sum(params["w"] ** 2))
        return value, {"w": params["w"].copy()}  # off by a factor of two

    assert grad_check(f, {"w": np.array([1.0, 2.0])}) > 0.4


def test_grad_check_restores_parameters():
    w = np.array([0.5, -1.5])
    grad_check(lambda p: (float(np.sum(p["w"] ** 3)), {"w": 3 * p["w"] ** 2}), {"w": w})
    assert np.array_equal(w, [0.5, -1.5])


def test_adam_with_zero_gradients_leaves_params_unchanged():
    params = {"w": np.array([0.3, -1.2]), "b": np.array([[2.0]])}
    before = {name: block.copy() for name, block in params.items()}
    state = AdamState(lr=0.05)
    for _ in range(5):
        adam_step(params, {name: np.zeros_like(block) for name, block in params.items()}, state)
    for name in params:
        assert np.array_equal(params[name], before[name])


def test_adam_minimizes_a_quadratic():
    target = np.array([0.7, -0.4, 1.0])
    params = {"w": np.zeros(3)}
    state = AdamState(lr=0.05)
    for _ in range(500):
        adam_step(params, {"w": 2.0 * (params["w"] - target)}, state)
    assert np.linalg.norm(params["w"] - target) <= 1e-3


def test_layer_norm_of_two_values():
    out, _ = layer_norm(np.array([[1.0, 3.0]]), np.ones(2), np.zeros(2), eps_ln=1e-12)
    np.testing.assert_allclose(out, [[-1.0, 1.0]], rtol=1e-9)


def test_single_unit_tanh_layer():
    out, _ = mlp_forward(np.array([[0.5]]), MlpParams([np.eye(1)], [np.zeros(1)]))
    np.testing.assert_allclose(out, [[0.46211715726]], rtol=1e-10)
