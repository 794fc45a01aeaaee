"""Tests for the position network"""

import numpy as np
import pytest

from weakpos import (
    AdamState,
    Batch,
    ErrorKind,
    MlpModel,
    WeakPosError,
    adam_step,
    backward,
    checkpoint_load,
    checkpoint_save,
    forward,
    init_params,
)
from weakpos.net import predict


@pytest.fixture(name="model")
def _model() -> MlpModel:
    return init_params([3, 5, 4, 2], seed=0)


def _loss(model: MlpModel, inputs: np.ndarray, weights: np.ndarray) -> float:
    pred, _ = forward(model, inputs)
    return float((pred * weights).sum())


def test__init_params_he_uniform():
    """Should draw weights within sqrt(6 / fan_in) and zero the biases"""
    model = init_params([64, 128, 2], seed=1)
    assert np.abs(model.weights[0]).max() <= np.sqrt(6.0 / 64)
    assert np.abs(model.weights[1]).max() <= np.sqrt(6.0 / 128)
    assert model.weights[0].var() == pytest.approx(2.0 / 64, rel=0.1)
    assert all(not bias.any() for bias in model.biases)
    assert model.parameter_count() == 64 * 128 + 128 + 128 * 2 + 2


def test__init_params_is_deterministic():
    """Should reproduce the parameters from the same seed"""
    first = init_params([4, 8, 2], seed=9)
    second = init_params([4, 8, 2], seed=9)
    for a, b in zip(first.parameters(), second.parameters()):
        assert np.array_equal(a, b)


def test__output_must_be_planar():
    """Should refuse networks without a 2-unit output"""
    with pytest.raises(ValueError):
        init_params([4, 8, 3], seed=0)


def test__forward_shapes(model, stream):
    """Should predict one position per row and accept batches"""
    inputs = stream.normal(size=(7, 3))
    pred, cache = forward(model, inputs)
    assert pred.shape == (7, 2)
    batch_pred, _ = forward(model, Batch(inputs=inputs))
    assert np.array_equal(pred, batch_pred)
    assert len(cache.activations) == model.depth
    assert predict(model, inputs, chunk=3) == pytest.approx(pred)


def test__forward_dimension_mismatch(model):
    """Should refuse inputs of the wrong width"""
    with pytest.raises(WeakPosError) as err:
        forward(model, np.zeros((2, 4)))
    assert err.value.kind == ErrorKind.DIMENSION_MISMATCH


def test__backward_matches_finite_differences(model, stream):
    """Should agree with central differences on every parameter"""
    for bias in model.biases:
        bias += stream.uniform(0.05, 0.2, size=bias.shape)
    inputs = stream.normal(size=(6, 3))
    weights = stream.normal(size=(6, 2))
    _, cache = forward(model, inputs)
    h = 1e-6
    hidden = cache.pre_activations[:-1]
    assert min(np.abs(z).min() for z in hidden) > 10 * h
    gradients = backward(model, cache, weights)
    for param, grad in zip(model.parameters(), gradients.parameters()):
        assert grad.shape == param.shape
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + h
            upper = _loss(model, inputs, weights)
            param[index] = original - h
            lower = _loss(model, inputs, weights)
            param[index] = original
            assert grad[index] == pytest.approx((upper - lower) / (2 * h), abs=1e-5)


def test__backward_stale_cache(model, stream):
    """Should refuse gradients that do not fit the cached pass"""
    _, cache = forward(model, stream.normal(size=(4, 3)))
    with pytest.raises(WeakPosError) as err:
        backward(model, cache, np.zeros((5, 2)))
    assert err.value.kind == ErrorKind.STALE_CACHE

    other = init_params([3, 6, 2], seed=0)
    with pytest.raises(WeakPosError) as err:
        backward(other, cache, np.zeros((4, 2)))
    assert err.value.kind == ErrorKind.STALE_CACHE


def test__adam_first_step(model, stream):
    """Should move every parameter by about lr against its gradient sign"""
    before = model.copy()
    _, cache = forward(model, stream.normal(size=(5, 3)))
    gradients = backward(model, cache, np.ones((5, 2)))
    state = AdamState.zeros(model)
    adam_step(model, state, gradients, lr=0.01)
    assert state.step == 1
    for old, new, grad in zip(
        before.parameters(), model.parameters(), gradients.parameters()
    ):
        moving = np.abs(grad) > 1e-3
        assert (new - old)[moving] == pytest.approx(
            -0.01 * np.sign(grad[moving]), rel=1e-3
        )


def test__adam_reduces_loss(model, stream):
    """Should decrease a quadratic loss over a few steps"""
    inputs = stream.normal(size=(16, 3))
    target = stream.normal(size=(16, 2))
    state = AdamState.zeros(model)
    losses = []
    for _ in range(50):
        pred, cache = forward(model, inputs)
        losses.append(float(((pred - target) ** 2).mean()))
        gradient = 2.0 * (pred - target) / pred.size
        adam_step(model, state, backward(model, cache, gradient), lr=0.01)
    assert losses[-1] < losses[0]
    assert model.is_finite()


def test__checkpoint_restores_model_and_state(model, tmp_path, stream):
    """Should restore parameters, moments and step exactly"""
    _, cache = forward(model, stream.normal(size=(5, 3)))
    state = AdamState.zeros(model, beta1=0.8)
    adam_step(model, state, backward(model, cache, np.ones((5, 2))), lr=0.01)
    path = tmp_path / "checkpoint.bin"
    checkpoint_save(path, model, state, epoch=3, loss_trace=[0.5, 0.4, 0.3])

    loaded, loaded_state, header = checkpoint_load(path, [3, 5, 4, 2])
    assert header.epoch == 3
    assert header.loss_trace == [0.5, 0.4, 0.3]
    assert loaded_state.step == 1
    assert loaded_state.beta1 == 0.8
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert np.array_equal(a, b)
    for a, b in zip(state.second, loaded_state.second):
        assert np.array_equal(a, b)


def test__checkpoint_layer_mismatch(model, tmp_path):
    """Should refuse a checkpoint of another architecture"""
    path = tmp_path / "checkpoint.bin"
    checkpoint_save(path, model, AdamState.zeros(model))
    with pytest.raises(WeakPosError) as err:
        checkpoint_load(path, [3, 6, 2])
    assert err.value.kind == ErrorKind.SCHEMA_MISMATCH


def test__checkpoint_truncated(model, tmp_path):
    """Should refuse a checkpoint with a short payload"""
    path = tmp_path / "checkpoint.bin"
    checkpoint_save(path, model, AdamState.zeros(model))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(WeakPosError) as err:
        checkpoint_load(path)
    assert err.value.kind == ErrorKind.SCHEMA_MISMATCH
