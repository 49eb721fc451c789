import numpy as np
import pytest

from advpose.autodiff import ParamStore, ShapeMismatch, Tape, backward, mul, parameter
from advpose.optim import AdamState, adam_step

from _oracles import reference_adam


def make_scalar_store(value=1.0):
    store = ParamStore()
    theta = store.add("theta", parameter(value))
    return store, theta


def test_first_step_magnitude():
    # bias-corrected first step is -lr * g / (|g| + eps)
    store, theta = make_scalar_store(0.0)
    state = AdamState.for_store(store, lr=0.1)
    adam_step(store, {theta: np.asarray(1.0)}, state)
    assert abs(theta.item() + 0.1) < 1e-8
    assert state.step == 1


def test_zero_grad_leaves_parameter():
    store, theta = make_scalar_store(3.0)
    state = AdamState.for_store(store, lr=0.1)
    adam_step(store, {theta: np.asarray(0.0)}, state)
    assert theta.item() == 3.0


def test_moments_decay_on_zero_grad():
    store, theta = make_scalar_store(0.0)
    state = AdamState.for_store(store, lr=0.1)
    adam_step(store, {theta: np.asarray(1.0)}, state)
    m_before = float(state.m["theta"])
    adam_step(store, {theta: np.asarray(0.0)}, state)
    assert float(state.m["theta"]) == pytest.approx(0.9 * m_before)
    assert state.step == 2


def test_missing_grads_skipped_but_step_counts():
    store, theta = make_scalar_store(2.0)
    state = AdamState.for_store(store, lr=0.1)
    adam_step(store, {}, state)
    assert theta.item() == 2.0
    assert state.step == 1
    assert float(state.m["theta"]) == 0.0


def test_shape_mismatch():
    store = ParamStore()
    w = store.add("w", parameter(np.zeros((2, 2))))
    state = AdamState.for_store(store, lr=0.1)
    with pytest.raises(ShapeMismatch):
        adam_step(store, {w: np.zeros(3)}, state)


def test_accumulator_shapes_match_parameters():
    store = ParamStore()
    store.add("w", parameter(np.zeros((3, 2))))
    store.add("b", parameter(np.zeros(3)))
    state = AdamState.for_store(store, lr=0.1)
    for name, p in store.items():
        assert state.m[name].shape == p.data.shape
        assert state.v[name].shape == p.data.shape


def test_quadratic_convergence_matches_reference():
    # minimize f(theta) = theta^2 from theta = 1 with lr = 0.1 for 100 steps
    expected = reference_adam(lambda th: 2.0 * th, 1.0, lr=0.1, steps=100)
    store, theta = make_scalar_store(1.0)
    state = AdamState.for_store(store, lr=0.1)
    for _ in range(100):
        with Tape() as tape:
            loss = mul(theta, theta)
        grads = backward(loss, tape)
        adam_step(store, grads, state)
    assert theta.item() == pytest.approx(expected, abs=1e-12)
    assert abs(theta.item()) < 0.05
