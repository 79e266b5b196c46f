import numpy as np
import pytest

from svbf.autodiff import Tensor
from svbf.optim import OptimState, adam_step, lr_schedule
from svbf.params import ParamStore


def make_store(value):
    store = ParamStore(rng_seed=0, dtype=np.float64)
    store.create("p", np.asarray(value, dtype=np.float64))
    return store


def test_first_step_matches_bias_corrected_update():
    store = make_store([0.0])
    state = OptimState(base_lr=5e-4)
    adam_step(store, {"p": Tensor(np.array([2.0]))}, state)
    # first step: m_hat = g, v_hat = g^2 -> delta = -lr * g / (|g| + eps)
    expected = -5e-4 * (2.0 / (2.0 + 1e-8))
    np.testing.assert_allclose(store["p"].data, [expected], rtol=1e-12)
    assert state.step == 1


def test_zero_gradient_changes_nothing_but_step():
    store = make_store([1.5, -2.0])
    state = OptimState()
    adam_step(store, {"p": Tensor(np.zeros(2))}, state)
    np.testing.assert_array_equal(store["p"].data, [1.5, -2.0])
    np.testing.assert_array_equal(state.m["p"], np.zeros(2))
    np.testing.assert_array_equal(state.v["p"], np.zeros(2))
    assert state.step == 1


def test_beta1_zero_reduces_to_sign_sgd():
    store = make_store([0.0])
    state = OptimState(base_lr=1e-3, beta1=0.0)
    g = Tensor(np.array([0.37]))
    adam_step(store, {"p": g}, state)
    first = store["p"].data.copy()
    adam_step(store, {"p": g}, state)
    delta2 = store["p"].data - first
    np.testing.assert_allclose(first, [-1e-3], rtol=1e-6)
    np.testing.assert_allclose(delta2, [-1e-3], rtol=1e-6)


def test_lr_zero_is_identity_on_params():
    store = make_store([1.0, 2.0, 3.0])
    state = OptimState(base_lr=0.0)
    adam_step(store, {"p": Tensor(np.array([0.3, -0.7, 10.0]))}, state)
    np.testing.assert_array_equal(store["p"].data, [1.0, 2.0, 3.0])


def test_shape_mismatch_raises():
    store = make_store([1.0, 2.0])
    with pytest.raises(ValueError, match="shape"):
        adam_step(store, {"p": Tensor(np.zeros(3))}, OptimState())


def test_missing_gradient_raises():
    store = make_store([1.0])
    with pytest.raises(KeyError):
        adam_step(store, {}, OptimState())


def test_lr_schedule_floor_semantics():
    state = OptimState(base_lr=5e-4, decay_rate=0.97, decay_every=2000)
    assert lr_schedule(0, state) == 5e-4
    assert lr_schedule(1999, state) == 5e-4
    np.testing.assert_allclose(lr_schedule(2000, state), 4.85e-4, rtol=1e-12)
    np.testing.assert_allclose(lr_schedule(4000, state), 5e-4 * 0.97**2, rtol=1e-12)
    with pytest.raises(ValueError):
        lr_schedule(-1, state)


def test_grad_clip_caps_global_norm():
    store = ParamStore(rng_seed=0, dtype=np.float64)
    store.create("a", np.zeros(2))
    store.create("b", np.zeros(1))
    state = OptimState(base_lr=1.0, grad_clip=1.0, beta1=0.0, beta2=0.0)
    grads = {"a": Tensor(np.array([3.0, 0.0])), "b": Tensor(np.array([4.0]))}
    adam_step(store, grads, state)
    # norm 5 -> scale 0.2; with beta1=beta2=0 the update is sign-like
    ratio = store["a"].data[0] / store["b"].data[0]
    np.testing.assert_allclose(ratio, (3.0 * 0.2 / (0.6 + 1e-8)) / (4.0 * 0.2 / (0.8 + 1e-8)), rtol=1e-9)
