import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wganlab import net as nn
from wganlab import optim


def scalar_adam(grads, lr, b1, b2, eps=1e-8, theta=0.0):
    """Plain-float Adam used as an oracle."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_two_scalar_steps_match_oracle():
    state = optim.AdamState.for_params([np.zeros(1)], 0.1, beta1=0.5, beta2=0.9)
    p = [np.zeros(1)]
    for g in (1.0, -1.0):
        p = optim.adam_update(state, p, [np.array([g])])
    assert state.t == 2
    assert abs(p[0][0] - scalar_adam([1.0, -1.0], 0.1, 0.5, 0.9)) < 1e-12


def test_zero_gradient_leaves_params():
    net = nn.glorot_init(nn.NetworkSpec(3, 2, 3, 4))
    state = optim.AdamState.for_network(net, 1e-3)
    out = net
    for _ in range(5):
        out = optim.adam_step(state, out, nn.GradientSet.zeros_like(net))
    assert out == net
    assert state.t == 5


@given(st.lists(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-3), min_size=1, max_size=6),
       st.floats(1e-4, 1.0))
@settings(max_examples=50, deadline=None)
def test_first_step_moves_by_lr_sign(gs, lr):
    g = np.array(gs)
    state = optim.AdamState.for_params([np.zeros_like(g)], lr)
    new = optim.adam_update(state, [np.zeros_like(g)], [g])[0]
    dev = np.abs(new + lr * np.sign(g))
    # exact first-step deviation is lr * eps / (|g| + eps), below eps * lr once |g| >= 1
    np.testing.assert_allclose(dev, lr * state.eps / (np.abs(g) + state.eps), rtol=1e-6, atol=4 * np.finfo(float).eps * lr)
    big = np.abs(g) >= 1.0
    assert np.all(dev[big] < state.eps * lr)


@given(st.integers(0, 2**31), st.floats(1e-4, 1.0))
@settings(max_examples=30, deadline=None)
def test_update_magnitude_bound(seed, lr):
    rng = np.random.default_rng(seed)
    state = optim.AdamState.for_params([np.zeros(5)], lr)
    p = [np.zeros(5)]
    for _ in range(20):
        g = rng.standard_normal(5) * 10.0 ** rng.uniform(-3, 3)
        new = optim.adam_update(state, p, [g])
        assert np.all(np.abs(new[0] - p[0]) <= lr / (1 - state.beta1) * (1 + 1e-12))
        p = new


def test_non_finite_gradient_rejected_without_change():
    state = optim.AdamState.for_params([np.zeros(2)], 0.1)
    with pytest.raises(optim.NonFiniteGradient):
        optim.adam_update(state, [np.zeros(2)], [np.array([1.0, np.nan])])
    assert state.t == 0 and not np.any(state.m[0])


def test_shape_mismatch():
    state = optim.AdamState.for_params([np.zeros(2)], 0.1)
    with pytest.raises(nn.ShapeError):
        optim.adam_update(state, [np.zeros(2)], [np.zeros(3)])


def test_deterministic_updates():
    g = [np.array([0.3, -2.0])]
    a = optim.AdamState.for_params([np.zeros(2)], 0.01)
    b = optim.AdamState.for_params([np.zeros(2)], 0.01)
    assert np.array_equal(optim.adam_update(a, [np.ones(2)], g)[0], optim.adam_update(b, [np.ones(2)], g)[0])


def test_presets():
    assert optim.SYNTHETIC_BETAS == (0.5, 0.9)
    assert optim.CONDITIONAL_BETAS == (0.0, 0.9)


def test_state_round_trip():
    net = nn.glorot_init(nn.NetworkSpec(3, 1, 3, 4))
    state = optim.AdamState.for_network(net, 1e-4, beta1=0.0)
    g = nn.GradientSet([np.ones_like(w) for w in net.weights], [np.ones_like(b) for b in net.biases])
    optim.adam_step(state, net, g)
    blob = optim.dumps(state)
    assert blob[:4] == b"MGO1"
    back = optim.loads(blob)
    assert (back.t, back.learning_rate, back.beta1, back.beta2, back.eps) == (1, 1e-4, 0.0, 0.9, 1e-8)
    for a, b in zip(back.m + back.v, state.m + state.v):
        assert a.shape == b.shape and np.array_equal(a, b)
