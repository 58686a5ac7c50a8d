from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qprl.actor import (ActorParams, act, actor_gradients, actor_loss, init_actor, mean_action,
                        policy_signal, quantile_weight)
from qprl.errors import DomainError, NumericalError, ShapeError
from qprl.mathcore import make_rng


def relative_fd_error(params: ActorParams, x, action, delta, tau, q, signal, eps=1e-6):
    _, grads = actor_gradients(params, x, action, delta, tau, q, signal)
    analytic = np.concatenate([g.ravel() for g in grads])
    flat = params.net.flat()
    numeric = np.empty_like(flat)

    def loss_at(vec):
        p = ActorParams(params.net.with_flat(vec), params.head, params.sigma,
                        params.entropy_coef, params.conc_bias)
        return actor_gradients(p, x, action, delta, tau, q, signal)[0]

    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += eps
        dn[i] -= eps
        numeric[i] = (loss_at(up) - loss_at(dn)) / (2 * eps)
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)


@pytest.mark.parametrize("head,entropy_coef", [("gaussian", 0.0), ("gaussian", 0.1),
                                               ("dirichlet", 0.0), ("dirichlet", 0.05)])
@pytest.mark.parametrize("signal", ["weighted_td", "quantile_score"])
def test_actor_gradient_matches_finite_differences(head, entropy_coef, signal):
    rng = make_rng(0)
    params = init_actor(5, 3, rng, head=head, hidden=(8, 8), l2=1e-3, entropy_coef=entropy_coef)
    x = rng.normal(size=(12, 5))
    _, action, _, _ = act(params, x, rng)
    delta = rng.normal(size=12)
    q = rng.random(12) + 0.5
    assert relative_fd_error(params, x, action, delta, 0.3, q, signal) <= 1e-4


def test_quantile_weight_and_signals():
    d = np.array([-2.0, 0.0, 3.0])
    assert np.allclose(quantile_weight(d, 0.1), [0.9, 0.1, 0.1])
    assert np.allclose(policy_signal(d, 0.1, "weighted_td"), [-1.8, 0.0, 0.3])
    assert np.allclose(policy_signal(d, 0.1, "quantile_score"), [-0.9, 0.1, 0.1])
    with pytest.raises(DomainError):
        policy_signal(d, 0.1, "other")


@given(st.floats(0.01, 0.99), st.floats(-10, 10))
@settings(max_examples=50)
def test_weighted_td_has_the_sign_of_the_error(tau, delta):
    s = float(policy_signal(delta, tau))
    assert np.sign(s) == np.sign(delta)


def test_loss_sign_convention():
    # positive signal: lowering the loss means raising log-probability
    loss, coef = actor_loss(np.array([0.0, 0.0]), np.array([1.0, 1.0]), 0.5)
    assert np.all(coef < 0) and loss == 0.0
    _, flipped = actor_loss(np.array([0.0, 0.0]), np.array([1.0, 1.0]), 0.5, literal_sign=True)
    assert np.allclose(flipped, -coef)
    with pytest.raises(DomainError):
        actor_loss([0.0], [1.0], 1.0)


@pytest.mark.parametrize("head", ["gaussian", "dirichlet"])
def test_gradient_step_raises_probability_of_good_action(head):
    rng = make_rng(1)
    params = init_actor(2, 3, rng, head=head, hidden=(8,), l2=0.0)
    x = np.ones((1, 2))
    _, action, logp0, _ = act(params, x, rng)
    _, grads = actor_gradients(params, x, action, np.array([1.0]), 0.5)
    new = ActorParams(params.net.with_flat(params.net.flat() - 1e-3 * np.concatenate(
        [g.ravel() for g in grads])), head, params.sigma)
    from qprl.actor import distribution
    assert distribution(new, x).log_prob(action)[0] > logp0[0]


@pytest.mark.parametrize("head", ["gaussian", "dirichlet"])
def test_sampled_actions_are_on_the_simplex(head):
    rng = make_rng(2)
    params = init_actor(3, 4, rng, head=head)
    w, action, logp, ent = act(params, rng.normal(size=(50, 3)), rng)
    assert np.allclose(w.sum(axis=1), 1.0) and np.all(w >= 0)
    assert logp.shape == (50,) and np.all(np.isfinite(logp))
    m = mean_action(params, rng.normal(size=(5, 3)))
    assert np.allclose(m.sum(axis=1), 1.0)


def test_errors():
    rng = make_rng(0)
    params = init_actor(2, 3, rng)
    with pytest.raises(ShapeError):
        actor_gradients(params, np.ones((2, 2)), np.ones((2, 2)), np.ones(2), 0.5)
    bad = ActorParams(params.net.with_flat(np.full(params.net.flat().size, np.nan)))
    with pytest.raises(NumericalError):
        mean_action(bad, np.ones((1, 2)))
    with pytest.raises(DomainError):
        ActorParams(params.net, head="beta")
    with pytest.raises(DomainError):
        ActorParams(params.net, sigma=0.0)
