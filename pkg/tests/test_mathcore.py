from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from qprl.errors import DomainError
from qprl.mathcore import (Adam, Dirichlet, GaussianSoftmax, GradientDescent, MlpParams,
                           PolynomialDecay, init_mlp, l2_penalty, make_optimizer, make_rng,
                           mlp_backward, mlp_forward, mlp_forward_cache, normal_cdf,
                           normal_quantile, pinball_grad, pinball_loss, sigmoid, softmax, softplus)

finite = st.floats(-50, 50, allow_nan=False)
levels = st.floats(0.01, 0.99)


def test_make_rng_reproducible():
    a = make_rng(3).normal(size=5)
    b = make_rng(3).normal(size=5)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("p", [1e-10, 1e-4, 0.01, 0.02425, 0.1, 0.5, 0.77, 0.975, 0.9999])
def test_normal_quantile_matches_scipy(p):
    assert normal_quantile(p) == pytest.approx(stats.norm.ppf(p), abs=1e-12, rel=1e-12)


def test_normal_quantile_location_scale():
    assert normal_quantile(0.1, 1.1, 0.051) == pytest.approx(1.1 + 0.051 * stats.norm.ppf(0.1))


@given(st.floats(-8, 8))
def test_normal_cdf_inverts_quantile(x):
    p = float(normal_cdf(x))
    # the upper tail loses digits to rounding of 1 - p
    if 1e-300 < p < 1 - 1e-8:
        assert normal_quantile(p) == pytest.approx(x, abs=1e-8)


def test_pinball_values():
    assert pinball_loss(2.0, 0.1) == pytest.approx(0.2)
    assert pinball_loss(-2.0, 0.1) == pytest.approx(1.8)
    assert pinball_loss(0.0, 0.3) == 0.0


def test_pinball_grad_at_zero_takes_upper_branch():
    assert float(pinball_grad(0.0, 0.25)) == 0.25
    assert float(pinball_grad(-1e-9, 0.25)) == pytest.approx(-0.75)


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.2, float("nan")])
def test_pinball_rejects_bad_level(tau):
    with pytest.raises(DomainError):
        pinball_loss(1.0, tau)


@given(finite, levels)
def test_pinball_nonnegative_and_grad_is_slope(d, tau):
    assert pinball_loss(d, tau) >= 0
    if abs(d) > 1e-3:
        h = 1e-6
        fd = (pinball_loss(d + h, tau) - pinball_loss(d - h, tau)) / (2 * h)
        assert float(pinball_grad(d, tau)) == pytest.approx(fd, abs=1e-6)


@given(st.lists(finite, min_size=5, max_size=60), levels)
@settings(max_examples=50)
def test_pinball_minimiser_is_a_sample_quantile(xs, tau):
    # the empirical mean pinball loss is minimised at the left-continuous sample quantile
    x = np.sort(np.array(xs))
    k = math.ceil(tau * len(x) - 1e-12) - 1
    q = x[max(k, 0)]
    best = np.mean(pinball_loss(x - q, tau))
    for c in np.linspace(x[0] - 1, x[-1] + 1, 101):
        assert np.mean(pinball_loss(x - c, tau)) >= best - 1e-9


@given(st.lists(finite, min_size=1, max_size=8))
def test_softmax_is_on_simplex_and_shift_invariant(xs):
    x = np.array(xs)
    w = softmax(x)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)
    assert np.allclose(softmax(x + 7.5), w)


def test_softmax_extreme_inputs_stay_finite():
    w = softmax(np.array([1e4, -1e4, 0.0]))
    assert np.all(np.isfinite(w)) and w[0] == pytest.approx(1.0)


def test_softplus_and_sigmoid():
    x = np.array([-800.0, -1.0, 0.0, 2.0, 800.0])
    assert np.allclose(softplus(x), np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x))), rtol=1e-12)
    assert np.allclose(sigmoid(x), special.expit(x))
    h = 1e-6
    assert np.allclose((softplus(x + h) - softplus(x - h)) / (2 * h), sigmoid(x), atol=1e-6)


# ---------------------------------------------------------------------------
# network

def test_init_shapes_and_zero_init():
    p = init_mlp([4, 16, 16, 3], make_rng(0), l2=1e-4)
    assert p.sizes == [4, 16, 16, 3]
    assert [w.shape for w in p.weights] == [(4, 16), (16, 16), (16, 3)]
    z = init_mlp([4, 8, 2], make_rng(0), zero=True)
    assert np.all(mlp_forward(z, np.ones((3, 4))) == 0)


def test_flat_roundtrip():
    p = init_mlp([3, 5, 2], make_rng(1))
    q = p.with_flat(p.flat())
    assert np.array_equal(q.flat(), p.flat())
    assert q.flat().size == 3 * 5 + 5 + 5 * 2 + 2


def test_forward_single_row_and_batch_agree():
    p = init_mlp([3, 6, 2], make_rng(2))
    x = make_rng(3).normal(size=(4, 3))
    assert np.allclose(mlp_forward(p, x)[1], mlp_forward(p, x[1]))


def test_leaky_relu_hidden_layer_by_hand():
    w1 = np.array([[1.0, -1.0]])
    w2 = np.array([[2.0], [3.0]])
    p = MlpParams([w1, w2], [np.zeros(2), np.array([0.5])], ["leaky_relu", "linear"])
    # hidden = (2, leaky(-2) = -0.02); out = 4 - 0.06 + 0.5
    assert float(mlp_forward(p, np.array([[2.0]]))[0, 0]) == pytest.approx(4.44)


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_central_differences(seed):
    rng = make_rng(seed)
    p = init_mlp([3, 7, 5, 2], rng, l2=1e-3)
    x = rng.normal(size=(6, 3))
    up = rng.normal(size=(6, 2))

    def f(vec):
        q = p.with_flat(vec)
        return float(np.sum(up * mlp_forward(q, x))) + l2_penalty(q)

    _, cache = mlp_forward_cache(p, x)
    grads = np.concatenate([g.ravel() for g in mlp_backward(p, cache, up)])
    v = p.flat()
    h = 1e-6
    fd = np.array([(f(v + h * e) - f(v - h * e)) / (2 * h) for e in np.eye(v.size)])
    assert np.allclose(grads, fd, rtol=1e-5, atol=1e-7)


def test_l2_penalty_counts_weights_only():
    p = init_mlp([2, 3, 1], make_rng(0), l2=0.5)
    expected = 0.5 * sum(float(np.sum(w * w)) for w in p.weights)
    assert l2_penalty(p) == pytest.approx(expected)


# ---------------------------------------------------------------------------
# optimisation

def test_polynomial_decay_endpoints():
    s = PolynomialDecay(0.01, 0.001, 1.5, 100)
    assert s(0) == pytest.approx(0.01)
    assert s(100) == pytest.approx(0.001)
    assert s(500) == pytest.approx(0.001)
    assert s(50) == pytest.approx(0.001 + 0.009 * 0.5 ** 1.5)


def test_gradient_descent_step_and_clip():
    p = MlpParams([np.array([[1.0]])], [np.array([0.0])], ["linear"])
    opt = GradientDescent(PolynomialDecay(0.1, 0.1, 1.0, 10), clip_norm=1.0)
    opt.step(p, [np.array([[3.0]]), np.array([4.0])])  # norm 5, clipped to 1
    assert p.weights[0][0, 0] == pytest.approx(1.0 - 0.1 * 3.0 / 5.0)
    assert p.biases[0][0] == pytest.approx(-0.1 * 4.0 / 5.0)
    assert opt.step_count == 1


def test_adam_first_step_moves_by_lr():
    p = MlpParams([np.array([[1.0]])], [np.array([0.0])], ["linear"])
    opt = Adam(PolynomialDecay(0.01, 0.01, 1.0, 10))
    opt.step(p, [np.array([[2.0]]), np.array([-0.5])])
    assert p.weights[0][0, 0] == pytest.approx(1.0 - 0.01, rel=1e-6)
    assert p.biases[0][0] == pytest.approx(0.01, rel=1e-6)


def test_make_optimizer_rejects_unknown():
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", PolynomialDecay(0.1, 0.1))


def test_descent_decreases_quadratic():
    rng = make_rng(0)
    p = init_mlp([2, 1], rng)
    x = rng.normal(size=(50, 2))
    y = x @ np.array([[1.5], [-0.5]])
    opt = GradientDescent(PolynomialDecay(0.1, 0.1, 1.0, 1))
    losses = []
    for _ in range(200):
        out, cache = mlp_forward_cache(p, x)
        losses.append(float(np.mean((out - y) ** 2)))
        opt.step(p, mlp_backward(p, cache, 2 * (out - y) / len(x)))
    assert losses[-1] < 1e-4 < losses[0]


# ---------------------------------------------------------------------------
# policy distributions

def test_gaussian_softmax_density_and_score():
    mean = np.array([[0.2, -0.1, 0.4]])
    d = GaussianSoftmax(mean, 0.5)
    raw = np.array([[0.0, 0.3, 0.1]])
    assert float(d.log_prob(raw)[0]) == pytest.approx(
        stats.multivariate_normal(mean[0], 0.25 * np.eye(3)).logpdf(raw[0]))
    h = 1e-6
    fd = [(GaussianSoftmax(mean + h * e, 0.5).log_prob(raw) -
           GaussianSoftmax(mean - h * e, 0.5).log_prob(raw))[0] / (2 * h) for e in np.eye(3)]
    assert np.allclose(d.score(raw)[0], fd, atol=1e-6)
    assert float(d.entropy()[0]) == pytest.approx(
        stats.multivariate_normal(mean[0], 0.25 * np.eye(3)).entropy())


def test_gaussian_sample_is_on_simplex():
    raw, w, logp = GaussianSoftmax(np.zeros((100, 4)), 1.0).sample(make_rng(0))
    assert np.allclose(w.sum(axis=1), 1.0) and np.all(w > 0)
    assert np.allclose(w, softmax(raw))
    assert logp.shape == (100,)


def test_dirichlet_matches_scipy():
    a = np.array([[0.7, 2.0, 3.5]])
    w = np.array([[0.2, 0.3, 0.5]])
    d = Dirichlet(a)
    ref = stats.dirichlet(a[0])
    assert float(d.log_prob(w)[0]) == pytest.approx(ref.logpdf(w[0]))
    assert float(d.entropy()[0]) == pytest.approx(ref.entropy())
    assert np.allclose(d.mean_weights(), ref.mean())


def test_dirichlet_score_and_entropy_grad_by_differences():
    a = np.array([[0.7, 2.0, 3.5]])
    w = np.array([[0.2, 0.3, 0.5]])
    h = 1e-6
    fd_s = [(Dirichlet(a + h * e).log_prob(w) - Dirichlet(a - h * e).log_prob(w))[0] / (2 * h)
            for e in np.eye(3)]
    fd_h = [(Dirichlet(a + h * e).entropy() - Dirichlet(a - h * e).entropy())[0] / (2 * h)
            for e in np.eye(3)]
    d = Dirichlet(a)
    assert np.allclose(d.score(w)[0], fd_s, atol=1e-6)
    assert np.allclose(d.entropy_grad()[0], fd_h, atol=1e-6)


def test_dirichlet_samples_inside_simplex_and_mean():
    w, logp = Dirichlet(np.tile([0.05, 0.05, 0.05], (2000, 1))).sample(make_rng(1))
    assert np.all(w > 0) and np.allclose(w.sum(axis=1), 1.0)
    assert np.all(np.isfinite(logp))
    w, _ = Dirichlet(np.tile([2.0, 3.0, 5.0], (20000, 1))).sample(make_rng(2))
    assert np.allclose(w.mean(axis=0), [0.2, 0.3, 0.5], atol=0.01)


def test_dirichlet_rejects_nonpositive():
    with pytest.raises(DomainError):
        Dirichlet(np.array([1.0, 0.0]))
