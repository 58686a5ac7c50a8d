"""Stochastic simplex policies and the quantile-weighted policy-gradient update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError, ShapeError
from .mathcore import (Dirichlet, GaussianSoftmax, MlpParams, init_mlp, l2_penalty,
                       mlp_backward, mlp_forward, mlp_forward_cache, sigmoid, softplus)

HEADS = ("gaussian", "dirichlet")
SIGNALS = ("weighted_td", "quantile_score")
DIRICHLET_BIAS = 0.05


@dataclass
class ActorParams:
    net: MlpParams
    head: str = "gaussian"
    sigma: float = 0.5
    entropy_coef: float = 0.0
    conc_bias: float = DIRICHLET_BIAS

    def __post_init__(self):
        if self.head not in HEADS:
            raise DomainError(f"unknown policy head {self.head!r}")
        if self.head == "gaussian" and not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if self.conc_bias <= 0:
            raise DomainError("concentration bias must be positive")

    @property
    def n_weights(self) -> int:
        return self.net.n_out

    def copy(self) -> "ActorParams":
        return ActorParams(self.net.copy(), self.head, self.sigma, self.entropy_coef, self.conc_bias)


def init_actor(n_features, n_weights, rng, head="gaussian", hidden=(16, 16), l2=1e-4,
               sigma=0.5, entropy_coef=0.0) -> ActorParams:
    net = init_mlp([n_features, *hidden, n_weights], rng, l2)
    return ActorParams(net, head, sigma, entropy_coef)


def _head_outputs(params: ActorParams, out):
    if not np.all(np.isfinite(out)):
        bad = int(np.sum(~np.isfinite(out)))
        raise NumericalError(f"policy head produced {bad} non-finite outputs "
                             f"(max |param| = {np.max(np.abs(params.net.flat())):.3g})")
    if params.head == "gaussian":
        return GaussianSoftmax(out, params.sigma)
    return Dirichlet(softplus(out) + params.conc_bias)


def distribution(params: ActorParams, features):
    return _head_outputs(params, mlp_forward(params.net, features))


def act(params: ActorParams, features, rng):
    """Sample an action per row.

    Returns ``(weights, action, log_prob, entropy)`` where ``action`` is what
    the density is defined on (raw logits or simplex weights).
    """
    dist = distribution(params, features)
    if params.head == "gaussian":
        raw, w, logp = dist.sample(rng)
        return w, raw, logp, dist.entropy()
    w, logp = dist.sample(rng)
    return w, w, logp, dist.entropy()


def mean_action(params: ActorParams, features) -> np.ndarray:
    """Deterministic evaluation action: the distribution's mean weights."""
    return distribution(params, features).mean_weights()


def quantile_weight(delta, tau):
    """``tau`` for nonnegative errors, ``1 - tau`` for negative ones."""
    return np.where(np.asarray(delta) >= 0.0, tau, 1.0 - tau)


def policy_signal(delta, tau, signal="weighted_td"):
    """Per-sample multiplier of the score function.

    ``weighted_td``: asymmetric-weighted TD error.  ``quantile_score``:
    ``tau - 1{delta < 0}``, the score of the quantile itself.
    """
    delta = np.asarray(delta, dtype=float)
    if signal == "weighted_td":
        return quantile_weight(delta, tau) * delta
    if signal == "quantile_score":
        return tau - (delta < 0.0)
    raise DomainError(f"unknown actor signal {signal!r}")


def actor_loss(log_prob, delta, tau, entropy=0.0, entropy_coef=0.0, q=None,
               signal="weighted_td", literal_sign=False):
    """Surrogate ``-mean_q[psi * log_prob + entropy_coef * entropy]`` with ``psi`` held constant.

    Minimising it raises the probability of actions with positive ``psi``.
    ``literal_sign`` flips the score term (descent on ``+psi * log_prob``).
    Returns ``(loss, per-sample coefficient on log_prob)``.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError("tau must lie in (0, 1)")
    log_prob = np.atleast_1d(np.asarray(log_prob, dtype=float))
    psi = np.atleast_1d(policy_signal(delta, tau, signal))
    q = np.ones_like(log_prob) if q is None else np.asarray(q, dtype=float)
    wts = q / q.sum()
    sign = 1.0 if literal_sign else -1.0
    coef = sign * wts * psi
    loss = float(np.sum(coef * log_prob) - entropy_coef * np.sum(wts * np.broadcast_to(entropy, log_prob.shape)))
    return loss, coef


def actor_gradients(params: ActorParams, features, action, delta, tau, q=None,
                    signal="weighted_td", literal_sign=False):
    """Surrogate loss and its gradients (aligned with ``params.net.arrays()``)."""
    out, cache = mlp_forward_cache(params.net, features)
    dist = _head_outputs(params, out)
    if np.shape(action) != out.shape:
        raise ShapeError(f"action shape {np.shape(action)} != head shape {out.shape}")
    logp = dist.log_prob(action)
    ent = dist.entropy()
    loss, coef = actor_loss(logp, delta, tau, ent, params.entropy_coef, q, signal, literal_sign)
    wts = (np.ones(len(logp)) if q is None else np.asarray(q, dtype=float))
    wts = wts / wts.sum()
    if params.head == "gaussian":
        # entropy does not depend on the mean
        d_out = coef[:, None] * dist.score(action)
    else:
        dconc = sigmoid(out)
        d_out = coef[:, None] * dist.score(action) * dconc
        if params.entropy_coef:
            d_out -= params.entropy_coef * wts[:, None] * dist.entropy_grad() * dconc
    grads = mlp_backward(params.net, cache, d_out)
    return loss + l2_penalty(params.net), grads
