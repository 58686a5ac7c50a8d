"""Multi-head quantile critic trained with pinball loss and an order penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBatchError, DomainError, ShapeError
from .mathcore import (MlpParams, init_mlp, l2_penalty, mlp_backward, mlp_forward,
                       mlp_forward_cache, pinball_grad, pinball_loss)
from .quantile_dp import QuantileGrid


@dataclass
class TransitionBatch:
    """Stacked transitions.  ``action`` is what the policy density is evaluated on
    (raw logits for the Gaussian head, weights for the Dirichlet head)."""

    features: np.ndarray
    action: np.ndarray
    weights: np.ndarray
    log_prob: np.ndarray
    reward: np.ndarray
    next_features: np.ndarray
    done: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        n = self.features.shape[0]
        for name in ("action", "weights", "log_prob", "reward", "next_features", "done", "q"):
            if getattr(self, name).shape[0] != n:
                raise ShapeError(f"batch field {name!r} has the wrong length")

    def __len__(self):
        return self.features.shape[0]

    @classmethod
    def concat(cls, parts) -> "TransitionBatch":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("features", "action", "weights", "log_prob", "reward",
                               "next_features", "done", "q")))

    def subset(self, idx) -> "TransitionBatch":
        return TransitionBatch(self.features[idx], self.action[idx], self.weights[idx],
                               self.log_prob[idx], self.reward[idx], self.next_features[idx],
                               self.done[idx], self.q[idx])


@dataclass
class CriticParams:
    online: MlpParams
    target: MlpParams
    grid: QuantileGrid
    order_penalty: float = 5.0
    rho: float = 0.01

    def __post_init__(self):
        if self.online.sizes != self.target.sizes:
            raise ShapeError("online and target critics must share a shape")
        if self.online.n_out != len(self.grid):
            raise ShapeError(f"critic has {self.online.n_out} heads for {len(self.grid)} levels")
        if not 0.0 < self.rho <= 1.0:
            raise DomainError("rho must lie in (0, 1]")
        if self.order_penalty < 0:
            raise DomainError("order penalty must be >= 0")

    def copy(self) -> "CriticParams":
        return CriticParams(self.online.copy(), self.target.copy(), self.grid,
                            self.order_penalty, self.rho)


def init_critic(n_features, grid: QuantileGrid, rng, hidden=(16, 16), l2=1e-4,
                order_penalty=5.0, rho=0.01) -> CriticParams:
    online = init_mlp([n_features, *hidden, len(grid)], rng, l2)
    return CriticParams(online, online.copy(), grid, order_penalty, rho)


def value_vector(params: CriticParams, features) -> np.ndarray:
    """One value per quantile level (rows for a batch of states)."""
    return mlp_forward(params.online, features)


def td_errors(batch: TransitionBatch, params: CriticParams, beta: float,
              td_scale: float = 1.0) -> np.ndarray:
    """(B, p) errors ``scale * (r + beta * V_target(s') - V_online(s))``; no bootstrap at episode ends."""
    v = mlp_forward(params.online, batch.features)
    v_next = mlp_forward(params.target, batch.next_features)
    boot = np.where(np.asarray(batch.done, dtype=bool)[:, None], 0.0, beta * v_next)
    return td_scale * (batch.reward[:, None] + boot - v)


def order_violations(values) -> np.ndarray:
    """``relu(V_j - V_{j+1})`` for adjacent heads."""
    v = np.atleast_2d(values)
    return np.clip(v[:, :-1] - v[:, 1:], 0.0, None)


def _normalised_weights(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    total = q.sum()
    if not total > 0:
        raise DegenerateBatchError("sample weights sum to zero")
    return q / total


def critic_loss(batch: TransitionBatch, params: CriticParams, beta: float,
                td_scale: float = 1.0):
    """q-weighted mean of per-sample pinball + order-penalty loss, and its gradients.

    The target network is held constant.  Gradients are aligned with
    ``params.online.arrays()`` and include the L2 term, which is also added
    to the returned loss.
    """
    wts = _normalised_weights(batch.q)
    tau = params.grid.as_array()
    v, cache = mlp_forward_cache(params.online, batch.features)
    v_next = mlp_forward(params.target, batch.next_features)
    boot = np.where(np.asarray(batch.done, dtype=bool)[:, None], 0.0, beta * v_next)
    delta = td_scale * (batch.reward[:, None] + boot - v)

    per_sample = pinball_loss(delta, tau).sum(axis=1)
    gap = v[:, :-1] - v[:, 1:]
    per_sample = per_sample + params.order_penalty * np.clip(gap, 0.0, None).sum(axis=1)
    loss = float(wts @ per_sample) + l2_penalty(params.online)

    # d loss / d V(s): pinball through delta = ... - scale * V(s), plus the hinge
    dv = -td_scale * pinball_grad(delta, tau)
    active = (gap > 0).astype(float) * params.order_penalty
    dv[:, :-1] += active
    dv[:, 1:] -= active
    grads = mlp_backward(params.online, cache, wts[:, None] * dv)
    return loss, grads


def soft_update(params: CriticParams) -> None:
    """Move the target network toward the online one by ``rho`` (in place)."""
    rho = params.rho
    for tgt, src in zip(params.target.arrays(), params.online.arrays()):
        tgt *= 1.0 - rho
        tgt += rho * src
