"""Numerical primitives: RNG, normal quantiles, pinball loss, small MLPs with
hand-written backprop, a decaying-rate gradient-descent optimizer, and the two
policy distributions used on the portfolio simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, ndtr, polygamma

from .errors import DomainError, ShapeError

Rng = np.random.Generator

LEAKY_SLOPE = 0.01


def make_rng(seed: int) -> Rng:
    """PCG64 generator; the stream for a given seed is platform independent."""
    return np.random.Generator(np.random.PCG64(int(seed)))


# ---------------------------------------------------------------------------
# Normal distribution helpers

# Acklam's rational approximation coefficients
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_cdf(x):
    return ndtr(x)


def _std_normal_ppf(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # one Halley step on Phi(x) - p brings the error to machine precision
    if p < 0.5:
        err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    else:
        err = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_quantile(tau, mu=0.0, sigma=1.0):
    """Return ``mu + sigma * Phi^{-1}(tau)``.

    Works elementwise on arrays. ``tau`` must lie strictly inside (0, 1).
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(~(tau_arr > 0.0)) or np.any(~(tau_arr < 1.0)):
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    if np.any(np.asarray(sigma) < 0):
        raise DomainError("sigma must be nonnegative")
    if tau_arr.ndim == 0:
        z = _std_normal_ppf(float(tau_arr))
    else:
        z = np.vectorize(_std_normal_ppf, otypes=[float])(tau_arr)
    return mu + sigma * z


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Losses and small helpers

def _check_tau(tau):
    t = np.asarray(tau, dtype=float)
    if np.any(~(t > 0.0)) or np.any(~(t < 1.0)):
        raise DomainError(f"tau must lie in (0, 1), got {tau}")


def pinball_loss(delta, tau):
    """Asymmetric absolute loss: ``tau*delta`` above zero, ``(1-tau)*(-delta)`` below."""
    _check_tau(tau)
    delta = np.asarray(delta, dtype=float)
    out = np.where(delta >= 0.0, tau * delta, (tau - 1.0) * delta)
    return float(out) if out.ndim == 0 else out


def pinball_grad(delta, tau):
    """Subgradient of the pinball loss w.r.t. delta; delta == 0 uses the tau branch."""
    delta = np.asarray(delta, dtype=float)
    return np.where(delta >= 0.0, tau, tau - 1.0) + 0.0 * delta


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=float)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Multilayer perceptron

@dataclass
class MlpParams:
    """Dense network ``x -> act(x W1 + b1) -> ... -> x Wn + bn``.

    Weight matrices are stored as (fan_in, fan_out).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    l2: float = 0.0

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeError("weights, biases and activations must have equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[0]} != previous output "
                                 f"{self.weights[i - 1].shape[1]}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "MlpParams":
        vec = np.asarray(vec, dtype=float)
        ws, bs, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[k:k + w.size].reshape(w.shape).copy())
            k += w.size
            bs.append(vec[k:k + b.size].copy())
            k += b.size
        if k != vec.size:
            raise ShapeError(f"flat vector has {vec.size} entries, expected {k}")
        return MlpParams(ws, bs, list(self.activations), self.l2)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         list(self.activations), self.l2)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_mlp(sizes, rng: Rng, l2: float = 0.0, zero=False) -> MlpParams:
    """He-normal hidden layers with leaky-ReLU, Glorot-normal linear output."""
    if len(sizes) < 2:
        raise ShapeError("need at least input and output sizes")
    ws, bs, acts = [], [], []
    n_layers = len(sizes) - 1
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == n_layers - 1
        std = math.sqrt(2.0 / (fi + fo)) if last else math.sqrt(2.0 / fi)
        w = np.zeros((fi, fo)) if zero else rng.normal(0.0, std, size=(fi, fo))
        ws.append(w)
        bs.append(np.zeros(fo))
        acts.append("linear" if last else "leaky_relu")
    return MlpParams(ws, bs, acts, l2)


def _activate(z, kind):
    if kind == "linear":
        return z
    if kind == "leaky_relu":
        return np.where(z > 0.0, z, LEAKY_SLOPE * z)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activate_grad(z, a, kind):
    if kind == "linear":
        return np.ones_like(z)
    if kind == "leaky_relu":
        return np.where(z > 0.0, 1.0, LEAKY_SLOPE)
    if kind == "tanh":
        return 1.0 - a * a
    raise ValueError(f"unknown activation {kind!r}")


def _as_batch(params: MlpParams, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != params.n_in:
        raise ShapeError(f"input shape {x.shape} incompatible with input width {params.n_in}")
    return xb, single


def mlp_forward_cache(params: MlpParams, x):
    """Forward pass returning (output, cache) for a later :func:`mlp_backward`."""
    xb, single = _as_batch(params, x)
    inputs, pre, post = [], [], []
    h = xb
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        z = h @ w + b
        h = _activate(z, act)
        pre.append(z)
        post.append(h)
    return h, (inputs, pre, post, single)


def mlp_forward(params: MlpParams, x):
    """Evaluate the network on one input vector or a (batch, n_in) matrix."""
    out, cache = mlp_forward_cache(params, x)
    return out[0] if cache[3] else out


def mlp_backward(params: MlpParams, cache, upstream, with_l2=True):
    """Reverse pass: gradients of ``sum(output * upstream)`` (+ L2) per parameter.

    Returns a list aligned with :meth:`MlpParams.arrays`.
    """
    inputs, pre, post, single = cache
    g = np.asarray(upstream, dtype=float)
    if single and g.ndim == 1:
        g = g[None, :]
    if g.shape != post[-1].shape:
        raise ShapeError(f"upstream gradient {g.shape} != output {post[-1].shape}")
    grads = [None] * (2 * len(params.weights))
    for i in reversed(range(len(params.weights))):
        g = g * _activate_grad(pre[i], post[i], params.activations[i])
        dw = inputs[i].T @ g
        if with_l2 and params.l2:
            dw = dw + 2.0 * params.l2 * params.weights[i]
        grads[2 * i] = dw
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T
    return grads


def mlp_gradients(params: MlpParams, x, upstream_gradient):
    """Gradients of ``sum(mlp_forward(x) * upstream) + l2 * sum(W**2)``."""
    _, cache = mlp_forward_cache(params, x)
    return mlp_backward(params, cache, upstream_gradient)


def l2_penalty(params: MlpParams) -> float:
    return params.l2 * float(sum(np.sum(w * w) for w in params.weights))


# ---------------------------------------------------------------------------
# Optimizer

@dataclass
class PolynomialDecay:
    """``end + (start - end) * (1 - t/steps)**power``, held at ``end`` afterwards."""

    start: float
    end: float
    power: float = 1.5
    steps: int = 1000

    def __call__(self, t: int) -> float:
        frac = min(max(t, 0), self.steps) / max(self.steps, 1)
        return self.end + (self.start - self.end) * (1.0 - frac) ** self.power


@dataclass
class GradientDescent:
    """Plain gradient descent with a decaying learning rate."""

    schedule: PolynomialDecay
    clip_norm: float | None = None
    step_count: int = 0

    @property
    def lr(self) -> float:
        return self.schedule(self.step_count)

    def step(self, params: MlpParams, grads) -> None:
        lr = self.lr
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.clip_norm:
                lr *= self.clip_norm / norm
        for arr, g in zip(params.arrays(), grads):
            arr -= lr * g
        self.step_count += 1


@dataclass
class Adam:
    """Adam with the same decaying schedule; opt-in alternative to plain descent."""

    schedule: PolynomialDecay
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    step_count: int = 0
    _m: list = field(default_factory=list, repr=False)
    _v: list = field(default_factory=list, repr=False)

    @property
    def lr(self) -> float:
        return self.schedule(self.step_count)

    def step(self, params: MlpParams, grads) -> None:
        if not self._m:
            self._m = [np.zeros_like(g) for g in grads]
            self._v = [np.zeros_like(g) for g in grads]
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        lr = self.lr
        self.step_count += 1
        t = self.step_count
        for arr, g, m, v in zip(params.arrays(), grads, self._m, self._v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            arr -= lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(kind: str, schedule: PolynomialDecay, clip_norm=None):
    if kind == "sgd":
        return GradientDescent(schedule, clip_norm)
    if kind == "adam":
        return Adam(schedule, clip_norm=clip_norm)
    raise ValueError(f"unknown optimizer {kind!r}")


# ---------------------------------------------------------------------------
# Policy distributions on the simplex

@dataclass
class GaussianSoftmax:
    """Gaussian over raw logits; weights are the softmax of the raw draw.

    Densities are taken in raw space (no softmax Jacobian).
    """

    mean: np.ndarray
    sigma: float

    def sample(self, rng: Rng):
        mean = np.asarray(self.mean, dtype=float)
        raw = mean + self.sigma * rng.standard_normal(mean.shape)
        return raw, softmax(raw), self.log_prob(raw)

    def log_prob(self, raw):
        mean = np.asarray(self.mean, dtype=float)
        n = mean.shape[-1]
        d = (np.asarray(raw) - mean) / self.sigma
        return -0.5 * np.sum(d * d, axis=-1) - n * (0.5 * math.log(2 * math.pi) + math.log(self.sigma))

    def score(self, raw):
        """d log_prob / d mean."""
        return (np.asarray(raw) - self.mean) / self.sigma ** 2

    def entropy(self):
        n = np.shape(self.mean)[-1]
        h = 0.5 * n * math.log(2 * math.pi * math.e * self.sigma ** 2)
        lead = np.shape(self.mean)[:-1]
        return np.full(lead, h) if lead else h

    def mean_weights(self):
        return softmax(self.mean)


@dataclass
class Dirichlet:
    concentration: np.ndarray

    def __post_init__(self):
        self.concentration = np.asarray(self.concentration, dtype=float)
        if np.any(~(self.concentration > 0)):
            raise DomainError("Dirichlet concentration must be strictly positive")

    def sample(self, rng: Rng, floor=1e-12):
        a = self.concentration
        g = rng.standard_gamma(a)
        s = g.sum(axis=-1, keepdims=True)
        w = np.where(s > 0, g / np.where(s > 0, s, 1.0), 1.0 / a.shape[-1])
        # keep draws strictly inside the simplex so log densities stay finite
        w = np.maximum(w, floor)
        w = w / w.sum(axis=-1, keepdims=True)
        return w, self.log_prob(w)

    def log_prob(self, w):
        a = self.concentration
        w = np.asarray(w, dtype=float)
        log_b = np.sum(gammaln(a), axis=-1) - gammaln(np.sum(a, axis=-1))
        return np.sum((a - 1.0) * np.log(w), axis=-1) - log_b

    def score(self, w):
        """d log_prob / d concentration."""
        a = self.concentration
        a0 = np.sum(a, axis=-1, keepdims=True)
        return digamma(a0) - digamma(a) + np.log(np.asarray(w, dtype=float))

    def entropy(self):
        a = self.concentration
        k = a.shape[-1]
        a0 = np.sum(a, axis=-1)
        log_b = np.sum(gammaln(a), axis=-1) - gammaln(a0)
        return log_b + (a0 - k) * digamma(a0) - np.sum((a - 1.0) * digamma(a), axis=-1)

    def entropy_grad(self):
        """d entropy / d concentration."""
        a = self.concentration
        k = a.shape[-1]
        a0 = np.sum(a, axis=-1, keepdims=True)
        return (a0 - k) * polygamma(1, a0) - (a - 1.0) * polygamma(1, a)

    def mean_weights(self):
        a = self.concentration
        return a / np.sum(a, axis=-1, keepdims=True)


def gaussian_policy_sample(mean, sigma: float, rng: Rng):
    """Draw raw ~ N(mean, sigma^2 I); return (raw, softmax(raw), log density of raw)."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    return GaussianSoftmax(np.asarray(mean, dtype=float), float(sigma)).sample(rng)


def dirichlet_sample(concentration, rng: Rng):
    """Draw simplex weights from a Dirichlet; return (weights, log density)."""
    return Dirichlet(concentration).sample(rng)


def entropy(distribution) -> float:
    """Closed-form differential entropy of a Gaussian or Dirichlet policy."""
    return distribution.entropy()
