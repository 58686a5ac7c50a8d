"""Exact quantile dynamic programming.

Discrete quantiles use the left-continuous definition ``inf{x : F(x) >= tau}``
with no interpolation.  Bellman operators act on tabular MDPs; the remaining
functions are closed-form and brute-force solvers for small portfolio problems.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, NonConvergenceError, NumericalError
from .mathcore import normal_quantile

# slack on cumulative probabilities so that e.g. 0.1 * 7 still reaches tau = 0.7
CUM_TOL = 1e-12


@dataclass(frozen=True)
class QuantileGrid:
    levels: tuple
    target_index: int

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or lv.size == 0:
            raise DomainError("quantile grid must be a nonempty vector")
        if np.any(lv <= 0) or np.any(lv >= 1) or np.any(np.diff(lv) <= 0):
            raise DomainError("quantile levels must be strictly increasing inside (0, 1)")
        if not 0 <= self.target_index < lv.size:
            raise DomainError("target_index out of range")
        object.__setattr__(self, "levels", tuple(float(x) for x in lv))

    @classmethod
    def regular(cls, p: int, target: float) -> "QuantileGrid":
        """``p`` evenly spaced levels ``1/(p+1) ... p/(p+1)``; target must be on the grid."""
        levels = np.arange(1, p + 1) / (p + 1)
        idx = int(np.argmin(np.abs(levels - target)))
        if abs(levels[idx] - target) > 1e-9:
            raise DomainError(f"target {target} not on a grid of {p} levels")
        return cls(tuple(levels), idx)

    @classmethod
    def with_target(cls, levels, target: float) -> "QuantileGrid":
        lv = np.asarray(levels, dtype=float)
        idx = np.flatnonzero(np.abs(lv - target) < 1e-9)
        if idx.size == 0:
            raise DomainError(f"target {target} not among levels {list(levels)}")
        return cls(tuple(lv), int(idx[0]))

    @property
    def tau(self) -> float:
        return self.levels[self.target_index]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels)

    def __len__(self):
        return len(self.levels)


def discrete_quantile(atoms, probs, tau) -> float:
    """Smallest atom whose cumulative probability reaches ``tau``."""
    atoms = np.asarray(atoms, dtype=float).ravel()
    probs = np.asarray(probs, dtype=float).ravel()
    if atoms.size == 0:
        raise DomainError("empty support")
    if atoms.shape != probs.shape:
        raise DomainError("atoms and probs must have the same length")
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    if abs(probs.sum() - 1.0) > 1e-10 or np.any(probs < 0):
        raise DomainError("probs must be nonnegative and sum to 1")
    order = np.argsort(atoms, kind="stable")
    cum = np.cumsum(probs[order])
    k = int(np.searchsorted(cum, tau - CUM_TOL, side="left"))
    return float(atoms[order][min(k, atoms.size - 1)])


def _row_quantiles(atoms, probs, tau):
    """Row-wise discrete quantile of (n, m) atom/probability matrices."""
    order = np.argsort(atoms, axis=1, kind="stable")
    a = np.take_along_axis(atoms, order, axis=1)
    cum = np.cumsum(np.take_along_axis(probs, order, axis=1), axis=1)
    k = np.argmax(cum >= tau - CUM_TOL, axis=1)
    return a[np.arange(a.shape[0]), k]


@dataclass
class TabularMdp:
    """Finite MDP. ``rewards`` is (S, A) or (S, A, S'); ``transitions`` is (S, A, S')."""

    rewards: np.ndarray
    transitions: np.ndarray
    beta: float

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        P = self.transitions
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DomainError(f"transition tensor must be (S, A, S), got {P.shape}")
        if self.rewards.shape not in (P.shape[:2], P.shape):
            raise DomainError(f"reward shape {self.rewards.shape} incompatible with {P.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise DomainError("each P(.|s,a) must be a probability vector")
        if not np.all(np.isfinite(self.rewards)):
            raise DomainError("rewards must be finite")
        if not 0.0 <= self.beta < 1.0:
            raise DomainError("beta must lie in [0, 1)")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    def reward_tensor(self) -> np.ndarray:
        if self.rewards.ndim == 2:
            return np.broadcast_to(self.rewards[:, :, None], self.transitions.shape)
        return self.rewards


def random_mdp(rng, n_states, n_actions, beta, sparse=True, reward_scale=1.0) -> TabularMdp:
    """Random MDP with (S, A, S') rewards; ``sparse`` zeroes some transitions."""
    P = rng.random((n_states, n_actions, n_states))
    if sparse:
        P *= rng.random(P.shape) < 0.6
        empty = P.sum(axis=2) == 0
        P[empty, 0] = 1.0
    P /= P.sum(axis=2, keepdims=True)
    R = reward_scale * rng.normal(size=(n_states, n_actions, n_states))
    return TabularMdp(R, P, beta)


def _policy_matrix(mdp: TabularMdp, policy):
    pol = np.asarray(policy)
    if pol.ndim == 1:
        out = np.zeros((mdp.n_states, mdp.n_actions))
        out[np.arange(mdp.n_states), pol.astype(int)] = 1.0
        return out
    if pol.shape != (mdp.n_states, mdp.n_actions):
        raise DomainError("policy must be (S,) actions or (S, A) probabilities")
    return pol.astype(float)


def action_quantiles(mdp: TabularMdp, V, tau) -> np.ndarray:
    """(S, A) matrix of ``Q_tau[r + beta V(s') | s, a]``."""
    S, A = mdp.n_states, mdp.n_actions
    atoms = mdp.reward_tensor() + mdp.beta * np.asarray(V, dtype=float)[None, None, :]
    q = _row_quantiles(atoms.reshape(S * A, S), mdp.transitions.reshape(S * A, S), tau)
    return q.reshape(S, A)


def policy_operator(mdp: TabularMdp, V, policy, tau) -> np.ndarray:
    """``(T_pi V)(s) = Q_tau[r + beta V(s') | s]`` with a ~ pi(.|s), s' ~ P."""
    V = np.asarray(V, dtype=float)
    if not np.all(np.isfinite(V)):
        raise DomainError("V must be finite")
    pi = _policy_matrix(mdp, policy)
    S = mdp.n_states
    atoms = mdp.reward_tensor() + mdp.beta * V[None, None, :]
    weights = pi[:, :, None] * mdp.transitions
    return _row_quantiles(atoms.reshape(S, -1), weights.reshape(S, -1), tau)


def optimality_operator(mdp: TabularMdp, V, tau):
    """Per-state max over actions of the one-step quantile; ties go to the lowest action."""
    q = action_quantiles(mdp, V, tau)
    greedy = np.argmax(q, axis=1)
    return q[np.arange(mdp.n_states), greedy], greedy


@dataclass
class ValueIterationResult:
    values: np.ndarray
    policy: np.ndarray
    residuals: list = field(default_factory=list)

    @property
    def sweeps(self) -> int:
        return len(self.residuals)


def value_iteration(mdp: TabularMdp, tau, tol=1e-10, max_sweeps=10_000, V0=None,
                    policy=None) -> ValueIterationResult:
    """Iterate the optimality operator (or a fixed policy's operator) to a fixed point."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    V = np.zeros(mdp.n_states) if V0 is None else np.asarray(V0, dtype=float).copy()
    residuals = []
    greedy = np.zeros(mdp.n_states, dtype=int)
    for _ in range(max_sweeps):
        if policy is None:
            V_new, greedy = optimality_operator(mdp, V, tau)
        else:
            V_new = policy_operator(mdp, V, policy, tau)
        res = float(np.max(np.abs(V_new - V)))
        residuals.append(res)
        V = V_new
        if res < tol:
            if policy is None:
                _, greedy = optimality_operator(mdp, V, tau)
            return ValueIterationResult(V, greedy, residuals)
    raise NonConvergenceError(
        f"value iteration did not reach tol={tol} in {max_sweeps} sweeps "
        f"(last residual {residuals[-1]:.3e})", residuals)


def enumerate_policies(mdp: TabularMdp, tau, tol=1e-12):
    """Brute force: evaluate every deterministic stationary policy; return per-state max."""
    best = np.full(mdp.n_states, -np.inf)
    for pol in product(range(mdp.n_actions), repeat=mdp.n_states):
        v = value_iteration(mdp, tau, tol=tol, policy=np.array(pol)).values
        best = np.maximum(best, v)
    return best


# ---------------------------------------------------------------------------
# Closed-form portfolio oracles

@dataclass
class CornerRule:
    value: float
    alpha: np.ndarray          # 1.0 / 0.0 per period, nan where indifferent
    indifferent: np.ndarray    # True where any alpha in [0, 1] is optimal


def corner_rule_value(return_quantiles, R_f, beta, W_t, t=0) -> CornerRule:
    """Value ``beta^(T-t) W_t prod_k max(Q_tau[R_k], R_f)`` and the all-or-nothing rule.

    ``return_quantiles`` holds ``Q_tau[R_1] ... Q_tau[R_T]``; periods ``t+1..T`` are used.
    """
    q = np.asarray(return_quantiles, dtype=float)[t:]
    T_left = q.size
    m = np.maximum(q, R_f)
    value = beta ** T_left * W_t * float(np.prod(m))
    indiff = q == R_f
    alpha = np.where(q > R_f, 1.0, 0.0)
    alpha[indiff] = np.nan
    return CornerRule(value, alpha, indiff)


@dataclass
class TwoPeriodRegimeModel:
    R_f: float = 1.04
    mu: float = 1.1
    sigma_L: float = 0.03
    sigma_H: float = 0.051
    p_LL: float = 0.7
    p_HH: float = 0.7
    beta: float = 0.99
    W_0: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.sigma_L < self.sigma_H:
            raise DomainError("need 0 < sigma_L < sigma_H")
        for p in (self.p_LL, self.p_HH):
            if not 0.0 <= p <= 1.0:
                raise DomainError("persistence probabilities must lie in [0, 1]")

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([self.sigma_L, self.sigma_H])

    @property
    def transition(self) -> np.ndarray:
        """Rows/columns ordered (L, H)."""
        return np.array([[self.p_LL, 1.0 - self.p_LL], [1.0 - self.p_HH, self.p_HH]])


REGIMES = ("L", "H")


def mixture_normal_quantile(weights, means, sds, tau, tol=1e-10) -> float:
    """Quantile of a finite normal mixture by bisection on its CDF.

    Components with zero sd are point masses.
    """
    w = np.asarray(weights, dtype=float)
    m = np.asarray(means, dtype=float)
    s = np.asarray(sds, dtype=float)
    keep = w > 0
    w, m, s = w[keep], m[keep], s[keep]
    if np.all(s == 0):
        return discrete_quantile(m, w / w.sum(), tau)
    spread = 12.0 * s.max()
    lo, hi = m.min() - spread, m.max() + spread

    def cdf(y):
        z = np.where(s > 0, (y - m) / np.where(s > 0, s, 1.0), np.where(y >= m, np.inf, -np.inf))
        return float(np.sum(w * ndtr(z)))

    if not (cdf(lo) < tau <= cdf(hi)):
        raise NumericalError("mixture quantile bracket failure")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if cdf(mid) >= tau:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class RegimeSolution:
    tau: float
    alpha_grid: np.ndarray
    alpha0: dict             # regime -> optimal t=0 risky share
    alpha1: dict             # regime -> t=1 corner allocation (nan if indifferent)
    value0: dict             # regime -> optimal t=0 value
    curves0: dict            # regime -> t=0 value over the alpha grid
    curves1: dict            # regime -> t=1 value over the alpha grid (per unit W_1)

    def rows(self):
        out = []
        for z in REGIMES:
            out.append({"tau": self.tau, "regime": z, "period": 0,
                        "alpha_star": self.alpha0[z], "value": self.value0[z]})
            out.append({"tau": self.tau, "regime": z, "period": 1,
                        "alpha_star": self.alpha1[z],
                        "value": float(np.max(self.curves1[z]))})
        return out


def regime_example_solver(model: TwoPeriodRegimeModel, tau: float,
                          alpha_grid_size: int = 1001) -> RegimeSolution:
    """Brute-force the two-period volatility-regime allocation problem.

    At t=1 the corner rule applies per regime.  At t=0 the target is a two
    component normal mixture (one component per next regime) whose quantile is
    found by bisection for each grid allocation.
    """
    if alpha_grid_size < 101:
        raise DomainError("alpha_grid_size must be at least 101")
    grid = np.linspace(0.0, 1.0, alpha_grid_size)
    sig = model.sigmas
    q_next = normal_quantile(tau, model.mu, sig)
    m = np.maximum(q_next, model.R_f)
    P = model.transition
    b2w = model.beta ** 2 * model.W_0

    alpha0, alpha1, value0, curves0, curves1 = {}, {}, {}, {}, {}
    for i, z in enumerate(REGIMES):
        a1 = corner_rule_value([q_next[i]], model.R_f, 1.0, 1.0)
        alpha1[z] = float(a1.alpha[0])
        curves1[z] = model.beta * (grid * q_next[i] + (1 - grid) * model.R_f)

        curve = np.empty_like(grid)
        for g, a in enumerate(grid):
            centre = a * model.mu + (1 - a) * model.R_f
            curve[g] = mixture_normal_quantile(P[i], centre * m, a * sig[i] * m, tau)
        curve *= b2w
        best = int(np.argmax(curve))
        alpha0[z] = float(grid[best])
        value0[z] = float(curve[best])
        curves0[z] = curve
    return RegimeSolution(tau, grid, alpha0, alpha1, value0, curves0, curves1)


@dataclass
class Decision:
    model: str
    parameter: str
    alpha: float


def static_choice_comparator(mu, sigma, R_f, tau_list=(0.1, 0.5, 0.9), cara_a=2.0,
                             mv_gamma=2.0) -> list[Decision]:
    """Optimal risky share under risk-neutral, CARA, mean-variance and quantile preferences
    for a single period with normal returns."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    premium = mu - R_f
    rows = [
        Decision("risk_neutral", "", 1.0 if premium > 0 else 0.0),
        Decision("cara", f"a={cara_a:g}", float(np.clip(premium / (cara_a * sigma ** 2), 0.0, 1.0))),
        Decision("mean_variance", f"gamma={mv_gamma:g}",
                 float(np.clip(premium / (mv_gamma * sigma ** 2), 0.0, 1.0))),
    ]
    for tau in tau_list:
        q = normal_quantile(tau, mu, sigma)
        rows.append(Decision("quantile", f"tau={tau:g}", 1.0 if q > R_f else 0.0))
    return rows


def write_oracle_csv(path, rows) -> None:
    """Write dict rows with at least ``tau, regime, alpha_star, value`` columns."""
    rows = list(rows)
    keys = ["tau", "regime", "alpha_star", "value"]
    extra = [k for r in rows for k in r if k not in keys]
    fieldnames = keys + list(dict.fromkeys(extra))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for r in rows:
            writer.writerow(r)


# ---------------------------------------------------------------------------
# Discretised i.i.d. wealth problem (checks the corner rule through value iteration)

def equiprobable_normal_atoms(n, mu, sigma):
    """``n`` equally likely atoms at the normal quantiles ``(i + 1/2)/n``."""
    levels = (np.arange(n) + 0.5) / n
    return normal_quantile(levels, mu, sigma), np.full(n, 1.0 / n)


@dataclass
class IidWealthProblem:
    mdp: TabularMdp
    alphas: np.ndarray
    horizon: int
    W_0: float

    def to_wealth_value(self, log_value: float) -> float:
        """Map the start-state value back to ``beta^T W_0 prod m``."""
        b = self.mdp.beta
        return b ** self.horizon * self.W_0 * float(np.exp(log_value / b ** (self.horizon - 1)))


def iid_wealth_mdp(return_atoms, return_probs, R_f, beta, n_alpha=11, horizon=2,
                   W_0=1.0) -> IidWealthProblem:
    """Terminal-wealth allocation problem with i.i.d. discrete returns as a tabular MDP.

    Wealth is factored out by homogeneity; period-``t`` rewards are
    ``beta^(T-1-t) * log(gross return)`` so that quantiles of the discounted sum
    are ``beta^(T-1) * log`` of the terminal growth (quantiles commute with the
    monotone ``exp``).  State layout: start, then one state per return outcome
    for every period (the outcome reached selects the reward), the last block
    absorbing with zero reward.
    """
    atoms = np.asarray(return_atoms, dtype=float)
    probs = np.asarray(return_probs, dtype=float)
    alphas = np.linspace(0.0, 1.0, n_alpha)
    n = atoms.size
    n_states = 1 + horizon * n
    P = np.zeros((n_states, n_alpha, n_states))
    R = np.zeros_like(P)
    gross = alphas[:, None] * atoms[None, :] + (1 - alphas[:, None]) * R_f  # (A, n)
    for t in range(horizon):
        sources = [0] if t == 0 else list(range(1 + (t - 1) * n, 1 + t * n))
        targets = np.arange(1 + t * n, 1 + (t + 1) * n)
        scale = beta ** (horizon - 1 - t)
        for s in sources:
            P[s][:, targets] = probs[None, :]
            R[s][:, targets] = scale * np.log(gross)
    last = np.arange(1 + (horizon - 1) * n, n_states)
    P[last, :, last] = 1.0
    return IidWealthProblem(TabularMdp(R, P, beta), alphas, horizon, W_0)
