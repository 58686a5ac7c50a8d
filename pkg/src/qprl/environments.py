"""Market environments.

All environments are batched: a state carries a leading path axis so that a
whole set of independent paths advances in one call.  Actions are weight
vectors on the simplex, one row per path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, DomainError
from .quantile_dp import TwoPeriodRegimeModel

SIMPLEX_TOL = 1e-9

# input scaling for the historical environment's portfolio features
WEALTH_SCALE = 0.0005
SHARES_SCALE = 0.01
BALANCE_SCALE = 10.0


@dataclass
class MarketState:
    """Batched market state; fields an environment does not use stay ``None``."""

    step: int
    wealth: np.ndarray
    regime: np.ndarray | None = None
    shares: np.ndarray | None = None
    balance: np.ndarray | None = None
    exogenous: np.ndarray | None = None
    prev_weights: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.wealth.shape[0]


@dataclass(frozen=True)
class CostSchedule:
    rate: float = 0.0
    interest: float = 1.0

    def __post_init__(self):
        if self.rate < 0 or self.rate >= 1:
            raise DomainError("cost rate must lie in [0, 1)")
        if self.interest < 1:
            raise DomainError("balance interest must be >= 1")


def check_simplex(weights, width: int) -> np.ndarray:
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    if w.shape[1] != width:
        raise DomainError(f"action width {w.shape[1]} != {width}")
    if np.any(w < -SIMPLEX_TOL) or np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-6:
        raise DomainError("action must lie on the simplex")
    return np.clip(w, 0.0, None)


def stationary_distribution(Q) -> np.ndarray:
    """Left eigenvector of a row-stochastic matrix (minimum-norm if not unique)."""
    Q = np.asarray(Q, dtype=float)
    k = Q.shape[0]
    A = np.vstack([Q.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _draw_categorical(rng, probs_rows):
    """One categorical draw per row of ``probs_rows``."""
    cum = np.cumsum(probs_rows, axis=1)
    u = rng.random(probs_rows.shape[0])[:, None]
    return np.minimum((u >= cum).sum(axis=1), probs_rows.shape[1] - 1)


# ---------------------------------------------------------------------------
# Two-period volatility-regime environment

class RegimeEnv:
    """Two-period risky/risk-free allocation with a persistent volatility regime.

    Actions are (risky, cash) weights.  Rewards are log gross returns, with
    the first period's scaled by ``beta`` so that the discounted sum equals
    ``beta * log`` of two-period growth; quantiles commute with the monotone
    log, so the optimal allocations coincide with the wealth problem.
    """

    n_assets = 1
    action_dim = 2
    feature_dim = 2
    horizon = 2

    def __init__(self, model: TwoPeriodRegimeModel | None = None, start_regime=None,
                 reward_scale: float = 10.0):
        self.model = model or TwoPeriodRegimeModel()
        self.reward_scale = reward_scale
        if start_regime not in (None, 0, 1):
            raise ConfigError("start_regime must be None, 0 (L) or 1 (H)")
        self.start_regime = start_regime

    @property
    def beta(self) -> float:
        return self.model.beta

    def reset(self, rng, n_paths: int = 1) -> MarketState:
        if self.start_regime is None:
            pi = stationary_distribution(self.model.transition)
            regime = _draw_categorical(rng, np.tile(pi, (n_paths, 1)))
        else:
            regime = np.full(n_paths, self.start_regime)
        return MarketState(step=0, wealth=np.full(n_paths, self.model.W_0), regime=regime)

    def features(self, state: MarketState) -> np.ndarray:
        n = state.n_paths
        return np.column_stack([np.full(n, float(state.step == 1)), state.regime.astype(float)])

    def step(self, state: MarketState, weights, rng):
        w = check_simplex(weights, 2)
        m = self.model
        sig = m.sigmas[state.regime]
        R = m.mu + sig * rng.standard_normal(state.n_paths)
        gross = w[:, 0] * R + w[:, 1] * m.R_f
        if np.any(gross <= 0):
            raise DomainError("nonpositive gross return; allocation would wipe out wealth")
        scale = m.beta ** (self.horizon - 1 - state.step)
        reward = self.reward_scale * scale * np.log(gross)
        nxt = _draw_categorical(rng, m.transition[state.regime])
        done = state.step + 1 >= self.horizon
        return MarketState(step=state.step + 1, wealth=state.wealth * gross, regime=nxt), reward, done


# ---------------------------------------------------------------------------
# Regime-switching VAR(1)

@dataclass
class RegimeVarModel:
    """``r' = c_k + Phi r + u``, ``u ~ N(0, Sigma_k)``; regimes follow ``Q``."""

    c: np.ndarray          # (K, N)
    Phi: np.ndarray        # (N, N)
    Sigma: np.ndarray      # (K, N, N)
    Q: np.ndarray          # (K, K)
    R_f: float = 1.001
    regime_names: tuple = ("Bull", "Neutral", "Bear")
    _factors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.Phi = np.asarray(self.Phi, dtype=float)
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        K, N = self.c.shape
        if self.Phi.shape != (N, N) or self.Sigma.shape != (K, N, N) or self.Q.shape != (K, K):
            raise DomainError("inconsistent RS-VAR dimensions")
        if np.any(self.Q < 0) or np.max(np.abs(self.Q.sum(axis=1) - 1.0)) > 1e-12:
            raise DomainError("Q must be row-stochastic")
        factors = []
        for S in self.Sigma:
            if not np.allclose(S, S.T):
                raise DomainError("covariances must be symmetric")
            vals, vecs = np.linalg.eigh(S)
            if vals.min() < -1e-12:
                raise DomainError("covariances must be positive semidefinite")
            factors.append(vecs * np.sqrt(np.clip(vals, 0.0, None)))
        self._factors = np.array(factors)
        if len(self.regime_names) != K:
            self.regime_names = tuple(f"regime{k}" for k in range(K))

    @property
    def K(self) -> int:
        return self.c.shape[0]

    @property
    def N(self) -> int:
        return self.c.shape[1]

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.Q)

    def conditional_mean(self, r, k) -> np.ndarray:
        return self.c[k] + np.asarray(r) @ self.Phi.T

    def draw_returns(self, r, k, rng, eps=None) -> np.ndarray:
        """Next log returns given current returns and regimes (batched)."""
        r = np.atleast_2d(r)
        k = np.atleast_1d(k)
        if eps is None:
            eps = rng.standard_normal(r.shape)
        shock = np.einsum("bij,bj->bi", self._factors[k], eps)
        return self.conditional_mean(r, k) + shock


SCENARIOS = {
    "bull-bear": [[0.74, 0.02, 0.24], [0.10, 0.82, 0.08], [0.30, 0.02, 0.68]],
    "neutral-bear": [[0.82, 0.08, 0.10], [0.02, 0.68, 0.30], [0.02, 0.24, 0.74]],
    "bull-neutral": [[0.74, 0.24, 0.02], [0.30, 0.68, 0.02], [0.10, 0.08, 0.82]],
}


def default_rs_var_model(scenario: str = "bull-bear", R_f: float = 1.001) -> RegimeVarModel:
    """Two risky sleeves, three regimes; sleeve 1 is the high-dispersion one."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    c = [[0.0040, 0.0030], [0.0030, 0.0028], [-0.0090, 0.0030]]
    Sigma = [
        [[0.0005, 0.0001], [0.0001, 0.00045]],
        [[0.0018, 0.0], [0.0, 0.0014]],
        [[0.0050, -0.0030], [-0.0030, 0.0020]],
    ]
    Phi = [[0.15, 0.10], [0.10, 0.15]]
    return RegimeVarModel(c, Phi, Sigma, SCENARIOS[scenario], R_f)


def rs_var_step(model: RegimeVarModel, r_t, k_t, rng):
    """Returns use the current regime; the regime moves after returns realise."""
    k_t = np.atleast_1d(k_t)
    r_next = model.draw_returns(r_t, k_t, rng)
    k_next = _draw_categorical(rng, model.Q[k_t])
    return r_next, k_next


def turnover(w, w_pre) -> np.ndarray:
    return 0.5 * np.abs(np.asarray(w) - np.asarray(w_pre)).sum(axis=-1)


def portfolio_transition(model: RegimeVarModel, w, w_pre, r_next, cost_rate):
    """Net reward and drifted post-trade weights for one RS-VAR period.

    ``w`` and ``w_pre`` are (B, N+1) with cash last; ``r_next`` holds log returns.
    """
    gross_assets = np.exp(r_next)
    R_p = (w[:, :-1] * gross_assets).sum(axis=1) + w[:, -1] * model.R_f
    cost = cost_rate * turnover(w, w_pre)
    drifted = np.column_stack([w[:, :-1] * gross_assets, w[:, -1] * model.R_f]) / R_p[:, None]
    return R_p - 1.0 - cost, drifted, R_p - cost


class RsVarEnv:
    """Regime-switching VAR market with proportional turnover costs.

    State features: pre-trade weights (assets then cash), scaled current log
    returns and a one-hot regime.
    """

    def __init__(self, model: RegimeVarModel, cost_rate=1e-3, horizon=64, beta=0.96,
                 reward_scale=1.0, return_scale=20.0):
        if horizon < 1:
            raise ConfigError("horizon must be >= 1")
        self.model = model
        self.cost = CostSchedule(cost_rate)
        self.horizon = int(horizon)
        self.beta = beta
        self.reward_scale = reward_scale
        self.return_scale = return_scale

    @property
    def n_assets(self) -> int:
        return self.model.N

    @property
    def action_dim(self) -> int:
        return self.model.N + 1

    @property
    def feature_dim(self) -> int:
        return 2 * self.model.N + 1 + self.model.K

    def reset(self, rng, n_paths: int = 1) -> MarketState:
        m = self.model
        regime = _draw_categorical(rng, np.tile(m.stationary(), (n_paths, 1)))
        w0 = np.full((n_paths, m.N + 1), 1.0 / (m.N + 1))
        return MarketState(step=0, wealth=np.ones(n_paths), regime=regime,
                           prev_weights=w0, returns=np.zeros((n_paths, m.N)))

    def state_features(self, prev_weights, returns, regime) -> np.ndarray:
        onehot = np.eye(self.model.K)[np.asarray(regime)]
        return np.column_stack([prev_weights, self.return_scale * np.asarray(returns), onehot])

    def features(self, state: MarketState) -> np.ndarray:
        return self.state_features(state.prev_weights, state.returns, state.regime)

    def step(self, state: MarketState, weights, rng):
        w = check_simplex(weights, self.action_dim)
        r_next, k_next = rs_var_step(self.model, state.returns, state.regime, rng)
        reward, drifted, growth = portfolio_transition(self.model, w, state.prev_weights,
                                                       r_next, self.cost.rate)
        nxt = MarketState(step=state.step + 1, wealth=state.wealth * growth, regime=k_next,
                          prev_weights=drifted, returns=r_next)
        return nxt, self.reward_scale * reward, nxt.step >= self.horizon


# ---------------------------------------------------------------------------
# Historical returns

@dataclass
class ReturnsData:
    dates: pd.DatetimeIndex
    assets: list
    returns: np.ndarray        # (T, N) simple returns
    feature_names: list
    features: np.ndarray       # (T, F)

    def __len__(self):
        return self.returns.shape[0]

    def slice(self, start: int, stop: int) -> "ReturnsData":
        return ReturnsData(self.dates[start:stop], list(self.assets), self.returns[start:stop],
                           list(self.feature_names), self.features[start:stop])


def load_returns_csv(path, ffill: bool = False) -> ReturnsData:
    """Read ``date,<asset>...,[feat_*...]``; dates must be strictly increasing."""
    path = Path(path)
    try:
        df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if df.empty or "date" not in df.columns:
        raise DataError(f"{path}: need a header with a 'date' column and at least one row")
    try:
        dates = pd.DatetimeIndex(pd.to_datetime(df.pop("date"), format="ISO8601"))
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: unparseable dates ({exc})") from exc
    if dates.has_duplicates:
        raise DataError(f"{path}: duplicate dates")
    if not dates.is_monotonic_increasing:
        raise DataError(f"{path}: dates are not in increasing order")
    feat_cols = [c for c in df.columns if c.startswith("feat_")]
    asset_cols = [c for c in df.columns if not c.startswith("feat_")]
    if not asset_cols:
        raise DataError(f"{path}: no asset return columns")
    try:
        df = df.astype(float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric values ({exc})") from exc
    if df.isna().to_numpy().any():
        if not ffill:
            raise DataError(f"{path}: missing values (enable forward fill to impute)")
        df = df.ffill()
        if df.isna().to_numpy().any():
            raise DataError(f"{path}: leading missing values cannot be forward-filled")
    returns = df[asset_cols].to_numpy()
    if not np.all(np.isfinite(returns)):
        raise DataError(f"{path}: non-finite returns")
    if np.any(returns <= -1.0):
        raise DataError(f"{path}: a return <= -100% implies a nonpositive price")
    return ReturnsData(dates, asset_cols, returns, feat_cols, df[feat_cols].to_numpy())


def write_returns_csv(data: ReturnsData, path) -> None:
    df = pd.DataFrame(data.returns, columns=data.assets)
    for i, name in enumerate(data.feature_names):
        df[name] = data.features[:, i]
    df.insert(0, "date", data.dates.strftime("%Y-%m-%d"))
    df.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


def rolling_zscore(x, window: int = 60):
    """Standardise by the trailing window ending at (and including) each row.

    Returns ``(scores, warm)`` where ``warm`` marks the first ``window - 1``
    rows, whose scores are set to 0 and which must not be trained on.
    """
    if window < 2:
        raise DomainError("window must be >= 2")
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x2 = x[:, None] if squeeze else x
    T = x2.shape[0]
    out = np.zeros_like(x2)
    warm = np.arange(T) < window - 1
    if T >= window:
        win = np.lib.stride_tricks.sliding_window_view(x2, window, axis=0)  # (T-w+1, F, w)
        mean = win.mean(axis=-1)
        sd = win.std(axis=-1, ddof=1)
        flat = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
        z = (x2[window - 1:] - mean) / np.where(flat, 1.0, sd)
        out[window - 1:] = np.where(flat, 0.0, z)
    return (out[:, 0] if squeeze else out), warm


def sell_then_buy(shares, balance, target_weights, prices, cost_rate):
    """Rebalance toward ``target_weights`` of current wealth.

    Sales settle first and yield ``(1 - c)`` of their notional.  Each unit of
    cash spent buys ``(1 - c)`` of notional; when buys need more cash than is
    available every buy is scaled by the same ratio.  Returns new shares,
    balance, cost paid and the applied scale ratio.
    """
    shares = np.asarray(shares, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if np.any(prices <= 0):
        raise DataError("prices must be positive")
    value = shares * prices
    wealth = value.sum() + balance
    target = np.asarray(target_weights, dtype=float)[: shares.size] * wealth
    diff = target - value
    sells = np.clip(-diff, 0.0, None)
    buys = np.clip(diff, 0.0, None)
    balance = balance + (sells * (1.0 - cost_rate)).sum()
    shares = shares - sells / prices
    need = buys.sum() / (1.0 - cost_rate)
    ratio = 1.0
    if need > balance:
        ratio = balance / need if need > 0 else 1.0
    buys = buys * ratio
    spent = buys.sum() / (1.0 - cost_rate)
    balance = max(balance - spent, 0.0)
    shares = np.clip(shares + buys / prices, 0.0, None)
    cost = cost_rate * sells.sum() + spent - buys.sum()
    return shares, balance, cost, ratio


class HistoricalEnv:
    """Backtest market over a window of historical simple returns.

    Starts equal-weighted, trades at the close of each row (sell first, then
    buy), and earns one row of returns plus balance interest per step.  The
    reward is the scaled log wealth ratio.
    """

    def __init__(self, data: ReturnsData, start: int | None = None, stop: int | None = None,
                 cost: CostSchedule = CostSchedule(0.0, 1.0002), W_0: float = 100.0,
                 reward_scale: float = 1221.0, window: int = 60, include_cash: bool = False,
                 beta: float = 0.99):
        if len(data) == 0:
            raise ConfigError("no return data")
        self.data = data
        self.cost = cost
        self.W_0 = W_0
        self.reward_scale = reward_scale
        self.include_cash = include_cash
        self.beta = beta
        self.window = window
        # prices normalised to 1 before the first row
        self.prices = np.cumprod(1.0 + data.returns, axis=0)
        exo = data.returns if not data.feature_names else np.hstack([data.returns, data.features])
        self.zscores, self.warm = rolling_zscore(exo, window)
        first = int(np.argmin(self.warm)) if not self.warm.all() else len(data)
        self.start = max(first, 0 if start is None else start)
        self.stop = len(data) if stop is None else min(stop, len(data))
        if self.stop - self.start < 2:
            raise ConfigError("historical window too short after the warm-up period")

    @property
    def n_assets(self) -> int:
        return self.data.returns.shape[1]

    @property
    def action_dim(self) -> int:
        return self.n_assets + int(self.include_cash)

    @property
    def feature_dim(self) -> int:
        return 2 + self.n_assets + self.zscores.shape[1]

    @property
    def horizon(self) -> int:
        return self.stop - 1 - self.start

    def reset(self, rng=None, n_paths: int = 1) -> MarketState:
        if n_paths != 1:
            raise ConfigError("historical environment runs a single path")
        t = self.start
        p = self.prices[t]
        shares = (self.W_0 / self.n_assets) / p
        return MarketState(step=0, wealth=np.array([self.W_0]), shares=shares[None, :],
                           balance=np.zeros(1), exogenous=self.zscores[t][None, :])

    def row(self, state: MarketState) -> int:
        return self.start + state.step

    def features(self, state: MarketState) -> np.ndarray:
        return np.column_stack([
            WEALTH_SCALE * state.wealth,
            SHARES_SCALE * state.shares,
            BALANCE_SCALE * state.balance,
            state.exogenous,
        ])

    def step(self, state: MarketState, weights, rng=None):
        w = check_simplex(weights, self.action_dim)[0]
        t = self.row(state)
        shares, balance, _, _ = sell_then_buy(state.shares[0], float(state.balance[0]), w,
                                              self.prices[t], self.cost.rate)
        balance *= self.cost.interest
        wealth = float(shares @ self.prices[t + 1] + balance)
        reward = self.reward_scale * math.log(wealth / float(state.wealth[0]))
        nxt = MarketState(step=state.step + 1, wealth=np.array([wealth]), shares=shares[None, :],
                          balance=np.array([balance]), exogenous=self.zscores[t + 1][None, :])
        return nxt, np.array([reward]), nxt.step >= self.horizon

    def current_weights(self, state: MarketState) -> np.ndarray:
        value = state.shares[0] * self.prices[self.row(state)]
        w = value / state.wealth[0]
        if self.include_cash:
            w = np.append(w, state.balance[0] / state.wealth[0])
        return w


def env_reset(env, seed: int, n_paths: int = 1) -> MarketState:
    from .mathcore import make_rng
    return env.reset(make_rng(seed), n_paths)


def env_step(env, state: MarketState, action, rng):
    return env.step(state, action, rng)


def with_cost(env: HistoricalEnv, rate: float) -> HistoricalEnv:
    """Same market and window under a different proportional cost."""
    return HistoricalEnv(env.data, env.start, env.stop, replace(env.cost, rate=rate), env.W_0,
                         env.reward_scale, env.window, env.include_cash, env.beta)
