"""Performance and tail-risk statistics, weight summaries and inverse-CDF reports.

Returns are daily simple returns.  Annualisation uses 252 trading days and,
unless a risk-free rate is passed, ratios use raw rather than excess returns.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .errors import InsufficientDataError
from .mathcore import normal_quantile
from .quantile_dp import discrete_quantile

PERIODS = 252
MIN_OBS = 30
TAIL = 0.05

ROW_NAMES = {
    "ann_mean": "Ann. Mean (%)",
    "ann_std": "Ann. StdDev (%)",
    "ann_semidev": "Ann. SemiDev (%)",
    "cvar95": "CVaR 95% (%)",
    "avg_dd": "Avg DD (%)",
    "var95": "VaR 95% (%)",
    "sharpe": "Sharpe (ann.)",
    "sortino": "Sortino (ann.)",
    "tail_sharpe_cvar": "Tail-Adj Sharpe (CVaR95)",
    "tail_sharpe_mvar": "Tail-Adj Sharpe (mVaR95)",
}


@dataclass
class PerfSummary:
    ann_mean: float
    ann_std: float
    ann_semidev: float
    var95: float
    cvar95: float
    avg_dd: float
    sharpe: float
    sortino: float
    tail_sharpe_cvar: float
    tail_sharpe_mvar: float
    mvar95: float = float("nan")

    def as_rows(self) -> dict:
        d = asdict(self)
        return {label: d[key] for key, label in ROW_NAMES.items()}


def _ratio(num, den):
    if den > 0:
        return num / den
    if num > 0:
        return math.inf
    if num < 0:
        return -math.inf
    return math.nan


def drawdowns(returns) -> np.ndarray:
    """``1 - W/peak`` along the wealth path grown from 1 by ``returns``."""
    wealth = np.cumprod(1.0 + np.asarray(returns, dtype=float))
    peak = np.maximum.accumulate(np.concatenate([[1.0], wealth]))[1:]
    return 1.0 - wealth / peak


def average_drawdown(returns, mode: str = "all") -> float:
    """Mean drawdown over all days, or (``mode='spells'``) mean of each spell's trough."""
    dd = drawdowns(returns)
    if mode == "all":
        return float(dd.mean())
    if mode != "spells":
        raise ValueError(f"unknown drawdown mode {mode!r}")
    troughs, depth = [], 0.0
    for d in dd:
        if d > 0:
            depth = max(depth, d)
        elif depth > 0:
            troughs.append(depth)
            depth = 0.0
    if depth > 0:
        troughs.append(depth)
    return float(np.mean(troughs)) if troughs else 0.0


def historical_var_cvar(returns, level: float = TAIL):
    """Empirical lower-tail quantile and the mean of returns at or below it."""
    r = np.asarray(returns, dtype=float)
    var = discrete_quantile(r, np.full(r.size, 1.0 / r.size), level)
    return var, float(r[r <= var].mean())


def cornish_fisher_z(z, skew, exkurt):
    return (z + (z ** 2 - 1) * skew / 6 + (z ** 3 - 3 * z) * exkurt / 24
            - (2 * z ** 3 - 5 * z) * skew ** 2 / 36)


def modified_var(returns, level: float = TAIL) -> float:
    r = np.asarray(returns, dtype=float)
    sd = r.std(ddof=1)
    if sd == 0:
        return float(r.mean())
    s = stats.skew(r, bias=False)
    k = stats.kurtosis(r, fisher=True, bias=False)
    return float(r.mean() + cornish_fisher_z(normal_quantile(level), s, k) * sd)


def performance_summary(returns, risk_free: float = 0.0, start: int = 0,
                        drawdown_mode: str = "all") -> PerfSummary:
    """Risk-return summary of a daily return series (from row ``start`` on).

    Percent fields are in percent; VaR/CVaR are daily.  ``risk_free`` is a
    daily rate subtracted before the Sharpe-type ratios.
    """
    r = np.asarray(returns, dtype=float)[start:]
    if r.size < MIN_OBS:
        raise InsufficientDataError(f"need at least {MIN_OBS} observations, got {r.size}")
    excess = r - risk_free
    ann_mean = PERIODS * r.mean() * 100
    ann_excess = PERIODS * excess.mean() * 100
    ann_std = math.sqrt(PERIODS) * r.std(ddof=1) * 100
    semidev = math.sqrt(PERIODS) * math.sqrt(np.mean(np.minimum(excess, 0.0) ** 2)) * 100
    var, cvar = historical_var_cvar(r)
    mvar = modified_var(r)
    return PerfSummary(
        ann_mean=ann_mean,
        ann_std=ann_std,
        ann_semidev=semidev,
        var95=var * 100,
        cvar95=cvar * 100,
        avg_dd=average_drawdown(r, drawdown_mode) * 100,
        sharpe=_ratio(ann_excess, ann_std),
        sortino=_ratio(ann_excess, semidev),
        tail_sharpe_cvar=_ratio(ann_excess, abs(cvar) * 100),
        tail_sharpe_mvar=_ratio(ann_excess, abs(mvar) * 100),
        mvar95=mvar * 100,
    )


def summary_table(summaries: dict) -> pd.DataFrame:
    """One column per strategy, rows labelled as in the reporting tables."""
    cols = {name: s.as_rows() for name, s in summaries.items()}
    return pd.DataFrame(cols, index=list(ROW_NAMES.values()))


def weight_summary(weights, regime=None, names=None, regime_names=None) -> pd.DataFrame:
    """Time-averaged weights: an ``all`` row plus one row per regime label if given."""
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    if w.shape[0] == 0:
        raise InsufficientDataError("empty trajectory")
    names = names or [f"w{i}" for i in range(w.shape[1])]
    rows = {"all": w.mean(axis=0)}
    if regime is not None:
        regime = np.asarray(regime)
        for k in np.unique(regime):
            label = regime_names[int(k)] if regime_names is not None else str(k)
            rows[label] = w[regime == k].mean(axis=0)
    return pd.DataFrame(rows, index=names).T


def icdf_curve(values) -> np.ndarray:
    """Per-level mean of critic heads over states."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    if v.shape[0] == 0:
        raise InsufficientDataError("need at least one state")
    return v.mean(axis=0)


def icdf_report(critic, features) -> np.ndarray:
    from .critic import value_vector
    return icdf_curve(value_vector(critic, np.atleast_2d(features)))


def icdf_frame(curves: dict, levels) -> pd.DataFrame:
    """One row per policy, one column per quantile level."""
    cols = [f"{lv:g}" for lv in levels]
    return pd.DataFrame([np.asarray(c) for c in curves.values()], index=list(curves), columns=cols)


def quantile_crossing(values):
    """Fraction of states with any crossing, and mean crossing size relative to the head range."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    gaps = np.clip(v[:, :-1] - v[:, 1:], 0.0, None)
    crossed = gaps.max(axis=1) > 0
    span = float(v.max() - v.min())
    mag = float(gaps[gaps > 0].mean()) / span if crossed.any() and span > 0 else 0.0
    return float(crossed.mean()), mag
