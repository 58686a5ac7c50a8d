"""Flat ``key = value`` run configuration.

Training keys are the fields of :class:`TrainConfig`; the remaining keys
select and parameterise the environment.  Each environment starts from its
own defaults and file values and command-line overrides are layered on top.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .trainer import TrainConfig, regime_config, rs_var_config

ENVS = ("historical", "rs-var", "regime")

ENV_DEFAULTS = {
    "env": "historical",
    "scenario": "bull-bear",
    "data": "",
    "ffill": False,
    "cost": 0.0,
    "interest": 1.0002,
    "initial_wealth": 100.0,
    "reward_scale": 1221.0,
    "window": 60,
    "train_frac": 0.7,
    "val_frac": 0.15,
    "include_cash": False,
    "horizon": 64,
    "risk_free": 1.001,
    "start_regime": "",
    "seeds": "0,1,2,3,4",
    "seed": 0,
    "taus": "0.1,0.5,0.9",
}

# environment-specific defaults that differ from the historical setup
ENV_OVERRIDES = {
    "rs-var": {"cost": 1e-3, "reward_scale": 1.0},
    "regime": {"reward_scale": 10.0, "risk_free": 1.04},
}

_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}


def parse_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def read_config(path) -> dict:
    try:
        return parse_text(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    field = _TRAIN_FIELDS.get(key)
    if field is not None and "None" in str(field.type) and raw.lower() in ("", "none"):
        return None
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s for s in raw.replace("(", "").replace(")", "").split(",") if s.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(s) for s in items)
        if default is None:
            return None if raw.lower() in ("", "none") else float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def resolve(values: dict):
    """Split and type-check a flat mapping into (TrainConfig, environment settings)."""
    env_name = values.get("env", ENV_DEFAULTS["env"])
    if env_name not in ENVS:
        raise ConfigError(f"unknown env {env_name!r}; choose from {ENVS}")
    env = dict(ENV_DEFAULTS)
    env.update(ENV_OVERRIDES.get(env_name, {}))
    base = {"historical": TrainConfig, "rs-var": rs_var_config, "regime": regime_config}[env_name]()
    train_kw = {}
    for key, raw in values.items():
        if key in env:
            env[key] = _coerce(key, raw, ENV_DEFAULTS.get(key, env[key]))
        elif key in _TRAIN_FIELDS:
            train_kw[key] = _coerce(key, raw, getattr(base, key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    merged = base.to_dict()
    merged.update(train_kw)
    try:
        cfg = TrainConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, env


def float_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        return [float(s) for s in str(text).split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def int_list(text) -> list:
    """``"0,3,4"`` lists seeds explicitly; a bare count ``"5"`` means ``0..4``."""
    if isinstance(text, int):
        return list(range(text))
    if "," not in str(text):
        try:
            return list(range(int(text)))
        except ValueError as exc:
            raise ConfigError(f"bad integer list {text!r}") from exc
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def render(cfg: TrainConfig, env: dict) -> str:
    """Resolved configuration as ``key = value`` lines, readable by :func:`read_config`."""
    lines = []
    for key in sorted(env):
        lines.append(f"{key} = {_fmt(env[key])}")
    for key, value in sorted(cfg.to_dict().items()):
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)
