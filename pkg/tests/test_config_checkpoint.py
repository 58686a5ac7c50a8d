from __future__ import annotations

import json

import numpy as np
import pytest

from qprl.actor import init_actor
from qprl.checkpoint import load_checkpoint, save_checkpoint
from qprl.config import (float_list, int_list, parse_overrides, parse_text, read_config, render,
                         resolve)
from qprl.critic import init_critic
from qprl.errors import ConfigError
from qprl.mathcore import make_rng
from qprl.quantile_dp import QuantileGrid


def test_parse_text_comments_and_dashes():
    d = parse_text("# header\nactor-lr-start = 0.01  # inline\n\nenv=regime\n")
    assert d == {"actor_lr_start": "0.01", "env": "regime"}
    with pytest.raises(ConfigError):
        parse_text("no equals sign")


def test_resolve_defaults_per_environment():
    cfg, env = resolve({"env": "regime"})
    assert cfg.paths_per_episode == 512 and env["reward_scale"] == 10.0
    cfg, env = resolve({"env": "rs-var"})
    assert cfg.head == "dirichlet" and env["cost"] == 1e-3
    cfg, env = resolve({})
    assert env["env"] == "historical" and env["reward_scale"] == 1221.0


def test_resolve_types_and_errors():
    cfg, env = resolve({"tau": "0.9", "hidden": "8,8", "include_cash": "yes", "clip_norm": "none",
                        "episodes": "40"})
    assert cfg.tau == 0.9 and cfg.hidden == (8, 8) and env["include_cash"] is True
    assert cfg.clip_norm is None and cfg.episodes == 40
    for bad in ({"nonsense": "1"}, {"env": "moon"}, {"beta": "abc"}, {"include_cash": "maybe"},
                {"tau": "0.33"}):
        with pytest.raises(ConfigError):
            resolve(bad)


def test_render_round_trips(tmp_path):
    cfg, env = resolve({"env": "rs-var", "tau": "0.1", "clip_norm": "2.5"})
    path = tmp_path / "config.txt"
    path.write_text(render(cfg, env), encoding="utf-8")
    cfg2, env2 = resolve(read_config(path))
    assert cfg2 == cfg and env2 == env


def test_lists():
    assert float_list("0.1, 0.9") == [0.1, 0.9]
    assert int_list("3") == [0, 1, 2]
    assert int_list("3,") == [3]
    assert int_list("0,4") == [0, 4]
    with pytest.raises(ConfigError):
        int_list("a,b")
    with pytest.raises(ConfigError):
        parse_overrides(["tau"])
    assert parse_overrides(["actor-lr-start=0.2"]) == {"actor_lr_start": "0.2"}


@pytest.mark.parametrize("head", ["gaussian", "dirichlet"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, head):
    rng = make_rng(0)
    grid = QuantileGrid.regular(9, 0.1)
    actor = init_actor(4, 3, rng, head=head, hidden=(5, 6), l2=1e-3, sigma=0.3, entropy_coef=0.01)
    critic = init_critic(4, grid, rng, hidden=(7,), order_penalty=2.0, rho=0.05)
    critic.target = critic.online.with_flat(critic.online.flat() / 3)
    save_checkpoint(tmp_path / "ck", actor, critic, {"episode": 4})
    a, c, meta = load_checkpoint(tmp_path / "ck")
    assert np.array_equal(a.net.flat(), actor.net.flat())
    assert np.array_equal(c.online.flat(), critic.online.flat())
    assert np.array_equal(c.target.flat(), critic.target.flat())
    assert (a.head, a.sigma, a.entropy_coef) == (head, 0.3, 0.01)
    assert c.grid == grid and c.rho == 0.05 and meta == {"episode": 4}


def test_checkpoint_rejects_foreign_files(tmp_path):
    (tmp_path / "x").write_text(json.dumps({"format": "other"}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "x")
    (tmp_path / "y").write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "y")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "missing")
