from __future__ import annotations

import pandas as pd
import pytest

from qprl.cli import main
from qprl.environments import write_returns_csv
from tests.test_environments import synthetic_data

FAST = ["episodes=2", "min_epochs=2", "eval_every=1", "hidden=8"]


@pytest.fixture(scope="module")
def returns_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "returns.csv"
    write_returns_csv(synthetic_data(400, 3, seed=11), path)
    return path


@pytest.fixture(scope="module")
def historical_runs(tmp_path_factory, returns_csv):
    out = tmp_path_factory.mktemp("hist")
    code = main(["train", "--env", "historical", "--data", str(returns_csv), "--out", str(out),
                 "--taus", "0.1,0.9", "--seeds", "2", "window=20", *FAST])
    assert code == 0
    return out


def test_oracle_regime(tmp_path, capsys):
    assert main(["oracle", "--example", "regime", "--tau", "0.5,0.9", "--out", str(tmp_path),
                 "--grid", "101"]) == 0
    df = pd.read_csv(tmp_path / "oracle.csv")
    assert {"tau", "regime", "alpha_star", "value"} <= set(df.columns)
    assert set(df["tau"]) == {0.5, 0.9}
    assert "alpha_star" in capsys.readouterr().out


def test_oracle_static(tmp_path):
    assert main(["oracle", "--example", "static", "--sigma", "0.1", "--out", str(tmp_path)]) == 0
    assert len(pd.read_csv(tmp_path / "oracle.csv")) >= 3
    assert main(["oracle", "--example", "static", "--out", str(tmp_path)]) == 2


def test_dp_writes_errors(tmp_path):
    assert main(["dp", "--tau", "0.5", "--atoms", "10,40", "--out", str(tmp_path)]) == 0
    df = pd.read_csv(tmp_path / "dp.csv")
    assert list(df["atoms"]) == [10, 40]
    assert df["abs_error"].iloc[1] < df["abs_error"].iloc[0]
    assert (df["alpha0"] == 1.0).all()
    # below the cash crossover the optimum is all cash and the grid is exact
    assert main(["dp", "--tau", "0.1", "--atoms", "10", "--out", str(tmp_path)]) == 0
    df = pd.read_csv(tmp_path / "dp.csv")
    assert df["abs_error"].iloc[0] < 1e-9 and df["alpha0"].iloc[0] == 0.0


@pytest.mark.parametrize("argv", [
    [],
    ["fly"],
    ["oracle", "--example", "regime", "--tau", "1.5"],
    ["train", "--out", "x", "bogus_key=1"],
    ["train", "--out", "x", "--env", "regime", "beta=2"],
    ["train-sim", "--out", "x", "--scenario", "sideways", "episodes=1", "min_epochs=1"],
])
def test_usage_errors_exit_2(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_data_errors_exit_3(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("date,a\n2020-01-02,0.1\n2020-01-01,0.1\n", encoding="utf-8")
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert main(["train", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == 3


def test_divergence_exits_4_and_keeps_last_checkpoint(tmp_path):
    code = main(["train", "--env", "regime", "--out", str(tmp_path), "--seed", "0", "--tau", "0.5",
                 "paths_per_episode=16", "clip_norm=none", "critic_lr_start=1e200",
                 "critic_lr_end=1e200", "actor_lr_start=1e200", "actor_lr_end=1e200", "episodes=12",
                 "min_epochs=12", "hidden=8"])
    assert code == 4
    assert (tmp_path / "tau0.5-seed0" / "checkpoint_last").exists()


def test_historical_run_layout(historical_runs):
    for name in ("tau0.1-seed0", "tau0.1-seed1", "tau0.9-seed0", "tau0.9-seed1"):
        run = historical_runs / name
        for f in ("config.txt", "history.csv", "checkpoint_best", "checkpoint_last",
                  "trajectory.csv", "icdf.csv", "weights.csv", "metrics.csv"):
            assert (run / f).exists(), f
    w = pd.read_csv(historical_runs / "weights.csv", index_col=0)
    assert {"tau0.1-mean", "tau0.9-mean"} <= set(w.index)
    assert list(w.columns) == ["a0", "a1", "a2"]


def test_evaluate_is_reproducible(historical_runs):
    run = historical_runs / "tau0.1-seed0"
    before = (run / "metrics.csv").read_bytes()
    assert main(["evaluate", "--run", str(run)]) == 0
    assert (run / "metrics.csv").read_bytes() == before
    assert main(["evaluate", "--run", str(historical_runs)]) == 2


def test_report_concatenates_runs(historical_runs, tmp_path):
    runs = [historical_runs / "tau0.1-seed0", historical_runs / "tau0.9-seed0"]
    assert main(["report", "--runs", ",".join(map(str, runs)), "--out", str(tmp_path)]) == 0
    m = pd.read_csv(tmp_path / "metrics.csv", index_col=0)
    assert list(m.columns) == ["tau0.1-seed0", "tau0.9-seed0"]
    assert "VaR 95% (%)" in m.index
    single = pd.read_csv(runs[0] / "metrics.csv", index_col=0).iloc[:, 0]
    assert m["tau0.1-seed0"].to_numpy() == pytest.approx(single.to_numpy())
    for png in ("wealth.png", "icdf.png", "weights.png"):
        assert (tmp_path / png).stat().st_size > 0


def test_regime_and_sim_runs(tmp_path):
    assert main(["train", "--env", "regime", "--out", str(tmp_path / "r"), "--seed", "1",
                 "--tau", "0.9", "paths_per_episode=16", *FAST]) == 0
    w = pd.read_csv(tmp_path / "r" / "tau0.9-seed1" / "weights.csv", index_col=0)
    assert list(w.columns) == ["risky", "cash"] and {"L", "H"} <= set(w.index)
    assert main(["train-sim", "--out", str(tmp_path / "s"), "--seed", "0", "--tau", "0.5",
                 "--scenario", "neutral-bear", "updates_per_episode=2", "weight_levels=3",
                 "return_points=2", "eval_paths=4", "eval_horizon=4", *FAST]) == 0
    w = pd.read_csv(tmp_path / "s" / "tau0.5-seed0" / "weights.csv", index_col=0)
    assert list(w.columns) == ["sleeve1", "sleeve2", "cash"]
