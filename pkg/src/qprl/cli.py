"""Command-line interface.

Verbs: ``oracle``, ``dp``, ``train``, ``train-sim``, ``evaluate``, ``report``.

Exit codes:
    0  success
    2  usage or configuration error
    3  unreadable or invalid data
    4  training diverged (the last good parameters are kept as ``checkpoint_last``)

``train`` and ``train-sim`` write one run directory per (tau, seed) under
``--out``::

    <out>/tau0.1-seed0/config.txt      resolved configuration (input to ``evaluate``)
                       history.csv     one row per episode
                       checkpoint_best, checkpoint_last
                       trajectory.csv, icdf.csv, weights.csv[, metrics.csv]
    <out>/weights.csv                  average weights per run and per tau

``QPRL_THREADS`` caps how many runs execute at once (default 1).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import config as cfgmod
from .checkpoint import load_checkpoint, save_checkpoint
from .environments import (CostSchedule, HistoricalEnv, RegimeEnv, RsVarEnv, default_rs_var_model,
                           load_returns_csv)
from .errors import ConfigError, DataError, DivergenceError, DomainError, QprlError
from .metrics import MIN_OBS, icdf_curve, icdf_frame, performance_summary, weight_summary
from .quantile_dp import (TwoPeriodRegimeModel, corner_rule_value, equiprobable_normal_atoms,
                          iid_wealth_mdp, regime_example_solver, static_choice_comparator,
                          value_iteration, write_oracle_csv)
from .mathcore import normal_quantile
from .trainer import evaluate, split_data, train, train_model_based

log = logging.getLogger("qprl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Oracles

def cmd_oracle(args) -> int:
    out = _out_dir(args.out)
    if args.example == "regime":
        model = TwoPeriodRegimeModel(R_f=args.rf, mu=args.mu, sigma_L=args.sigma_l,
                                     sigma_H=args.sigma_h, p_LL=args.p_ll, p_HH=args.p_hh,
                                     beta=args.beta, W_0=args.w0)
        rows = []
        for tau in cfgmod.float_list(args.tau):
            _check_level(tau)
            rows.extend(regime_example_solver(model, tau, args.grid).rows())
    else:
        if args.sigma is None:
            raise UsageError("oracle --example static requires --sigma")
        taus = cfgmod.float_list(args.tau)
        for tau in taus:
            _check_level(tau)
        rows = [{"tau": "", "regime": "", "alpha_star": d.alpha, "value": "",
                 "model": d.model, "parameter": d.parameter}
                for d in static_choice_comparator(args.mu, args.sigma, args.rf, tuple(taus))]
        for r, tau in zip(rows[3:], taus):
            r["tau"] = tau
            r["value"] = max(float(normal_quantile(tau, args.mu, args.sigma)), args.rf)
    path = out / "oracle.csv"
    write_oracle_csv(path, rows)
    _print_csv(path)
    return EXIT_OK


def cmd_dp(args) -> int:
    """Quantile value iteration on the discretised two-period problem against the corner rule."""
    out = _out_dir(args.out)
    _check_level(args.tau)
    q = normal_quantile(args.tau, args.mu, args.sigma)
    exact = corner_rule_value([q, q], args.rf, args.beta, args.w0).value
    rows = []
    for n in cfgmod.int_list(args.atoms if "," in args.atoms else args.atoms + ","):
        atoms, probs = equiprobable_normal_atoms(n, args.mu, args.sigma)
        prob = iid_wealth_mdp(atoms, probs, args.rf, args.beta, args.n_alpha, 2, args.w0)
        res = value_iteration(prob.mdp, args.tau)
        value = prob.to_wealth_value(float(res.values[0]))
        greedy = prob.alphas[int(res.policy[0])]
        rows.append({"atoms": n, "value": value, "corner_rule": exact,
                     "abs_error": abs(value - exact), "alpha0": greedy, "sweeps": res.sweeps})
    path = out / "dp.csv"
    pd.DataFrame(rows).to_csv(path, index=False, encoding="utf-8")
    _print_csv(path)
    return EXIT_OK


def _check_level(tau):
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"quantile level {tau} must lie in (0, 1)")


# ---------------------------------------------------------------------------
# Training and evaluation

def _gather_values(args, env_name=None) -> dict:
    values = cfgmod.read_config(args.config) if args.config else {}
    flags = {"env": env_name or args.env, "data": args.data, "scenario": args.scenario,
             "cost": args.cost, "taus": args.taus, "seeds": args.seeds}
    if args.tau is not None:
        flags["taus"] = args.tau
    if args.seed is not None:
        flags["seeds"] = f"{args.seed},"
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    values.update(cfgmod.parse_overrides(args.overrides))
    return values


def build_envs(cfg, env: dict):
    """``(train_env, validation_env, evaluation_env)`` for a resolved configuration."""
    name = env["env"]
    if name == "regime":
        start = {"": None, "L": 0, "H": 1, "0": 0, "1": 1}.get(str(env["start_regime"]))
        if start is None and env["start_regime"] not in ("", None):
            raise ConfigError("start_regime must be empty, L or H")
        model = TwoPeriodRegimeModel(R_f=env["risk_free"], beta=cfg.beta)
        e = RegimeEnv(model, start, env["reward_scale"])
        return e, e, e
    if name == "rs-var":
        model = default_rs_var_model(env["scenario"], env["risk_free"])
        e = RsVarEnv(model, env["cost"], env["horizon"], cfg.beta, env["reward_scale"])
        ev = RsVarEnv(model, env["cost"], cfg.eval_horizon, cfg.beta, env["reward_scale"])
        return e, e, ev
    if not env["data"]:
        raise ConfigError("the historical environment needs data = <returns csv>")
    data = load_returns_csv(env["data"], env["ffill"])
    tr, va, te = split_data(len(data), (env["train_frac"], env["val_frac"]))
    cost = CostSchedule(env["cost"], env["interest"])

    def make(r):
        return HistoricalEnv(data, r.start, r.stop, cost, env["initial_wealth"],
                             env["reward_scale"], env["window"], env["include_cash"], cfg.beta)

    train_env = make(tr)
    val_env = make(va) if len(va) >= 2 + 1 and va.stop - 1 > train_env.start else train_env
    test_env = train_env
    if len(te) >= MIN_OBS + 1:
        test_env = make(range(te.start, te.stop))
    return train_env, val_env, test_env


def _run_name(tau, seed) -> str:
    return f"tau{tau:g}-seed{seed}"


def _write_history(path, history):
    rows = history.as_rows()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["episode"])
        w.writeheader()
        w.writerows(rows)


def weight_names(env) -> list:
    if isinstance(env, RegimeEnv):
        return ["risky", "cash"]
    if isinstance(env, RsVarEnv):
        return [f"sleeve{i + 1}" for i in range(env.n_assets)] + ["cash"]
    names = list(env.data.assets)
    return names + ["cash"] if env.include_cash else names


def evaluate_run(run_dir, actor=None, critic=None) -> dict:
    """Evaluate a run directory's best checkpoint and (re)write its output CSVs."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.txt"
    if not cfg_path.exists():
        raise ConfigError(f"{run_dir} is not a run directory (no config.txt)")
    cfg, env = cfgmod.resolve(cfgmod.read_config(cfg_path))
    if actor is None:
        actor, critic, _ = load_checkpoint(run_dir / "checkpoint_best")
    _, _, eval_env = build_envs(cfg, env)
    n_paths = 1 if isinstance(eval_env, HistoricalEnv) else cfg.eval_paths
    traj = evaluate(actor, critic, eval_env, int(env["seed"]), n_paths)
    names = weight_names(eval_env)
    pd.DataFrame(traj.rows(names)).to_csv(run_dir / "trajectory.csv", index=False,
                                          encoding="utf-8")
    curve = icdf_curve(traj.values)
    icdf = icdf_frame({run_dir.name: curve}, critic.grid.levels)
    icdf.to_csv(run_dir / "icdf.csv", index_label="run", encoding="utf-8")
    regime_names = None
    if isinstance(eval_env, RegimeEnv):
        regime_names = ["L", "H"]
    elif isinstance(eval_env, RsVarEnv):
        regime_names = eval_env.model.regime_names
    ws = weight_summary(traj.weights, traj.regime, names, regime_names)
    ws.to_csv(run_dir / "weights.csv", index_label="row", encoding="utf-8")
    out = {"weights": ws, "icdf": curve, "trajectory": traj}
    if isinstance(eval_env, HistoricalEnv):
        wealth = np.concatenate([[eval_env.W_0], traj.wealth])
        returns = wealth[1:] / wealth[:-1] - 1.0
        if returns.size >= MIN_OBS:
            summary = performance_summary(returns)
            table = pd.Series(summary.as_rows(), name=run_dir.name)
            table.to_csv(run_dir / "metrics.csv", index_label="metric", encoding="utf-8")
            out["metrics"] = table
    return out


def _train_one(cfg, env: dict, run_dir: Path, model_based: bool):
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfgmod.render(cfg, env), encoding="utf-8")
    train_env, val_env, _ = build_envs(cfg, env)
    seed = int(env["seed"])
    meta = {"tau": cfg.tau, "seed": seed, "env": env["env"]}
    try:
        if model_based:
            res = train_model_based(train_env, cfg, seed)
        else:
            res = train(train_env, cfg, seed, val_env)
    except DivergenceError as exc:
        if exc.checkpoint is not None:
            save_checkpoint(run_dir / "checkpoint_last", *exc.checkpoint,
                            meta={**meta, "diverged_at": exc.episode})
        log.error("%s: %s", run_dir.name, exc)
        raise
    _write_history(run_dir / "history.csv", res.history)
    save_checkpoint(run_dir / "checkpoint_best", res.actor, res.critic,
                    meta={**meta, "episode": res.history.best_episode})
    save_checkpoint(run_dir / "checkpoint_last", res.last_actor, res.last_critic, meta=meta)
    return evaluate_run(run_dir, res.actor, res.critic)


def _threads() -> int:
    raw = os.environ.get("QPRL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"QPRL_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


def run_training(values: dict, out, model_based: bool) -> int:
    base_cfg, env = cfgmod.resolve(values)
    taus = cfgmod.float_list(env["taus"])
    seeds = cfgmod.int_list(env["seeds"])
    if not taus or not seeds:
        raise ConfigError("need at least one tau and one seed")
    out = _out_dir(out)
    jobs = []
    for tau in taus:
        for seed in seeds:
            vals = dict(values, tau=str(tau), taus=f"{tau!r}", seeds=f"{seed},", seed=str(seed))
            cfg, env_s = cfgmod.resolve(vals)
            jobs.append((tau, seed, cfg, env_s))
    # fail fast on configuration and data problems before starting any run
    build_envs(*jobs[0][2:])

    def work(job):
        tau, seed, cfg, env_s = job
        return tau, seed, _train_one(cfg, env_s, out / _run_name(tau, seed), model_based)

    results, diverged = [], []
    with ThreadPoolExecutor(max_workers=min(_threads(), len(jobs))) as pool:
        futures = [pool.submit(work, j) for j in jobs]
        for fut, job in zip(futures, jobs):
            try:
                results.append(fut.result())
            except DivergenceError:
                diverged.append(_run_name(job[0], job[1]))
    if results:
        rows = []
        for tau, seed, res in results:
            row = res["weights"].loc["all"]
            rows.append(pd.Series(row.to_numpy(), index=row.index, name=_run_name(tau, seed)))
        per_run = pd.DataFrame(rows)
        per_tau = pd.DataFrame(
            [per_run.loc[[_run_name(t, s) for t, s, _ in results if t == tau]].mean()
             .rename(f"tau{tau:g}-mean") for tau in dict.fromkeys(t for t, _, _ in results)])
        pd.concat([per_run, per_tau]).to_csv(out / "weights.csv", index_label="run",
                                             encoding="utf-8")
        print(pd.concat([per_run, per_tau]).round(4).to_string())
    if diverged:
        print(f"diverged: {', '.join(diverged)}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_train(args) -> int:
    values = _gather_values(args)
    if values.get("env") == "rs-var":
        raise ConfigError("use train-sim for the rs-var environment")
    return run_training(values, args.out, model_based=False)


def cmd_train_sim(args) -> int:
    return run_training(_gather_values(args, "rs-var"), args.out, model_based=True)


def cmd_evaluate(args) -> int:
    res = evaluate_run(args.run)
    print(res["weights"].round(4).to_string())
    if "metrics" in res:
        print(res["metrics"].round(4).to_string())
    return EXIT_OK


def cmd_report(args) -> int:
    """Combine run directories: one metrics column per run, weight rows, inverse-CDF rows, figures."""
    from . import plotting

    out = _out_dir(args.out)
    runs = [Path(r) for r in args.runs.split(",") if r.strip()]
    if not runs:
        raise ConfigError("--runs needs at least one run directory")
    labels = _labels(runs)
    metrics, weights, icdfs, wealth = [], [], [], {}
    for run, label in zip(runs, labels):
        if not (run / "config.txt").exists():
            raise ConfigError(f"{run} is not a run directory")
        m = run / "metrics.csv"
        if m.exists():
            metrics.append(pd.read_csv(m, index_col=0).iloc[:, 0].rename(label))
        w = pd.read_csv(run / "weights.csv", index_col=0)
        w.index = [f"{label}/{i}" for i in w.index]
        weights.append(w)
        ic = pd.read_csv(run / "icdf.csv", index_col=0)
        ic.index = [label]
        icdfs.append(ic)
        traj = pd.read_csv(run / "trajectory.csv")
        wealth[label] = traj.loc[traj["path"] == 0, "wealth"].to_numpy()
    if metrics:
        pd.concat(metrics, axis=1).to_csv(out / "metrics.csv", index_label="metric",
                                          encoding="utf-8")
    wdf = pd.concat(weights)
    wdf.to_csv(out / "weights.csv", index_label="row", encoding="utf-8")
    idf = pd.concat(icdfs)
    idf.to_csv(out / "icdf.csv", index_label="run", encoding="utf-8")
    plotting.plot_wealth(wealth, out / "wealth.png")
    plotting.plot_icdf(idf, out / "icdf.png")
    plotting.plot_weights(wdf[[i.endswith("/all") for i in wdf.index]], out / "weights.png")
    if metrics:
        print(pd.concat(metrics, axis=1).round(4).to_string())
    return EXIT_OK


def _labels(runs) -> list:
    names = [r.name for r in runs]
    if len(set(names)) == len(names):
        return names
    return [str(r) for r in runs]


# ---------------------------------------------------------------------------
# Plumbing

def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {p}: {exc}") from exc
    return p


def _print_csv(path):
    print(Path(path).read_text(encoding="utf-8"), end="")


def _add_run_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", help="returns CSV (historical environment)")
    p.add_argument("--scenario", help="rs-var transition scenario")
    p.add_argument("--cost", type=float, help="proportional transaction cost rate")
    p.add_argument("--taus", help="comma-separated quantile levels")
    p.add_argument("--tau", help="single quantile level (same as --taus)")
    p.add_argument("--seeds", help="seed count, or comma-separated seed list")
    p.add_argument("--seed", type=int, help="single seed")
    p.add_argument("overrides", nargs="*", metavar="key=value", help="configuration overrides")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qprl", description="Quantile-preference portfolio learning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("oracle", help="closed-form and brute-force allocation oracles")
    p.add_argument("--example", required=True, choices=("regime", "static"))
    p.add_argument("--tau", default="0.1,0.5,0.9")
    p.add_argument("--out", default=".")
    p.add_argument("--mu", type=float, default=1.1)
    p.add_argument("--sigma", type=float, help="return volatility (static example)")
    p.add_argument("--rf", type=float, default=1.04)
    p.add_argument("--sigma-l", type=float, default=0.03)
    p.add_argument("--sigma-h", type=float, default=0.051)
    p.add_argument("--p-ll", type=float, default=0.7)
    p.add_argument("--p-hh", type=float, default=0.7)
    p.add_argument("--beta", type=float, default=0.99)
    p.add_argument("--w0", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=1001)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("dp", help="tabular quantile value iteration against the corner rule")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--mu", type=float, default=1.1)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--rf", type=float, default=1.04)
    p.add_argument("--beta", type=float, default=0.99)
    p.add_argument("--w0", type=float, default=1.0)
    p.add_argument("--atoms", default="10,40,160")
    p.add_argument("--n-alpha", type=int, default=11)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_dp)

    p = sub.add_parser("train", help="train on the historical or regime environment")
    _add_run_flags(p)
    p.add_argument("--env", choices=("historical", "regime"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-sim", help="model-based training on the regime-switching VAR")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train_sim, env=None)

    p = sub.add_parser("evaluate", help="re-evaluate a run directory's best checkpoint")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="combine run directories into tables and figures")
    p.add_argument("--runs", required=True, help="comma-separated run directories")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qprl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"qprl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"qprl: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DomainError) as exc:
        print(f"qprl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QprlError as exc:
        print(f"qprl: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
