"""Episodic on-policy quantile actor-critic training, evaluation and data splits."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .actor import ActorParams, act, actor_gradients, init_actor, mean_action
from .critic import (CriticParams, TransitionBatch, critic_loss, init_critic, soft_update,
                     td_errors, value_vector)
from .environments import RegimeVarModel, portfolio_transition
from .errors import ConfigError, DivergenceError, NumericalError
from .mathcore import PolynomialDecay, make_optimizer, make_rng, normal_quantile
from .quantile_dp import QuantileGrid

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    beta: float = 0.99
    episodes: int = 50
    min_epochs: int = 15
    eval_every: int = 3
    patience: int = 2
    critic_lr_start: float = 0.01
    critic_lr_end: float = 0.001
    actor_lr_start: float = 0.005
    actor_lr_end: float = 0.001
    lr_decay: float = 1.5
    rho: float = 0.01
    order_penalty: float = 5.0
    entropy_coef: float = 0.0
    sigma: float = 0.5
    td_scale: float = 10.0
    tau: float = 0.5
    levels: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    hidden: tuple = (16, 16)
    l2: float = 1e-4
    head: str = "gaussian"
    optimizer: str = "sgd"
    clip_norm: float | None = None
    actor_signal: str = "weighted_td"
    literal_sign: bool = False
    scale_actor_delta: bool = True
    per_step: bool = False
    updates_per_episode: int = 1
    paths_per_episode: int = 1
    # model-based buffer grids
    weight_levels: int = 5
    return_points: int = 5
    eval_paths: int = 64
    eval_horizon: int = 64

    def __post_init__(self):
        self.levels = tuple(float(x) for x in self.levels)
        self.hidden = tuple(int(x) for x in self.hidden)
        if not 0.0 < self.beta < 1.0:
            raise ConfigError("beta must lie in (0, 1)")
        if self.episodes < self.min_epochs:
            raise ConfigError("episodes must be >= min_epochs")
        if self.patience < 1 or self.eval_every < 1:
            raise ConfigError("patience and eval_every must be >= 1")
        if self.updates_per_episode < 1 or self.paths_per_episode < 1:
            raise ConfigError("updates_per_episode and paths_per_episode must be >= 1")
        self.grid  # validates tau against the levels

    @property
    def grid(self) -> QuantileGrid:
        try:
            return QuantileGrid.with_target(self.levels, self.tau)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]


def regime_config(**kw) -> TrainConfig:
    """Defaults used for the two-period regime environment."""
    base = dict(paths_per_episode=512, updates_per_episode=1, episodes=1000, min_epochs=1000,
                clip_norm=5.0)
    base.update(kw)
    return TrainConfig(**base)


def rs_var_config(**kw) -> TrainConfig:
    """Defaults for model-based training on the regime-switching VAR."""
    base = dict(episodes=10, min_epochs=10, beta=0.96, hidden=(32, 32), head="dirichlet",
                order_penalty=5.0, updates_per_episode=40)
    base.update(kw)
    return TrainConfig(**base)


@dataclass
class EpisodeRecord:
    episode: int
    critic_loss: float
    actor_loss: float
    mean_reward: float
    critic_lr: float
    actor_lr: float
    val_loss: float = float("nan")
    val_critic: float = float("nan")
    val_actor: float = float("nan")
    best: bool = False


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    stopped_early: bool = False
    best_episode: int = -1

    def as_rows(self) -> list:
        return [asdict(r) for r in self.records]


@dataclass
class Learner:
    actor: ActorParams
    critic: CriticParams
    actor_opt: object
    critic_opt: object
    config: TrainConfig

    def snapshot(self):
        return self.actor.copy(), self.critic.copy()


def make_learner(n_features, n_weights, config: TrainConfig, rng, total_updates: int) -> Learner:
    critic = init_critic(n_features, config.grid, rng, config.hidden, config.l2,
                         config.order_penalty, config.rho)
    actor = init_actor(n_features, n_weights, rng, config.head, config.hidden, config.l2,
                       config.sigma, config.entropy_coef)
    steps = max(total_updates, 1)
    c_opt = make_optimizer(config.optimizer, PolynomialDecay(config.critic_lr_start,
                           config.critic_lr_end, config.lr_decay, steps), config.clip_norm)
    a_opt = make_optimizer(config.optimizer, PolynomialDecay(config.actor_lr_start,
                           config.actor_lr_end, config.lr_decay, steps), config.clip_norm)
    return Learner(actor, critic, a_opt, c_opt, config)


def _check_finite(loss, learner: Learner, episode, checkpoint):
    if not np.isfinite(loss) or not learner.critic.online.is_finite() or not learner.actor.net.is_finite():
        raise DivergenceError(f"non-finite loss or parameters at episode {episode}",
                              checkpoint=checkpoint, episode=episode)


def update(learner: Learner, batch: TransitionBatch):
    """One critic step then one actor step on the same batch; then soft-update the target."""
    cfg = learner.config
    closs, cgrads = critic_loss(batch, learner.critic, cfg.beta, cfg.td_scale)
    learner.critic_opt.step(learner.critic.online, cgrads)
    scale = cfg.td_scale if cfg.scale_actor_delta else 1.0
    delta = td_errors(batch, learner.critic, cfg.beta, scale)[:, cfg.grid.target_index]
    aloss, agrads = actor_gradients(learner.actor, batch.features, batch.action, delta, cfg.tau,
                                    batch.q, cfg.actor_signal, cfg.literal_sign)
    learner.actor_opt.step(learner.actor.net, agrads)
    soft_update(learner.critic)
    return closs, aloss


def evaluation_losses(learner: Learner, batch: TransitionBatch):
    """Critic loss and actor surrogate on a batch without updating anything."""
    cfg = learner.config
    closs, _ = critic_loss(batch, learner.critic, cfg.beta, cfg.td_scale)
    scale = cfg.td_scale if cfg.scale_actor_delta else 1.0
    delta = td_errors(batch, learner.critic, cfg.beta, scale)[:, cfg.grid.target_index]
    aloss, _ = actor_gradients(learner.actor, batch.features, batch.action, delta, cfg.tau,
                               batch.q, cfg.actor_signal, cfg.literal_sign)
    return closs, aloss


# ---------------------------------------------------------------------------
# On-policy rollouts

def rollout(env, actor: ActorParams, rng, n_paths: int = 1) -> TransitionBatch:
    """Run one episode with sampled actions and stack its transitions."""
    state = env.reset(rng, n_paths)
    parts, done = [], False
    while not done:
        x = env.features(state)
        w, a, logp, _ = act(actor, x, rng)
        nxt, reward, done = env.step(state, w, rng)
        parts.append(TransitionBatch(x, a, w, np.atleast_1d(logp), np.asarray(reward, dtype=float),
                                     env.features(nxt), np.full(len(x), bool(done)),
                                     np.ones(len(x))))
        state = nxt
    return TransitionBatch.concat(parts)


@dataclass
class TrainResult:
    actor: ActorParams
    critic: CriticParams
    history: RunHistory
    last_actor: ActorParams
    last_critic: CriticParams


class _EarlyStopper:
    def __init__(self, config: TrainConfig):
        self.cfg = config
        self.best = np.inf
        self.bad = 0
        self.best_params = None
        self.best_episode = -1

    def observe(self, episode: int, stat: float, learner: Learner) -> tuple[bool, bool]:
        """Returns (improved, stop)."""
        improved = stat < self.best
        if improved:
            self.best, self.bad = stat, 0
            self.best_params = learner.snapshot()
            self.best_episode = episode
        else:
            self.bad += 1
        stop = episode + 1 >= self.cfg.min_epochs and self.bad >= self.cfg.patience
        return improved, stop


def _run_loop(learner: Learner, config: TrainConfig, make_batch, make_val_batch, rng):
    hist = RunHistory()
    stopper = _EarlyStopper(config)
    for ep in range(config.episodes):
        checkpoint = learner.snapshot()
        c_lr, a_lr = learner.critic_opt.lr, learner.actor_opt.lr
        closs = aloss = 0.0
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                batch = make_batch(ep)
                if config.per_step:
                    steps = [batch.subset(np.array([i])) for i in range(len(batch))]
                else:
                    steps = [batch] * config.updates_per_episode
                for b in steps:
                    closs, aloss = update(learner, b)
        except NumericalError as exc:
            raise DivergenceError(f"episode {ep}: {exc}", checkpoint=checkpoint, episode=ep) from exc
        _check_finite(closs + aloss, learner, ep, checkpoint)
        rec = EpisodeRecord(ep, closs, aloss, float(np.average(batch.reward, weights=batch.q)),
                            c_lr, a_lr)
        if (ep + 1) % config.eval_every == 0:
            vc, va = evaluation_losses(learner, make_val_batch())
            rec.val_critic, rec.val_actor = vc, va
            rec.val_loss = vc + abs(va)
            improved, stop = stopper.observe(ep, rec.val_loss, learner)
            rec.best = improved
            hist.records.append(rec)
            log.debug("episode %d critic %.4g actor %.4g val %.4g", ep, closs, aloss, rec.val_loss)
            if stop:
                hist.stopped_early = ep + 1 < config.episodes
                break
        else:
            hist.records.append(rec)
    last = learner.snapshot()
    if stopper.best_params is None:
        best = last
    else:
        best = stopper.best_params
        hist.best_episode = stopper.best_episode
    return TrainResult(best[0], best[1], hist, last[0], last[1])


def train(env, config: TrainConfig, seed: int = 0, val_env=None) -> TrainResult:
    """Episodic on-policy training with validation-based early stopping.

    Each episode's transitions form one batch; the critic steps first, then the
    actor with the target-level TD error from the updated critic.
    """
    rng = make_rng(seed)
    val_env = val_env or env
    steps = env.horizon * config.paths_per_episode if config.per_step else config.updates_per_episode
    learner = make_learner(env.feature_dim, env.action_dim, config, rng, config.episodes * steps)
    val_seed = int(rng.integers(2 ** 62))

    def make_batch(ep):
        return rollout(env, learner.actor, rng, config.paths_per_episode)

    def make_val_batch():
        return rollout(val_env, learner.actor, make_rng(val_seed), config.paths_per_episode)

    return _run_loop(learner, config, make_batch, make_val_batch, rng)


# ---------------------------------------------------------------------------
# Model-based training on the regime-switching VAR

def simplex_grid(n_coords: int, levels: int) -> np.ndarray:
    """All points of the simplex in ``n_coords`` dims with coordinates in steps of 1/(levels-1)."""
    m = levels - 1

    def rec(k, left):
        if k == 1:
            yield (left,)
            return
        for i in range(left + 1):
            for rest in rec(k - 1, left - i):
                yield (i, *rest)

    return np.array(list(rec(n_coords, m)), dtype=float) / m


def return_grid(model: RegimeVarModel, points: int) -> np.ndarray:
    """Per-asset points at evenly spaced quantiles of the stationary regime mixture."""
    pi = model.stationary()
    mean = pi @ model.c
    var = pi @ np.array([np.diag(S) for S in model.Sigma]) + pi @ (model.c - mean) ** 2
    levels = (np.arange(points) + 0.5) / points
    per_asset = [mean[i] + np.sqrt(var[i]) * normal_quantile(levels) for i in range(model.N)]
    mesh = np.meshgrid(*per_asset, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def build_model_buffer(env, actor: ActorParams, config: TrainConfig, rng) -> TransitionBatch:
    """Loop over (pre-trade weights, returns, regime) grid points, sample one action each,
    enumerate every next regime and weight the sample by its transition probability."""
    model: RegimeVarModel = env.model
    W = simplex_grid(model.N + 1, config.weight_levels)
    Rg = return_grid(model, config.return_points)
    K = model.K
    iw, ir, ik = np.meshgrid(np.arange(len(W)), np.arange(len(Rg)), np.arange(K), indexing="ij")
    w_pre, r_t, k = W[iw.ravel()], Rg[ir.ravel()], ik.ravel()
    x = env.state_features(w_pre, r_t, k)
    w, a, logp, _ = act(actor, x, rng)
    parts = []
    for k_next in range(K):
        r_next = model.draw_returns(r_t, k, rng)
        reward, drifted, _ = portfolio_transition(model, w, w_pre, r_next, env.cost.rate)
        x_next = env.state_features(drifted, r_next, np.full(len(k), k_next))
        parts.append(TransitionBatch(x, a, w, np.atleast_1d(logp), env.reward_scale * reward,
                                     x_next, np.zeros(len(k), dtype=bool), model.Q[k, k_next]))
    return TransitionBatch.concat(parts)


def train_model_based(env, config: TrainConfig, seed: int = 0) -> TrainResult:
    """Model-based variant: every epoch rebuilds an enumerated buffer from the current policy."""
    if config.beta != env.beta:
        env.beta = config.beta
    rng = make_rng(seed)
    learner = make_learner(env.feature_dim, env.action_dim, config, rng,
                           config.episodes * config.updates_per_episode)
    val_seed = int(rng.integers(2 ** 62))

    def make_batch(ep):
        return build_model_buffer(env, learner.actor, config, rng)

    def make_val_batch():
        return build_model_buffer(env, learner.actor, config, make_rng(val_seed))

    return _run_loop(learner, config, make_batch, make_val_batch, rng)


# ---------------------------------------------------------------------------
# Evaluation

@dataclass
class Trajectory:
    step: np.ndarray          # (n,)
    path: np.ndarray          # (n,)
    weights: np.ndarray       # (n, n_weights)
    wealth: np.ndarray        # wealth after the step
    reward: np.ndarray
    regime: np.ndarray | None
    values: np.ndarray        # critic heads at the pre-step state

    def rows(self, weight_names=None) -> list:
        names = weight_names or [f"w{i}" for i in range(self.weights.shape[1])]
        out = []
        for i in range(len(self.step)):
            row = {"path": int(self.path[i]), "step": int(self.step[i])}
            if self.regime is not None:
                row["regime"] = int(self.regime[i])
            row.update({n: float(v) for n, v in zip(names, self.weights[i])})
            row["reward"] = float(self.reward[i])
            row["wealth"] = float(self.wealth[i])
            out.append(row)
        return out


def evaluate(actor: ActorParams, critic: CriticParams, env, seed: int = 0, n_paths: int = 1,
             policy=None) -> Trajectory:
    """Roll the environment forward with mean actions (or a fixed ``policy(state)``)."""
    rng = make_rng(seed)
    state = env.reset(rng, n_paths)
    done = False
    steps, paths, ws, wealth, rewards, regimes, values = [], [], [], [], [], [], []
    while not done:
        x = env.features(state)
        w = mean_action(actor, x) if policy is None else np.atleast_2d(policy(state))
        values.append(value_vector(critic, x))
        if state.regime is not None:
            regimes.append(state.regime.copy())
        nxt, reward, done = env.step(state, w, rng)
        steps.append(np.full(n_paths, state.step))
        paths.append(np.arange(n_paths))
        ws.append(w)
        wealth.append(nxt.wealth)
        rewards.append(np.asarray(reward, dtype=float))
        state = nxt
    cat = np.concatenate
    return Trajectory(cat(steps), cat(paths), np.vstack(ws), cat(wealth), cat(rewards),
                      cat(regimes) if regimes else None, np.vstack(values))


def split_data(n_rows: int, fractions=(0.7, 0.15)):
    """Contiguous chronological (train, validation, test) index ranges."""
    f_train, f_val = fractions
    if f_train < 0 or f_val < 0 or f_train + f_val > 1.0 + 1e-12:
        raise ConfigError("split fractions must be nonnegative and sum to at most 1")
    n_train = int(round(n_rows * f_train))
    n_val = int(round(n_rows * f_val))
    if n_train < 2:
        raise ConfigError(f"{n_rows} rows are too few to split")
    n_val = min(n_val, n_rows - n_train)
    return (range(0, n_train), range(n_train, n_train + n_val),
            range(n_train + n_val, n_rows))
