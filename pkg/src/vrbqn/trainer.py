"""Training and evaluation loops for the radial-basis Q-network agent."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigurationError
from .qlearn import QHead, adam_step, greedy_action, loss_and_gradient
from .rbf import RbfLayer, activate, activate_state
from .replay import ReplayBuffer, Transition

LOG_COLUMNS = ("step", "episode", "return", "loss", "epsilon", "alive_steps")


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    ``epsilon_schedule`` is ``(start, end, decay_start, decay_steps)``: epsilon
    stays at ``start`` until ``decay_start`` then moves linearly to ``end``
    over ``decay_steps`` steps. The default (all zero) is pure greedy play.
    ``target_update_period=None`` bootstraps from the live head.
    """

    total_steps: int = 100_000
    batch_size: int = 256
    learning_rate: float = 0.01
    gamma: float = 0.99
    epsilon_schedule: tuple = (0.0, 0.0, 0, 0)
    target_update_period: int = None
    replay_capacity: int = 100_000
    eval_episodes: int = 100
    seeds: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.total_steps < 0:
            raise ConfigurationError("total_steps must be >= 0")
        if self.batch_size <= 0 or self.replay_capacity <= 0:
            raise ConfigurationError("batch_size and replay_capacity must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        start, end, decay_start, decay_steps = self.epsilon_schedule
        if not (0.0 <= start <= 1.0 and 0.0 <= end <= 1.0):
            raise ConfigurationError("epsilon values must lie in [0, 1]")
        if decay_start < 0 or decay_steps < 0:
            raise ConfigurationError("epsilon decay steps must be >= 0")
        self.epsilon_schedule = (float(start), float(end), int(decay_start), int(decay_steps))
        if self.target_update_period is not None and self.target_update_period <= 0:
            raise ConfigurationError("target_update_period must be positive")
        if self.eval_episodes <= 0:
            raise ConfigurationError("eval_episodes must be positive")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")

    def epsilon(self, step: int) -> float:
        start, end, decay_start, decay_steps = self.epsilon_schedule
        if step < decay_start:
            return start
        if decay_steps == 0:
            return end
        frac = min(1.0, (step - decay_start) / decay_steps)
        return start + frac * (end - start)


def weight_init(head: QHead) -> QHead:
    """Zero all weights (and the optimizer state) of ``head`` in place."""
    head.weights = np.zeros_like(head.weights)
    head.adam_m = np.zeros_like(head.weights)
    head.adam_v = np.zeros_like(head.weights)
    head.step_count = 0
    return head


def _check_geometry(env, layer: RbfLayer):
    if tuple(env.frame_shape) != layer.frame_shape:
        raise ConfigurationError(
            f"layer geometry {layer.frame_shape} does not match environment frames {env.frame_shape}"
        )


def _episode_seeds(seed):
    rng = np.random.default_rng([int(seed), 0])
    while True:
        yield int(rng.integers(0, 2**63 - 1))


def train(env, layer: RbfLayer, config: TrainConfig, seed: int = None, replay: ReplayBuffer = None):
    """Run Q-learning with experience replay on cached RBF features.

    Each agent step acts from the current features, steps the environment,
    stores the feature-space transition and, once the buffer holds
    ``batch_size`` transitions, takes one Adam step on a uniform batch.

    Returns ``(head, log)``; ``log`` has one dict per finished episode with
    the keys in ``LOG_COLUMNS``.
    """
    _check_geometry(env, layer)
    seed = config.seeds[0] if seed is None else seed
    n_features = layer.n_neurons * env.config.stack
    head = weight_init(QHead.zeros(env.n_actions, n_features, learning_rate=config.learning_rate))
    target = head.copy() if config.target_update_period else None
    replay = replay if replay is not None else ReplayBuffer(config.replay_capacity)
    agent_rng = np.random.default_rng([int(seed), 1])
    episodes = _episode_seeds(seed)
    log = []
    if config.total_steps == 0:
        return head, log

    n = layer.n_neurons
    state = env.reset(next(episodes))
    feats = activate_state(layer, state)
    episode, ep_return, ep_losses = 0, 0.0, []
    for step in range(config.total_steps):
        eps = config.epsilon(step)
        action = greedy_action(head, feats, agent_rng, eps)
        _, reward, terminal = env.step(action)
        next_feats = np.concatenate([feats[n:], activate(layer, env.newest_frame)])
        replay.push(Transition(feats, action, reward, next_feats, terminal))
        ep_return += reward
        if len(replay) >= config.batch_size:
            batch = replay.sample_uniform(config.batch_size, agent_rng)
            loss, grad = loss_and_gradient(batch, head, config.gamma, target_head=target)
            adam_step(head, grad)
            ep_losses.append(loss)
            if target is not None and head.step_count % config.target_update_period == 0:
                target = head.copy()
        if terminal:
            log.append(
                {
                    "step": step + 1,
                    "episode": episode,
                    "return": ep_return,
                    "loss": float(np.mean(ep_losses)) if ep_losses else math.nan,
                    "epsilon": eps,
                    "alive_steps": env.ticks,
                }
            )
            episode += 1
            ep_return, ep_losses = 0.0, []
            feats = activate_state(layer, env.reset(next(episodes)))
        else:
            feats = next_feats
    return head, log


def window_mean_return(log, total_steps: int, window: int = 1000) -> float:
    """Mean return of episodes that finished within the last ``window`` steps."""
    rets = [row["return"] for row in log if row["step"] > total_steps - window]
    return float(np.mean(rets)) if rets else math.nan


def write_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in log:
            writer.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


@dataclass
class SeedResult:
    seed: int
    mean_return: float
    std_return: float
    mean_alive_steps: float
    episodes: int


@dataclass
class EvalReport:
    per_seed: list
    mean_return: float
    std_return: float
    mean_alive_steps: float
    episodes: int
    returns: np.ndarray = field(repr=False, default=None)

    def rows(self):
        for r in self.per_seed:
            yield asdict(r)
        yield {
            "seed": "all",
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "mean_alive_steps": self.mean_alive_steps,
            "episodes": self.episodes,
        }

    def write_csv(self, path) -> None:
        cols = ("seed", "mean_return", "std_return", "mean_alive_steps", "episodes")
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _random_episode(env, rng, episode_seed):
    env.reset(episode_seed)
    total, done = 0.0, False
    while not done:
        _, reward, done = env.step(env.random_action(rng))
        total += reward
    return total, env.ticks


def _greedy_episode(env, layer, head, episode_seed):
    n = layer.n_neurons
    feats = activate_state(layer, env.reset(episode_seed))
    total, done = 0.0, False
    while not done:
        _, reward, done = env.step(greedy_action(head, feats))
        total += reward
        # only the newest frame changed since the previous decision
        feats = np.concatenate([feats[n:], activate(layer, env.newest_frame)])
    return total, env.ticks


def _evaluate_seed(env, layer, head, episodes, seed, policy):
    ep_seeds = _episode_seeds(seed)
    rng = np.random.default_rng([int(seed), 4])
    returns, alive = [], []
    for _ in range(episodes):
        if policy == "greedy":
            r, t = _greedy_episode(env, layer, head, next(ep_seeds))
        else:
            r, t = _random_episode(env, rng, next(ep_seeds))
        returns.append(r)
        alive.append(t)
    return np.array(returns), np.array(alive, dtype=np.float64)


def evaluate(env, layer: RbfLayer, head: QHead, episodes: int, seeds, policy: str = "greedy") -> EvalReport:
    """Roll out ``episodes`` episodes per seed without learning.

    ``policy="greedy"`` plays ``argmax Q`` (epsilon 0); ``policy="random"``
    plays uniformly random actions and ignores ``head``. Aggregate statistics
    pool every episode of every seed.
    """
    if episodes <= 0:
        raise ConfigurationError("episodes must be positive")
    if policy not in ("greedy", "random"):
        raise ConfigurationError(f"unknown policy {policy!r}")
    if policy == "greedy":
        _check_geometry(env, layer)
        if head.n_features != layer.n_neurons * env.config.stack:
            raise ConfigurationError("head feature size does not match layer and frame stack")
    per_seed, all_returns, all_alive = [], [], []
    for seed in seeds:
        returns, alive = _evaluate_seed(env, layer, head, episodes, seed, policy)
        per_seed.append(
            SeedResult(int(seed), float(returns.mean()), float(returns.std()), float(alive.mean()), episodes)
        )
        all_returns.append(returns)
        all_alive.append(alive)
    returns = np.concatenate(all_returns)
    alive = np.concatenate(all_alive)
    return EvalReport(
        per_seed,
        float(returns.mean()),
        float(returns.std()),
        float(alive.mean()),
        int(returns.size),
        returns,
    )
