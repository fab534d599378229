"""scikit-learn style wrappers around the featurizer and the full agent."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .envs import EnvConfig, make_env
from .exceptions import ShapeError
from .qlearn import greedy_action, q_values
from .rbf import activate_state, sample_layer
from .trainer import TrainConfig, evaluate, train


def _as_states(X) -> np.ndarray:
    """``(M, K, h, w, c)`` view of a batch of stacked states.

    A 4-D input is read as gray stacks ``(M, K, h, w)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 4:
        X = X[..., None]
    if X.ndim != 5:
        raise ShapeError(f"expected states shaped (M, K, h, w[, c]), got {X.shape}")
    return X


def _seed(random_state):
    if random_state is None or isinstance(random_state, (int, np.integer)):
        return random_state
    raise ValueError("random_state must be None or an int")


class RBFFeatureExtractor(TransformerMixin, BaseEstimator):
    """Fixed random RBF layer as a transformer.

    ``fit`` only reads the frame geometry from ``X`` and samples the layer;
    the layer is never trained. ``transform`` maps each stacked state to its
    ``K * n_neurons`` activations, oldest frame first.
    """

    def __init__(self, n_neurons=256, sigma_xy_range=(0.02, 0.2), sigma_z=1.0, random_state=None):
        self.n_neurons = n_neurons
        self.sigma_xy_range = sigma_xy_range
        self.sigma_z = sigma_z
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _as_states(X)
        _, k, h, w, c = X.shape
        self.layer_ = sample_layer(
            _seed(self.random_state), self.n_neurons, w, h, c, tuple(self.sigma_xy_range), self.sigma_z
        )
        self.n_frames_ = k
        self.n_features_out_ = k * self.n_neurons
        return self

    def transform(self, X):
        check_is_fitted(self, "layer_")
        X = _as_states(X)
        if X.shape[1] != self.n_frames_:
            raise ShapeError(f"fitted on stacks of {self.n_frames_} frames, got {X.shape[1]}")
        return np.stack([activate_state(self.layer_, s) for s in X]) if len(X) else np.zeros((0, self.n_features_out_))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "layer_")
        return np.array([f"f{k}_n{i}" for k in range(self.n_frames_) for i in range(self.n_neurons)], dtype=object)


class VRBQNAgent(BaseEstimator):
    """Random RBF features plus a linear Q-head trained by Q-learning.

    ``fit`` takes an environment (or builds one from ``scenario`` and the
    geometry parameters when ``X`` is None). ``predict`` returns greedy
    actions and ``score`` the mean greedy return over ``eval_episodes``.
    """

    def __init__(
        self,
        scenario="shooter",
        width=32,
        height=32,
        channels=1,
        skip_frames=6,
        stack=2,
        n_neurons=256,
        sigma_xy_range=(0.02, 0.2),
        sigma_z=1.0,
        total_steps=20_000,
        batch_size=256,
        learning_rate=0.01,
        gamma=0.99,
        target_update_period=None,
        replay_capacity=100_000,
        eval_episodes=100,
        random_state=0,
    ):
        self.scenario = scenario
        self.width = width
        self.height = height
        self.channels = channels
        self.skip_frames = skip_frames
        self.stack = stack
        self.n_neurons = n_neurons
        self.sigma_xy_range = sigma_xy_range
        self.sigma_z = sigma_z
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.target_update_period = target_update_period
        self.replay_capacity = replay_capacity
        self.eval_episodes = eval_episodes
        self.random_state = random_state

    def _make_env(self):
        config = EnvConfig(self.width, self.height, self.channels, self.skip_frames, self.stack)
        return make_env(self.scenario, config)

    def _train_config(self):
        seed = 0 if self.random_state is None else _seed(self.random_state)
        return TrainConfig(
            total_steps=self.total_steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            gamma=self.gamma,
            target_update_period=self.target_update_period,
            replay_capacity=self.replay_capacity,
            eval_episodes=self.eval_episodes,
            seeds=[seed],
        )

    def fit(self, X=None, y=None):
        env = self._make_env() if X is None else X
        h, w, c = env.frame_shape
        config = self._train_config()
        self.layer_ = sample_layer(
            config.seeds[0], self.n_neurons, w, h, c, tuple(self.sigma_xy_range), self.sigma_z
        )
        self.head_, self.log_ = train(env, self.layer_, config)
        self.n_actions_ = env.n_actions
        return self

    def _features(self, X):
        X = _as_states(X)
        return np.stack([activate_state(self.layer_, s) for s in X])

    def decision_function(self, X):
        """Q-values, shape ``(M, n_actions)``."""
        check_is_fitted(self, "head_")
        return q_values(self.head_, self._features(X))

    def predict(self, X):
        check_is_fitted(self, "head_")
        return np.array([greedy_action(self.head_, f) for f in self._features(X)], dtype=np.intp)

    def evaluate(self, env=None, episodes=None, seeds=(0,)):
        check_is_fitted(self, "head_")
        env = self._make_env() if env is None else env
        return evaluate(env, self.layer_, self.head_, episodes or self.eval_episodes, list(seeds))

    def score(self, X=None, y=None):
        """Mean greedy episode return on ``X`` (an environment) or a fresh one."""
        return self.evaluate(X).mean_return
