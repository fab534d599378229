"""Visual radial basis Q-network: a fixed random RBF layer over raw frames
feeding a linear Q-head trained with Q-learning and experience replay.

The scikit-learn style wrappers live in :mod:`vrbqn.estimators`.
"""
from .analysis import classify_neurons, prune_to_active
from .envs import EnvConfig, GatherEnv, ShooterEnv, make_env
from .exceptions import (
    ConfigurationError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
    VRBQNError,
)
from .qlearn import QHead, TdBatch, adam_step, greedy_action, loss_and_gradient, q_values
from .rbf import RbfLayer, RbfNeuron, activate, activate_state, sample_layer
from .replay import ReplayBuffer, Transition
from .trainer import EvalReport, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "EnvConfig",
    "EvalReport",
    "FormatError",
    "GatherEnv",
    "NumericError",
    "QHead",
    "RbfLayer",
    "RbfNeuron",
    "ReplayBuffer",
    "ShapeError",
    "ShooterEnv",
    "StateError",
    "TdBatch",
    "TrainConfig",
    "Transition",
    "VRBQNError",
    "activate",
    "activate_state",
    "adam_step",
    "classify_neurons",
    "evaluate",
    "greedy_action",
    "loss_and_gradient",
    "make_env",
    "prune_to_active",
    "q_values",
    "sample_layer",
    "train",
]
