"""Linear Q-head, TD loss with its analytic semi-gradient, and Adam."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, FormatError, NumericError, ShapeError

CHECKPOINT_MAGIC = b"VRBQNCKP"
CHECKPOINT_VERSION = 1
_HEADER = "<8sIIIqdddd"


@dataclass
class QHead:
    """``n_actions x n_features`` weight matrix plus Adam state.

    Q(s, a) is the dot product of row ``a`` with the feature vector; there is
    no bias term.
    """

    weights: np.ndarray
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    adam_m: np.ndarray = field(default=None)
    adam_v: np.ndarray = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or 0 in self.weights.shape:
            raise ShapeError("weights must be a non-empty 2-D array")
        if not np.all(np.isfinite(self.weights)):
            raise NumericError("weights must be finite")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        for name in ("adam_m", "adam_v"):
            value = getattr(self, name)
            if value is None:
                value = np.zeros_like(self.weights)
            value = np.array(value, dtype=np.float64)
            if value.shape != self.weights.shape:
                raise ShapeError(f"{name} must match the weight shape")
            setattr(self, name, value)

    @classmethod
    def zeros(cls, n_actions: int, n_features: int, **kwargs) -> "QHead":
        return cls(np.zeros((n_actions, n_features)), **kwargs)

    @property
    def n_actions(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "QHead":
        return QHead(
            self.weights.copy(),
            self.learning_rate,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.adam_m.copy(),
            self.adam_v.copy(),
            self.step_count,
        )

    def __eq__(self, other):
        if not isinstance(other, QHead):
            return NotImplemented
        return (
            self.step_count == other.step_count
            and (self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps)
            == (other.learning_rate, other.adam_beta1, other.adam_beta2, other.adam_eps)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.adam_m, other.adam_m)
            and np.array_equal(self.adam_v, other.adam_v)
        )

    __hash__ = None


@dataclass
class TdBatch:
    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_features: np.ndarray
    terminal: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.next_features = np.asarray(self.next_features, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.intp)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ShapeError("features must have shape (B, F) with B > 0")
        b = self.features.shape[0]
        if self.next_features.shape != self.features.shape:
            raise ShapeError("next_features must match features")
        for name in ("actions", "rewards", "terminal"):
            if getattr(self, name).shape != (b,):
                raise ShapeError(f"{name} must have shape ({b},)")
        if np.any(self.actions < 0):
            raise ShapeError("action indices must be non-negative")

    def __len__(self):
        return self.features.shape[0]


def _check_features(head: QHead, features: np.ndarray):
    if features.shape[-1] != head.n_features:
        raise ShapeError(
            f"feature length {features.shape[-1]} does not match head ({head.n_features})"
        )


def q_values(head: QHead, features) -> np.ndarray:
    """Q-values for one feature vector ``(F,)`` or a batch ``(B, F)``."""
    features = np.asarray(features, dtype=np.float64)
    _check_features(head, features)
    return features @ head.weights.T


def _check_batch(batch: TdBatch, head: QHead):
    _check_features(head, batch.features)
    if np.any(batch.actions >= head.n_actions):
        raise ShapeError("action index out of range for this head")


def td_target(batch: TdBatch, head: QHead, gamma: float) -> np.ndarray:
    """Bootstrap targets; terminal rows never touch ``next_features``.

    ``head`` is whatever network provides the bootstrap values (the online
    head when no target network is used).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError("gamma must lie in [0, 1]")
    _check_features(head, batch.next_features)
    target = batch.rewards.copy()
    live = ~batch.terminal
    if np.any(live):
        next_q = q_values(head, batch.next_features[live])
        target[live] = batch.rewards[live] + gamma * next_q.max(axis=1)
    return target


def loss_and_gradient(batch: TdBatch, head: QHead, gamma: float, target_head: QHead = None):
    """Mean squared TD error and its gradient w.r.t. ``head.weights``.

    Targets are treated as constants (semi-gradient). Returns ``(loss, grad)``.
    """
    _check_batch(batch, head)
    target = td_target(batch, head if target_head is None else target_head, gamma)
    b = len(batch)
    pred = q_values(head, batch.features)[np.arange(b), batch.actions]
    err = target - pred
    loss = float(np.mean(err * err))
    coef = np.zeros((head.n_actions, b))
    coef[batch.actions, np.arange(b)] = (-2.0 / b) * err
    grad = coef @ batch.features
    return loss, grad


def adam_step(head: QHead, grad) -> QHead:
    """Apply one bias-corrected Adam update to ``head`` in place and return it."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != head.weights.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match {head.weights.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("gradient contains non-finite entries")
    b1, b2 = head.adam_beta1, head.adam_beta2
    t = head.step_count + 1
    m = b1 * head.adam_m + (1.0 - b1) * grad
    v = b2 * head.adam_v + (1.0 - b2) * (grad * grad)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    head.weights = head.weights - head.learning_rate * m_hat / (np.sqrt(v_hat) + head.adam_eps)
    head.adam_m = m
    head.adam_v = v
    head.step_count = t
    return head


def greedy_action(head: QHead, features, rng=None, epsilon: float = 0.0) -> int:
    """Epsilon-greedy action; ties in the argmax go to the lowest index.

    The generator is only consulted when ``epsilon > 0``.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigurationError("epsilon must lie in [0, 1]")
    if epsilon > 0.0:
        if rng is None:
            raise ConfigurationError("epsilon > 0 requires a random generator")
        if rng.random() < epsilon:
            return int(rng.integers(head.n_actions))
    return int(np.argmax(q_values(head, features)))


def checkpoint_to_bytes(head: QHead) -> bytes:
    header = struct.pack(
        _HEADER,
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        head.n_actions,
        head.n_features,
        head.step_count,
        head.learning_rate,
        head.adam_beta1,
        head.adam_beta2,
        head.adam_eps,
    )
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (head.weights, head.adam_m, head.adam_v)
    )
    return header + body


def checkpoint_from_bytes(data: bytes) -> QHead:
    size = struct.calcsize(_HEADER)
    if len(data) < size:
        raise FormatError("checkpoint truncated")
    magic, version, a, f, steps, lr, b1, b2, eps = struct.unpack_from(_HEADER, data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(data) != size + 3 * 8 * a * f:
        raise FormatError("checkpoint size does not match its header")
    flat = np.frombuffer(data, dtype="<f8", offset=size).astype(np.float64)
    w, m, v = flat.reshape(3, a, f)
    return QHead(w, lr, b1, b2, eps, m, v, int(steps))


def save_checkpoint(head: QHead, path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(head))


def load_checkpoint(path) -> QHead:
    return checkpoint_from_bytes(Path(path).read_bytes())
