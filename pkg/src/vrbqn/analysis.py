"""Neuron activity analysis: active/inactive split, activation differences,
single-neuron traces and pruning of inactive neurons."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .envs import write_pnm
from .exceptions import ShapeError, StateError
from .qlearn import QHead
from .rbf import RbfLayer, activate, activate_state

DEFAULT_THRESHOLD = 0.01


@dataclass
class NeuronClassification:
    """Active neurons (aN) exceed ``threshold`` on at least one calibration
    frame; inactive neurons (iN) never do."""

    active: np.ndarray
    inactive: np.ndarray
    threshold: float
    n_states: int
    max_activation: np.ndarray

    @property
    def n_neurons(self) -> int:
        return self.max_activation.shape[0]

    @property
    def active_fraction(self) -> float:
        return self.active.size / self.n_neurons

    def labels(self):
        return np.where(self.max_activation > self.threshold, "aN", "iN")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["neuron", "max_activation", "label"])
            for i, (m, lab) in enumerate(zip(self.max_activation, self.labels())):
                writer.writerow([i, repr(float(m)), lab])


def classification_from_max(max_activation, threshold=DEFAULT_THRESHOLD, n_states=0):
    max_activation = np.asarray(max_activation, dtype=np.float64)
    active = max_activation > threshold
    return NeuronClassification(
        np.flatnonzero(active), np.flatnonzero(~active), float(threshold), int(n_states), max_activation
    )


def read_classification(path) -> NeuronClassification:
    """Load a classification CSV written by :meth:`NeuronClassification.write_csv`.

    Labels in the file are authoritative; the threshold is not stored, so it
    is reported as NaN.
    """
    maxes, labels = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            maxes.append(float(row["max_activation"]))
            labels.append(row["label"])
    labels = np.array(labels)
    return NeuronClassification(
        np.flatnonzero(labels == "aN"),
        np.flatnonzero(labels != "aN"),
        float("nan"),
        0,
        np.array(maxes),
    )


def _frames_of(state, layer):
    state = np.asarray(state, dtype=np.float64)
    if state.ndim == 2 or state.shape == layer.frame_shape:
        return state[None]
    return state


def max_activations(layer: RbfLayer, states) -> tuple:
    """Per-neuron maximum over every frame slot of every state, and the state count."""
    best = None
    count = 0
    for state in states:
        for frame in _frames_of(state, layer):
            h = activate(layer, frame)
            best = h if best is None else np.maximum(best, h)
        count += 1
    if count == 0:
        raise StateError("at least one state is required")
    return best, count


def classify_neurons(layer: RbfLayer, states, threshold: float = DEFAULT_THRESHOLD) -> NeuronClassification:
    """Split neurons by whether any frame of any state drives them above ``threshold``."""
    best, count = max_activations(layer, states)
    return classification_from_max(best, threshold, count)


def collect_states(env, n_states: int, seed: int, max_skip: int = 12):
    """Visit states with a uniformly random policy and a random skip.

    Each action is repeated a uniform number of ticks in ``[0, max_skip]``.
    Returns ``(states, poses)`` where ``poses[i]`` is ``(x, y, heading)`` of
    the agent when ``states[i]`` was rendered.
    """
    rng = np.random.default_rng([int(seed), 7])
    episode_rng = np.random.default_rng([int(seed), 8])
    states, poses = [], []
    state = env.reset(int(episode_rng.integers(2**63 - 1)))
    for _ in range(n_states):
        action = env.random_action(rng)
        ticks = int(rng.integers(0, max_skip + 1))
        state, _, done = env.step(action, ticks=ticks)
        states.append(state)
        poses.append(env.pose())
        if done:
            state = env.reset(int(episode_rng.integers(2**63 - 1)))
    if not states:
        return np.zeros((0, env.config.stack, *env.frame_shape)), np.zeros((0, 3))
    return np.stack(states), np.array(poses, dtype=np.float64)


@dataclass
class ActivationDiff:
    delta: np.ndarray
    active: np.ndarray
    inactive: np.ndarray
    centers: np.ndarray

    @property
    def active_delta(self):
        return self.delta[self.active]

    @property
    def inactive_delta(self):
        return self.delta[self.inactive]

    def histograms(self, bins=20):
        """``{"aN": (edges, counts), "iN": (edges, counts)}`` on a shared [0, 1] grid."""
        edges = np.linspace(0.0, 1.0, bins + 1)
        return {
            "aN": (edges, np.histogram(self.active_delta, edges)[0]),
            "iN": (edges, np.histogram(self.inactive_delta, edges)[0]),
        }

    def write_histogram_csv(self, path, bins=20) -> None:
        hist = self.histograms(bins)
        edges = hist["aN"][0]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi", "aN_count", "iN_count"])
            for k in range(bins):
                writer.writerow([repr(float(edges[k])), repr(float(edges[k + 1])), hist["aN"][1][k], hist["iN"][1][k]])


def activation_diff(layer: RbfLayer, s, s2, classification: NeuronClassification) -> ActivationDiff:
    """Per-neuron ``|N(s) - N(s')|``, taking the largest change over frame slots."""
    a = _frames_of(s, layer)
    b = _frames_of(s2, layer)
    if a.shape != b.shape:
        raise ShapeError(f"state shapes differ: {a.shape} vs {b.shape}")
    if classification.n_neurons != layer.n_neurons:
        raise ShapeError("classification does not match the layer")
    n = layer.n_neurons
    fa = activate_state(layer, a).reshape(-1, n)
    fb = activate_state(layer, b).reshape(-1, n)
    delta = np.abs(fa - fb).max(axis=0)
    centers = np.column_stack([layer.mu_x, layer.mu_y])
    return ActivationDiff(delta, classification.active, classification.inactive, centers)


def write_diff_overlay(layer: RbfLayer, s, s2, diff: ActivationDiff, path, threshold=DEFAULT_THRESHOLD):
    """PGM of ``|s - s'|`` (newest frames) with centers of changed neurons marked.

    Changed active neurons are drawn white, changed inactive neurons mid-gray.
    """
    a = _frames_of(s, layer)[-1]
    b = _frames_of(s2, layer)[-1]
    background = np.abs(a - b).mean(axis=2)
    peak = background.max()
    image = background / peak * 0.4 if peak > 0 else background
    changed = diff.delta > threshold
    for group, value in ((diff.inactive, 0.7), (diff.active, 1.0)):
        for i in group:
            if changed[i]:
                px = min(layer.width - 1, int(layer.mu_x[i] * layer.width))
                py = min(layer.height - 1, int(layer.mu_y[i] * layer.height))
                image[py, px] = value
    write_pnm(image, path)
    return image


@dataclass
class NeuronTrace:
    neuron: int
    threshold: float
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    activation: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        return self.activation < self.threshold

    def __len__(self):
        return self.activation.shape[0]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "heading", "activation", "flagged"])
            for row in zip(self.x, self.y, self.heading, self.activation, self.flagged):
                writer.writerow([repr(float(v)) for v in row[:4]] + [int(row[4])])


def neuron_trace(layer, env, n_samples: int, neuron: int, threshold: float, seed: int = 0, max_skip: int = 12):
    """Record the agent pose and one neuron's activation under a random policy.

    The activation is measured on the newest frame of each visited state.
    """
    if not 0 <= neuron < layer.n_neurons:
        raise IndexError(f"neuron {neuron} out of range")
    states, poses = collect_states(env, n_samples, seed, max_skip)
    single = layer.subset([neuron])
    acts = np.array([activate(single, s[-1])[0] for s in states])
    return NeuronTrace(neuron, float(threshold), poses[:, 0], poses[:, 1], poses[:, 2], acts)


def prune_to_active(layer: RbfLayer, head: QHead, classification: NeuronClassification):
    """Drop inactive neurons from the layer and their weight columns from the head.

    Every frame slot of a kept neuron keeps its column; order is preserved.
    Pruning is for evaluation only, so the optimizer state is carried along
    but not meaningful for further training.
    """
    if classification.active.size == 0:
        raise StateError("no active neurons to keep")
    n = layer.n_neurons
    if classification.n_neurons != n or head.n_features % n:
        raise ShapeError("head, layer and classification sizes are inconsistent")
    stack = head.n_features // n
    cols = np.concatenate([k * n + classification.active for k in range(stack)])
    reduced = QHead(
        head.weights[:, cols],
        head.learning_rate,
        head.adam_beta1,
        head.adam_beta2,
        head.adam_eps,
        head.adam_m[:, cols],
        head.adam_v[:, cols],
        head.step_count,
    )
    return layer.subset(classification.active), reduced


def pruning_bound(head: QHead, classification: NeuronClassification) -> np.ndarray:
    """Per-action upper bound on ``|Q_full - Q_pruned|`` over calibration states."""
    n = classification.n_neurons
    stack = head.n_features // n
    cols = np.concatenate([k * n + classification.inactive for k in range(stack)])
    return classification.threshold * np.abs(head.weights[:, cols]).sum(axis=1)
