"""Fixed random Gaussian receptive fields and RBF activations over pixel frames.

Frames are ``(height, width, channels)`` float arrays with intensities in
``[0, 1]``; 2-D ``(height, width)`` arrays are accepted for single-channel
layers. A neuron looks at the image through a spatial Gaussian attention map
and responds with a Gaussian of the attention-weighted intensity residual.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, FormatError, ShapeError

__all__ = [
    "RbfNeuron",
    "RbfLayer",
    "sample_layer",
    "compute_filter",
    "activate",
    "activate_frames",
    "activate_state",
    "save_layer",
    "load_layer",
    "layer_to_bytes",
    "layer_from_bytes",
]

LAYER_MAGIC = b"VRBQNLYR"
LAYER_VERSION = 1

# exp() underflows to 0 far from a center; results are floored here so that
# filters and activations stay strictly positive
_TINY = np.finfo(np.float64).tiny

_CANCEL_EPS = 64 * np.finfo(np.float64).eps



@dataclass(frozen=True)
class RbfNeuron:
    """Parameters of one Gaussian unit.

    ``mu_x``/``mu_y`` are the normalized attention center, ``sigma_x``/``sigma_y``
    its spatial widths, and ``mu_z``/``sigma_z`` hold one intensity center and
    width per input channel.
    """

    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    mu_z: np.ndarray
    sigma_z: np.ndarray

    def __post_init__(self):
        mu_z = np.atleast_1d(np.asarray(self.mu_z, dtype=np.float64))
        sigma_z = np.atleast_1d(np.asarray(self.sigma_z, dtype=np.float64))
        object.__setattr__(self, "mu_z", mu_z)
        object.__setattr__(self, "sigma_z", sigma_z)
        if mu_z.shape != sigma_z.shape or mu_z.ndim != 1:
            raise ShapeError("mu_z and sigma_z must be 1-D with one entry per channel")
        for name in ("mu_x", "mu_y"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if np.any(mu_z < 0.0) or np.any(mu_z > 1.0):
            raise ConfigurationError("mu_z must lie in [0, 1]")
        if self.sigma_x <= 0 or self.sigma_y <= 0 or np.any(sigma_z <= 0):
            raise ConfigurationError("all widths must be strictly positive")

    @property
    def channels(self) -> int:
        return int(self.mu_z.shape[0])


def _axis_exponents(mu, sigma, size):
    # pixel coordinates are zero-based indices divided by width / height
    p = np.arange(size, dtype=np.float64) / size
    return (p[None, :] - mu[:, None]) ** 2 / (2.0 * sigma[:, None] ** 2)


def _filter_bank(mu_x, mu_y, sigma_x, sigma_y, width, height):
    dx = _axis_exponents(mu_x, sigma_x, width)
    dy = _axis_exponents(mu_y, sigma_y, height)
    return np.maximum(np.exp(-(dy[:, :, None] + dx[:, None, :])), _TINY)


def compute_filter(neuron: RbfNeuron, width: int, height: int) -> np.ndarray:
    """Return the ``(height, width)`` attention map of ``neuron``.

    Entry ``[p_y, p_x]`` is
    ``exp(-((p_x/w - mu_x)^2 / (2 sigma_x^2) + (p_y/h - mu_y)^2 / (2 sigma_y^2)))``.
    """
    if width <= 0 or height <= 0:
        raise ConfigurationError("width and height must be positive")
    bank = _filter_bank(
        np.array([neuron.mu_x]),
        np.array([neuron.mu_y]),
        np.array([neuron.sigma_x]),
        np.array([neuron.sigma_y]),
        width,
        height,
    )
    return bank[0]


class RbfLayer:
    """An immutable bank of ``N`` RBF neurons bound to one frame geometry.

    Parameters are stored column-wise as arrays; ``neuron(i)`` returns a
    :class:`RbfNeuron` view. The full attention maps ``filters`` with shape
    ``(N, height, width)`` are built on first access only; activation uses
    the separable row and column factors of the squared maps instead.
    """

    def __init__(self, mu_x, mu_y, sigma_x, sigma_y, mu_z, sigma_z, width, height, seed=None):
        arrays = [np.array(a, dtype=np.float64) for a in (mu_x, mu_y, sigma_x, sigma_y)]
        mu_z = np.array(mu_z, dtype=np.float64)
        sigma_z = np.array(sigma_z, dtype=np.float64)
        if mu_z.ndim == 1:
            mu_z = mu_z[:, None]
        if sigma_z.ndim == 1:
            sigma_z = sigma_z[:, None]
        n = arrays[0].shape[0] if arrays[0].ndim == 1 else -1
        if n <= 0 or any(a.shape != (n,) for a in arrays):
            raise ShapeError("spatial parameters must be non-empty 1-D arrays of equal length")
        if mu_z.shape != sigma_z.shape or mu_z.shape[0] != n or mu_z.shape[1] < 1:
            raise ShapeError("mu_z and sigma_z must have shape (n_neurons, channels)")
        if int(width) <= 0 or int(height) <= 0:
            raise ConfigurationError("width and height must be positive")
        centers = np.concatenate([arrays[0], arrays[1], mu_z.ravel()])
        if np.any(centers < 0.0) or np.any(centers > 1.0):
            raise ConfigurationError("all centers must lie in [0, 1]")
        if np.any(arrays[2] <= 0) or np.any(arrays[3] <= 0) or np.any(sigma_z <= 0):
            raise ConfigurationError("all widths must be strictly positive")

        self.mu_x, self.mu_y, self.sigma_x, self.sigma_y = arrays
        self.mu_z = mu_z
        self.sigma_z = sigma_z
        self.width = int(width)
        self.height = int(height)
        self.seed = None if seed is None else int(seed)
        # G^2 = gx^2 (x) gy^2, so squared maps factor per axis
        self._gx2 = np.exp(-2.0 * _axis_exponents(self.mu_x, self.sigma_x, self.width))
        self._gy2 = np.exp(-2.0 * _axis_exponents(self.mu_y, self.sigma_y, self.height))
        self._mass = self._gy2.sum(axis=1) * self._gx2.sum(axis=1)
        self._filters = None
        for a in (*arrays, mu_z, sigma_z, self._gx2, self._gy2, self._mass):
            a.setflags(write=False)

    @property
    def filters(self) -> np.ndarray:
        if self._filters is None:
            bank = _filter_bank(self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.width, self.height)
            bank.setflags(write=False)
            self._filters = bank
        return self._filters

    @property
    def n_neurons(self) -> int:
        return int(self.mu_x.shape[0])

    @property
    def channels(self) -> int:
        return int(self.mu_z.shape[1])

    @property
    def frame_shape(self) -> tuple:
        return (self.height, self.width, self.channels)

    def __len__(self):
        return self.n_neurons

    def neuron(self, i: int) -> RbfNeuron:
        return RbfNeuron(
            float(self.mu_x[i]),
            float(self.mu_y[i]),
            float(self.sigma_x[i]),
            float(self.sigma_y[i]),
            self.mu_z[i].copy(),
            self.sigma_z[i].copy(),
        )

    def subset(self, indices) -> "RbfLayer":
        """Layer restricted to ``indices`` (order preserved)."""
        idx = np.asarray(indices, dtype=np.intp)
        return RbfLayer(
            self.mu_x[idx],
            self.mu_y[idx],
            self.sigma_x[idx],
            self.sigma_y[idx],
            self.mu_z[idx],
            self.sigma_z[idx],
            self.width,
            self.height,
            seed=self.seed,
        )

    def __eq__(self, other):
        if not isinstance(other, RbfLayer):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.seed == other.seed
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("mu_x", "mu_y", "sigma_x", "sigma_y", "mu_z", "sigma_z")
            )
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"RbfLayer(n_neurons={self.n_neurons}, width={self.width}, "
            f"height={self.height}, channels={self.channels}, seed={self.seed})"
        )


def sample_layer(
    rng_seed,
    n_neurons: int,
    width: int,
    height: int,
    channels: int = 1,
    sigma_xy_range=(0.02, 0.2),
    sigma_z_value: float = 1.0,
) -> RbfLayer:
    """Draw a random layer.

    Spatial and intensity centers are uniform on ``[0, 1]``, spatial widths
    uniform on ``sigma_xy_range`` and every intensity width equals
    ``sigma_z_value``. The result is a pure function of the arguments.
    """
    lo, hi = (float(v) for v in sigma_xy_range)
    if not (0.0 < lo < hi <= 1.0):
        raise ConfigurationError(
            f"sigma_xy_range must satisfy 0 < lo < hi <= 1, got [{lo}, {hi}]"
        )
    if sigma_z_value <= 0:
        raise ConfigurationError("sigma_z_value must be positive")
    if n_neurons <= 0 or channels <= 0:
        raise ConfigurationError("n_neurons and channels must be positive")
    rng = np.random.default_rng(rng_seed)
    mu_x = rng.uniform(0.0, 1.0, n_neurons)
    mu_y = rng.uniform(0.0, 1.0, n_neurons)
    sigma_x = rng.uniform(lo, hi, n_neurons)
    sigma_y = rng.uniform(lo, hi, n_neurons)
    mu_z = rng.uniform(0.0, 1.0, (n_neurons, channels))
    sigma_z = np.full((n_neurons, channels), float(sigma_z_value))
    seed = rng_seed if isinstance(rng_seed, (int, np.integer)) else None
    return RbfLayer(mu_x, mu_y, sigma_x, sigma_y, mu_z, sigma_z, width, height, seed=seed)


def _as_frame(layer: RbfLayer, frame) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    if frame.shape != layer.frame_shape:
        raise ShapeError(f"frame shape {frame.shape} does not match layer {layer.frame_shape}")
    return frame


def _weighted_sum(layer: RbfLayer, image: np.ndarray) -> np.ndarray:
    # sum_p G_i(p)^2 image(p) for every neuron i
    return np.einsum("nw,nw->n", layer._gy2 @ image, layer._gx2)


def _exponents(layer: RbfLayer, frame: np.ndarray) -> np.ndarray:
    # sum_p G^2 (S - m)^2 expanded as sum G^2 S^2 - 2 m sum G^2 S + m^2 sum G^2
    out = np.zeros(layer.n_neurons)
    for k in range(layer.channels):
        s = frame[:, :, k]
        m = layer.mu_z[:, k]
        a = _weighted_sum(layer, s * s)
        c = m * m * layer._mass
        sq = a - 2.0 * m * _weighted_sum(layer, s) + c
        # results inside the rounding band of the expansion are a perfect match
        sq[sq <= _CANCEL_EPS * (a + c)] = 0.0
        out += sq / (2.0 * layer.sigma_z[:, k] ** 2)
    return out


def activate(layer: RbfLayer, frame) -> np.ndarray:
    """Length-``N`` activations of ``layer`` on a single frame.

    For channel ``c`` the squared attention-weighted residuals are summed over
    pixels and scaled by ``1 / (2 sigma_z[c]^2)``; channel contributions are
    added inside one exponential.
    """
    frame = _as_frame(layer, frame)
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError("frame intensities must lie in [0, 1]")
    return np.maximum(np.exp(-_exponents(layer, frame)), _TINY)


def activate_frames(layer: RbfLayer, frames) -> np.ndarray:
    """Activations for a batch of frames, shape ``(n_frames, N)``."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 3:
        raise ShapeError("expected a batch of frames")
    if frames.shape[0] == 0:
        return np.zeros((0, layer.n_neurons))
    return np.stack([activate(layer, f) for f in frames])


def activate_state(layer: RbfLayer, state) -> np.ndarray:
    """Feature vector of a stacked state (oldest frame first), length ``K * N``."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim == 2 or state.shape == layer.frame_shape:
        state = state[None]
    if state.ndim < 3:
        raise ShapeError("state must be a stack of frames")
    return np.concatenate([activate(layer, f) for f in state])


def layer_to_bytes(layer: RbfLayer) -> bytes:
    has_seed = layer.seed is not None
    header = struct.pack(
        "<8sIBqIIII",
        LAYER_MAGIC,
        LAYER_VERSION,
        int(has_seed),
        layer.seed if has_seed else 0,
        layer.width,
        layer.height,
        layer.channels,
        layer.n_neurons,
    )
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (
            layer.mu_x,
            layer.mu_y,
            layer.sigma_x,
            layer.sigma_y,
            layer.mu_z,
            layer.sigma_z,
        )
    )
    return header + body


def layer_from_bytes(data: bytes) -> RbfLayer:
    fmt = "<8sIBqIIII"
    size = struct.calcsize(fmt)
    if len(data) < size:
        raise FormatError("layer file truncated")
    magic, version, has_seed, seed, w, h, c, n = struct.unpack_from(fmt, data)
    if magic != LAYER_MAGIC:
        raise FormatError("not a layer file (bad magic)")
    if version != LAYER_VERSION:
        raise FormatError(f"unsupported layer version {version}")
    expected = size + 8 * (4 * n + 2 * n * c)
    if len(data) != expected:
        raise FormatError(f"layer file has {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=size).astype(np.float64)
    parts = np.split(flat, np.cumsum([n, n, n, n, n * c])[:])
    mu_x, mu_y, sx, sy, mz, sz = parts
    return RbfLayer(
        mu_x, mu_y, sx, sy, mz.reshape(n, c), sz.reshape(n, c), w, h,
        seed=seed if has_seed else None,
    )


def save_layer(layer: RbfLayer, path) -> None:
    Path(path).write_bytes(layer_to_bytes(layer))


def load_layer(path) -> RbfLayer:
    return layer_from_bytes(Path(path).read_bytes())
