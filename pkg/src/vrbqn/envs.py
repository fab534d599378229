"""Seedable, software-rendered toy scenarios with pixel observations.

Two first-person scenarios in a square room ``[-1, 1] x [-1, 1]``:

``ShooterEnv``
    The agent spawns at a fixed spot facing a monster placed at a random
    lateral position on a line in front of it. Every tick costs 1, a missed
    shot costs 5, hitting the monster pays 101 and ends the episode.
``GatherEnv``
    The agent spawns in the middle of the room with 100 life points that
    decay every tick; walking over a health pack restores some. The reward is
    the change in life, and the episode ends on death.

Both render with a tiny column raycaster. One agent step repeats the action
for ``skip_frames`` ticks, sums the rewards and pushes the newly rendered
frame onto a ``stack``-deep frame history.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, StateError

HALF_FOV = math.radians(45.0)
_TAN_HALF_FOV = math.tan(HALF_FOV)
WALL_HALF_HEIGHT = 0.5
EYE_HEIGHT = 0.0
ROOM = 1.0
AGENT_MARGIN = 0.05


@dataclass(frozen=True)
class EnvConfig:
    width: int = 32
    height: int = 32
    channels: int = 1
    skip_frames: int = 6
    stack: int = 2
    timeout: int = None
    seed: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ConfigurationError("width and height must be at least 8")
        if self.channels not in (1, 3):
            raise ConfigurationError("channels must be 1 (gray) or 3 (rgb)")
        if self.skip_frames < 1:
            raise ConfigurationError("skip_frames must be >= 1")
        if self.stack < 1:
            raise ConfigurationError("stack must be >= 1")
        if self.timeout is not None and self.timeout < 1:
            raise ConfigurationError("timeout must be positive")


# -- rendering ---------------------------------------------------------------


def _column_offsets(width):
    # horizontal image-plane coordinate of each column center, in [-1, 1]
    return (np.arange(width) + 0.5) / width * 2.0 - 1.0


def _coverage(lo, hi, edges_lo, edges_hi):
    """Fraction of each pixel interval ``[edges_lo, edges_hi]`` covered by ``[lo, hi]``."""
    overlap = np.minimum(hi, edges_hi) - np.maximum(lo, edges_lo)
    return np.clip(overlap / (edges_hi - edges_lo), 0.0, 1.0)


def project(agent_pos, heading, point):
    """Camera coordinates of a world point: ``(depth, image-plane x)``.

    Image-plane ``x`` is in units where the frame spans ``[-1, 1]``; it is
    ``inf``-free only for points in front of the camera (``depth > 0``).
    """
    dx = point[0] - agent_pos[0]
    dy = point[1] - agent_pos[1]
    fwd = dx * math.cos(heading) + dy * math.sin(heading)
    right = dx * math.sin(heading) - dy * math.cos(heading)
    if fwd <= 1e-9:
        return fwd, math.inf
    return fwd, right / (fwd * _TAN_HALF_FOV)


def project_column(agent_pos, heading, point, width):
    """Fractional column index of a world point (column ``c`` has center ``c``)."""
    _, u = project(agent_pos, heading, point)
    return (u + 1.0) / 2.0 * width - 0.5


class _Palette:
    def __init__(self, channels, ceiling, floor, walls, sprite):
        self.channels = channels
        self.ceiling = np.asarray(ceiling, dtype=np.float64)
        self.floor = np.asarray(floor, dtype=np.float64)
        self.walls = np.asarray(walls, dtype=np.float64)
        self.sprite = np.asarray(sprite, dtype=np.float64)


def _raycast_background(agent_pos, heading, width, height, palette):
    u = _column_offsets(width)
    c, s = math.cos(heading), math.sin(heading)
    # ray direction has unit forward component, so the hit parameter is the
    # perpendicular (fisheye-free) depth
    dx = c + u * _TAN_HALF_FOV * s
    dy = s - u * _TAN_HALF_FOV * c
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (ROOM - agent_pos[0]) / dx, np.where(dx < 0, (-ROOM - agent_pos[0]) / dx, np.inf))
        ty = np.where(dy > 0, (ROOM - agent_pos[1]) / dy, np.where(dy < 0, (-ROOM - agent_pos[1]) / dy, np.inf))
    depth = np.minimum(tx, ty)
    # wall ids: 0 east, 1 west, 2 north, 3 south
    wall = np.where(tx < ty, np.where(dx > 0, 0, 1), np.where(dy > 0, 2, 3))
    shade = palette.walls[wall] / (1.0 + 0.25 * depth)[:, None]

    half = WALL_HALF_HEIGHT / (np.maximum(depth, 1e-6) * _TAN_HALF_FOV)
    rows = np.arange(height)
    top = rows / height * 2.0 - 1.0
    bottom = (rows + 1) / height * 2.0 - 1.0
    wall_cov = _coverage(-half[None, :], half[None, :], top[:, None], bottom[:, None])
    above = _coverage(-np.inf, -half[None, :], top[:, None], bottom[:, None])
    below = 1.0 - wall_cov - above
    frame = (
        above[:, :, None] * palette.ceiling
        + below[:, :, None] * palette.floor
        + wall_cov[:, :, None] * shade[None, :, :]
    )
    return frame, depth


def _draw_sprite(frame, agent_pos, heading, point, radius, z_lo, z_hi, color, depth):
    height, width = frame.shape[:2]
    fwd, uc = project(agent_pos, heading, point)
    if fwd <= 0.05:
        return
    uw = radius / (fwd * _TAN_HALF_FOV)
    cols = np.arange(width)
    left = cols / width * 2.0 - 1.0
    right = (cols + 1) / width * 2.0 - 1.0
    cov_x = _coverage(uc - uw, uc + uw, left, right)
    cov_x = np.where(fwd < depth, cov_x, 0.0)
    if not np.any(cov_x > 0):
        return
    # image-plane y grows downward; world height z grows upward
    v_top = -(z_hi - EYE_HEIGHT) / (fwd * _TAN_HALF_FOV)
    v_bot = -(z_lo - EYE_HEIGHT) / (fwd * _TAN_HALF_FOV)
    rows = np.arange(height)
    top = rows / height * 2.0 - 1.0
    bottom = (rows + 1) / height * 2.0 - 1.0
    cov_y = _coverage(v_top, v_bot, top, bottom)
    alpha = (cov_y[:, None] * cov_x[None, :])[:, :, None]
    frame *= 1.0 - alpha
    frame += alpha * color


def write_pnm(frame, path) -> None:
    """Write a frame as binary PGM (1 channel) or PPM (3 channels)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    h, w, c = frame.shape
    if c not in (1, 3):
        raise ValueError("only 1- or 3-channel frames can be written")
    data = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM into a ``(h, w, c)`` array of ``[0, 1]`` floats."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    c = {b"P5": 1, b"P6": 3}[magic]
    arr = np.frombuffer(raw[pos:pos + w * h * c], dtype=np.uint8).reshape(h, w, c)
    return arr / float(maxval)


# -- scenarios ---------------------------------------------------------------


class _BaseEnv:
    """Shared episode bookkeeping: frame stack, skip frames, timeout, seeding."""

    actions: tuple = ()
    default_timeout: int = 0

    def __init__(self, config: EnvConfig = None, **overrides):
        config = config or EnvConfig()
        if overrides:
            config = replace(config, **overrides)
        self.config = config
        self.timeout = config.timeout or self.default_timeout
        self._seeds = np.random.SeedSequence(config.seed)
        self._episode_count = 0
        self._frames = None
        self.terminal = True
        self.ticks = 0

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def frame_shape(self):
        c = self.config
        return (c.height, c.width, c.channels)

    def _next_episode_seed(self):
        self._episode_count += 1
        return int(self._seeds.spawn(1)[0].generate_state(1)[0])

    def reset(self, episode_seed=None) -> np.ndarray:
        """Start an episode and return the initial ``(stack, h, w, c)`` state.

        Without ``episode_seed`` the next seed of the environment's own stream
        is used.
        """
        if episode_seed is None:
            episode_seed = self._next_episode_seed()
        self.episode_seed = int(episode_seed)
        self._rng = np.random.default_rng(self.episode_seed)
        self.ticks = 0
        self.terminal = False
        self._reset_world()
        frame = self.render()
        self._frames = [frame] * self.config.stack
        return self.state

    @property
    def state(self) -> np.ndarray:
        if self._frames is None:
            raise StateError("environment has not been reset")
        return np.stack(self._frames)

    @property
    def newest_frame(self) -> np.ndarray:
        return self._frames[-1]

    def step(self, action: int, ticks: int = None):
        """Repeat ``action`` for ``ticks`` (default ``skip_frames``) simulator ticks.

        Returns ``(state, reward, terminal)`` with rewards summed over ticks.
        """
        if self._frames is None or self.terminal:
            raise StateError("episode is over; call reset() first")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range for {self.n_actions} actions")
        ticks = self.config.skip_frames if ticks is None else int(ticks)
        reward = 0.0
        for _ in range(ticks):
            r, done = self._tick(int(action))
            self.ticks += 1
            reward += r
            if done or self.ticks >= self.timeout:
                self.terminal = True
                break
        self._frames = self._frames[1:] + [self.render()]
        return self.state, reward, self.terminal

    def random_action(self, rng) -> int:
        return int(rng.integers(self.n_actions))

    def _move(self, forward, strafe):
        c, s = math.cos(self.heading), math.sin(self.heading)
        x = self.pos[0] + forward * c + strafe * s
        y = self.pos[1] + forward * s - strafe * c
        lim = ROOM - AGENT_MARGIN
        self.pos = (min(max(x, -lim), lim), min(max(y, -lim), lim))

    # subclasses implement _reset_world, _tick, render, pose, info


class ShooterEnv(_BaseEnv):
    """Aim-and-shoot scenario with a randomly placed stationary monster."""

    actions = (
        "move_right",
        "move_left",
        "shoot",
        "turn_left",
        "turn_right",
        "move_forward",
        "move_backward",
        "noop",
    )
    default_timeout = 300

    spawn = (0.0, -0.8)
    spawn_heading = math.pi / 2
    target_line = 0.5
    # the monster never spawns within target_gap of the agent's line of sight,
    # so a random walk rarely ends up aligned by chance
    target_spread = 0.9
    target_gap = 0.3
    target_radius = 0.05
    target_z = (-0.35, 0.35)
    move_speed = 0.012
    turn_speed = math.radians(10.0)
    shot_cooldown = 6
    living_reward = -1.0
    hit_reward = 101.0
    miss_reward = -5.0

    def __init__(self, config: EnvConfig = None, **overrides):
        super().__init__(config, **overrides)
        if self.config.channels == 1:
            self.palette = _Palette(1, [0.30], [0.55], [[0.75], [0.85], [0.95], [0.65]], [0.05])
        else:
            self.palette = _Palette(
                3,
                [0.30, 0.30, 0.35],
                [0.50, 0.42, 0.35],
                [[0.80, 0.70, 0.60], [0.70, 0.80, 0.60], [0.85, 0.85, 0.80], [0.60, 0.65, 0.80]],
                [0.55, 0.05, 0.05],
            )

    def _reset_world(self):
        self.pos = self.spawn
        self.heading = self.spawn_heading
        # lateral offset with |tx| in [target_gap, target_spread]
        u = self._rng.uniform(-1.0, 1.0)
        tx = math.copysign(self.target_gap + abs(u) * (self.target_spread - self.target_gap), u)
        self.target = (float(tx), self.target_line)
        self.cooldown = 0
        self.shots = 0

    def target_bearing(self) -> float:
        """Signed image-plane offset of the monster (0 when dead ahead)."""
        return project(self.pos, self.heading, self.target)[1]

    def is_aligned(self) -> bool:
        """Whether a shot fired now would hit."""
        fwd, uc = project(self.pos, self.heading, self.target)
        if fwd <= 0.05:
            return False
        uw = self.target_radius / (fwd * _TAN_HALF_FOV)
        # the monster's blob must overlap the central column of the frame
        return abs(uc) - uw <= 1.0 / self.config.width

    def _tick(self, action):
        name = self.actions[action]
        reward = self.living_reward
        if self.cooldown > 0:
            self.cooldown -= 1
        if name == "move_right":
            self._move(0.0, self.move_speed)
        elif name == "move_left":
            self._move(0.0, -self.move_speed)
        elif name == "turn_left":
            self.heading += self.turn_speed
        elif name == "turn_right":
            self.heading -= self.turn_speed
        elif name == "move_forward":
            self._move(self.move_speed, 0.0)
        elif name == "move_backward":
            self._move(-self.move_speed, 0.0)
        elif name == "shoot" and self.cooldown == 0:
            self.cooldown = self.shot_cooldown
            self.shots += 1
            if self.is_aligned():
                return reward + self.hit_reward, True
            reward += self.miss_reward
        # the monster line is not walkable
        if self.pos[1] > self.target_line - 0.15:
            self.pos = (self.pos[0], self.target_line - 0.15)
        return reward, False

    def render(self) -> np.ndarray:
        c = self.config
        frame, depth = _raycast_background(self.pos, self.heading, c.width, c.height, self.palette)
        _draw_sprite(
            frame, self.pos, self.heading, self.target, self.target_radius,
            *self.target_z, self.palette.sprite, depth,
        )
        return np.clip(frame, 0.0, 1.0)

    def pose(self):
        return (self.pos[0], self.pos[1], self.heading)

    def info(self) -> float:
        """Monster bearing for trajectory logs."""
        return self.target_bearing()


class GatherEnv(_BaseEnv):
    """Survive by walking over health packs while life decays."""

    actions = ("move_forward", "move_backward", "turn_left", "turn_right", "noop")
    default_timeout = 2100

    n_packs = 10
    pack_radius = 0.1
    pickup_radius = 0.2
    pack_z = (-0.5, -0.38)
    move_speed = 0.03
    turn_speed = math.radians(5.0)
    life_decay = 1.0
    pack_gain = 25.0
    max_life = 100.0

    def __init__(self, config: EnvConfig = None, **overrides):
        super().__init__(config, **overrides)
        if self.config.channels == 1:
            self.palette = _Palette(1, [0.25], [0.45], [[0.60], [0.70], [0.55], [0.65]], [1.0])
        else:
            self.palette = _Palette(
                3,
                [0.25, 0.25, 0.30],
                [0.40, 0.40, 0.45],
                [[0.55, 0.50, 0.45], [0.60, 0.55, 0.50], [0.50, 0.50, 0.55], [0.55, 0.55, 0.50]],
                [0.10, 0.95, 0.15],
            )

    def _spawn_pack(self):
        lim = ROOM - 0.1
        while True:
            p = (float(self._rng.uniform(-lim, lim)), float(self._rng.uniform(-lim, lim)))
            if math.dist(p, self.pos) > 2 * self.pickup_radius:
                return p

    def _reset_world(self):
        self.pos = (0.0, 0.0)
        self.heading = math.pi / 2
        self.life = self.max_life
        self.packs = []
        for _ in range(self.n_packs):
            self.packs.append(self._spawn_pack())
        self.pickups = 0

    def _tick(self, action):
        name = self.actions[action]
        if name == "move_forward":
            self._move(self.move_speed, 0.0)
        elif name == "move_backward":
            self._move(-self.move_speed, 0.0)
        elif name == "turn_left":
            self.heading += self.turn_speed
        elif name == "turn_right":
            self.heading -= self.turn_speed
        before = self.life
        life = self.life - self.life_decay
        for i, p in enumerate(self.packs):
            if math.dist(p, self.pos) <= self.pickup_radius:
                life += self.pack_gain
                self.pickups += 1
                self.packs[i] = self._spawn_pack()
        self.life = max(0.0, min(self.max_life, life))
        return self.life - before, self.life <= 0.0

    def render(self) -> np.ndarray:
        c = self.config
        frame, depth = _raycast_background(self.pos, self.heading, c.width, c.height, self.palette)
        # far packs first so near ones are drawn on top
        order = sorted(self.packs, key=lambda p: -math.dist(p, self.pos))
        for p in order:
            _draw_sprite(
                frame, self.pos, self.heading, p, self.pack_radius,
                *self.pack_z, self.palette.sprite, depth,
            )
        return np.clip(frame, 0.0, 1.0)

    def pose(self):
        return (self.pos[0], self.pos[1], self.heading)

    def info(self) -> float:
        return self.life


SCENARIOS = {"shooter": ShooterEnv, "gather": GatherEnv}


def make_env(scenario: str, config: EnvConfig = None, **overrides):
    try:
        cls = SCENARIOS[scenario]
    except KeyError:
        raise ConfigurationError(
            f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}"
        ) from None
    return cls(config, **overrides)


class TrajectoryLogger:
    """CSV trajectory log: episode, tick, action, reward, terminal, info.

    ``info`` is the monster bearing for the shooter and life for gather.
    """

    columns = ("episode", "tick", "action", "reward", "terminal", "info")

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.columns)

    def log(self, episode, env, action, reward, terminal):
        self._writer.writerow(
            [episode, env.ticks, action, repr(float(reward)), int(terminal), repr(float(env.info()))]
        )

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
