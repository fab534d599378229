"""Tiny deterministic environments for trainer tests."""
import numpy as np

from vrbqn.envs import EnvConfig, _BaseEnv


class OneStateEnv(_BaseEnv):
    """Every action pays ``reward`` and ends the episode; the frame never changes."""

    actions = ("only",)
    default_timeout = 10
    reward = 1.0

    def __init__(self, config=None, **overrides):
        overrides.setdefault("width", 8)
        overrides.setdefault("height", 8)
        overrides.setdefault("skip_frames", 1)
        super().__init__(config or EnvConfig(), **overrides)

    def _reset_world(self):
        pass

    def _tick(self, action):
        return self.reward, True

    def render(self):
        y, x = np.mgrid[0:self.config.height, 0:self.config.width]
        return ((x + y) / (self.config.width + self.config.height))[:, :, None]

    def pose(self):
        return (0.0, 0.0, 0.0)

    def info(self):
        return 0.0
