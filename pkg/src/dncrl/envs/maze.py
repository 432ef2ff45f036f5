"""Continuous 2-D maze navigated by switching actuators on and off."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dncrl.envs.base import Env
from dncrl.mapping import ActionSpaceSpec


@dataclass
class MazeConfig:
    n_actuators: int = 8
    step_length: float = 0.05
    noise_prob: float = 0.1
    step_reward: float = -0.05
    goal_reward: float = 100.0
    horizon: int = 150
    # (x0, y0, x1, y1) axis-aligned rectangles
    walls: list = field(default_factory=lambda: [(0.0, 0.45, 0.6, 0.5)])
    start: tuple = (0.1, 0.1)
    goal: tuple = (0.9, 0.9, 0.05)

    def __post_init__(self):
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError("noise_prob must lie in [0, 1]")
        for name, pt in (("start", self.start), ("goal", self.goal[:2])):
            if not all(0.0 <= c <= 1.0 for c in pt):
                raise ValueError(f"{name} {pt} outside the unit square")
            if any(_inside(pt, w) for w in self.walls):
                raise ValueError(f"{name} {pt} lies inside a wall")


def _inside(pt, rect) -> bool:
    x0, y0, x1, y1 = rect
    return x0 <= pt[0] <= x1 and y0 <= pt[1] <= y1


def load_layout(path, **overrides) -> MazeConfig:
    """Read a layout file of ``wall x0 y0 x1 y1``, ``start x y`` and ``goal x y r`` lines."""
    walls, start, goal = [], None, None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *nums = line.split()
        try:
            vals = tuple(float(v) for v in nums)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        expected = {"wall": 4, "start": 2, "goal": 3}.get(kind)
        if expected is None or len(vals) != expected:
            raise ValueError(f"{path}:{lineno}: cannot parse {raw!r}")
        if kind == "wall":
            walls.append(vals)
        elif kind == "start":
            start = vals
        else:
            goal = vals
    if start is None or goal is None:
        raise ValueError(f"{path}: layout needs a start and a goal line")
    return MazeConfig(walls=walls, start=start, goal=goal, **overrides)


def segment_hits_rect(p, q, rect) -> bool:
    """Whether the segment p->q touches the closed rectangle (Liang-Barsky)."""
    x0, y0, x1, y1 = rect
    dx, dy = q[0] - p[0], q[1] - p[1]
    t0, t1 = 0.0, 1.0
    for num, den in ((p[0] - x0, -dx), (x1 - p[0], dx), (p[1] - y0, -dy), (y1 - p[1], dy)):
        if den == 0.0:
            if num < 0.0:
                return False
            continue
        t = num / den
        if den < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return False
    return True


def actuator_directions(n: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def maze_step(pos, action, cfg: MazeConfig, rng: np.random.Generator,
              directions: np.ndarray | None = None):
    """One move. Returns (new position, reward, reached_goal, noisy)."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (cfg.n_actuators,) or not np.all((action == 0) | (action == 1)):
        raise ValueError(f"maze action must be a 0/1 vector of length {cfg.n_actuators}")
    if directions is None:
        directions = actuator_directions(cfg.n_actuators)
    active = action.sum()
    move = cfg.step_length * (action @ directions) / max(1.0, active)
    noisy = rng.random() < cfg.noise_prob
    if noisy:
        move = move + rng.uniform(-cfg.step_length, cfg.step_length, size=2)
    x, y = float(pos[0]), float(pos[1])
    nx, ny = x + move[0], y + move[1]
    blocked = not (0.0 <= nx <= 1.0 and 0.0 <= ny <= 1.0) or any(
        segment_hits_rect((x, y), (nx, ny), w) for w in cfg.walls)
    if blocked:
        nx, ny = x, y
    gx, gy, radius = cfg.goal
    if math.hypot(nx - gx, ny - gy) <= radius:
        return np.array([nx, ny]), cfg.goal_reward, True, noisy
    return np.array([nx, ny]), cfg.step_reward, False, noisy


class MazeEnv(Env):
    fourier_order = 3
    fourier_coupled = True

    def __init__(self, cfg: MazeConfig | None = None):
        super().__init__()
        self.cfg = cfg or MazeConfig()
        self.action_spec = ActionSpaceSpec.uniform(self.cfg.n_actuators, 0.0, 1.0, 1.0)
        self.state_dim = 2
        self.horizon = self.cfg.horizon
        self.state_low = np.zeros(2)
        self.state_high = np.ones(2)
        self._dirs = actuator_directions(self.cfg.n_actuators)

    def _reset(self, rng):
        return np.array(self.cfg.start, dtype=np.float64)

    def _step(self, action, rng):
        pos, reward, done, _ = maze_step(self.state, action, self.cfg, rng, self._dirs)
        return pos, reward, done
