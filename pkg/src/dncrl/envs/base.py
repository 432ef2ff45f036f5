"""Shared environment contract."""
from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from dncrl.mapping import ActionSpaceSpec
from dncrl.numeric import FourierBasis, FourierBasisConfig


class Env(ABC):
    """Episodic MDP with a discrete action grid.

    ``reset`` and ``step`` take the generator explicitly so that a run's noise
    comes from one owned stream. ``step`` forces ``done`` once ``horizon``
    steps have elapsed and sets ``truncated`` in that case.
    """

    action_spec: ActionSpaceSpec
    state_dim: int
    horizon: int
    state_low: np.ndarray
    state_high: np.ndarray
    fourier_order: int = 3
    fourier_coupled: bool = False

    def __init__(self):
        self.t = 0
        self.state = None
        self.truncated = False

    @abstractmethod
    def _reset(self, rng: np.random.Generator) -> np.ndarray: ...

    @abstractmethod
    def _step(self, action: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float, bool]: ...

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.t = 0
        self.truncated = False
        self.state = self._reset(rng)
        return self.state

    def step(self, action, rng: np.random.Generator) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        state, reward, done = self._step(np.asarray(action, dtype=np.float64), rng)
        self.t += 1
        self.state = state
        # horizon cut-offs are flagged so learners can keep bootstrapping through them
        self.truncated = not done and self.t >= self.horizon
        return state, float(reward), bool(done or self.truncated)

    def observe(self, state) -> np.ndarray:
        """State as fed to the feature map (clipped into the declared bounds)."""
        return np.clip(np.asarray(state, dtype=np.float64), self.state_low, self.state_high)

    def feature_map(self) -> FourierBasis:
        bounds = tuple(zip(self.state_low.tolist(), self.state_high.tolist()))
        return FourierBasis(FourierBasisConfig(self.fourier_order, self.fourier_coupled,
                                               self.state_dim, bounds))
