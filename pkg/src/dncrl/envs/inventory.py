"""Joint replenishment of N items under Poisson demand with order-up-to actions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dncrl.envs.base import Env
from dncrl.mapping import ActionSpaceSpec

# levels outside this range are clipped before featurization
STATE_CLIP = (-50.0, 66.0)


@dataclass
class InventoryConfig:
    n_items: int = 2
    s_max: int = 66
    holding: float = 1.0
    backorder: float = 19.0
    order_cost: float = 10.0
    common_order_cost: float = 75.0
    demand_rates: tuple | None = None
    init_inventory: float = 25.0
    horizon: int = 100

    def __post_init__(self):
        if self.s_max < 0:
            raise ValueError("s_max must be non-negative")
        if self.demand_rates is None:
            low = (self.n_items + 1) // 2
            self.demand_rates = (10.0,) * low + (20.0,) * (self.n_items - low)
        self.demand_rates = tuple(float(x) for x in self.demand_rates)
        if len(self.demand_rates) != self.n_items or min(self.demand_rates) <= 0:
            raise ValueError("need one positive demand rate per item")


def order_cost(levels, order_up_to, cfg: InventoryConfig):
    """Order quantities and the fixed ordering cost they trigger."""
    q = np.maximum(0.0, order_up_to - levels)
    fixed = cfg.order_cost * np.count_nonzero(q) + (cfg.common_order_cost if q.sum() > 0 else 0.0)
    return q, fixed


def inventory_step(levels, order_up_to, cfg: InventoryConfig, rng: np.random.Generator,
                   demand=None):
    """Order up to the target, serve demand, pay costs. Returns (levels', reward, cost parts).

    ``demand`` overrides the Poisson draw (used for hand-checked cases).
    """
    levels = np.asarray(levels, dtype=np.float64)
    order_up_to = np.asarray(order_up_to, dtype=np.float64)
    if order_up_to.shape != (cfg.n_items,):
        raise ValueError(f"expected {cfg.n_items} order-up-to levels")
    if np.any(order_up_to < 0) or np.any(order_up_to > cfg.s_max) or \
            np.any(order_up_to != np.round(order_up_to)):
        raise ValueError("order-up-to levels must be integers in [0, s_max]")
    q, fixed = order_cost(levels, order_up_to, cfg)
    if demand is None:
        demand = rng.poisson(cfg.demand_rates)
    new = levels + q - np.asarray(demand, dtype=np.float64)
    holding = cfg.holding * np.maximum(new, 0.0).sum()
    backorder = cfg.backorder * np.maximum(-new, 0.0).sum()
    cost = holding + backorder + fixed
    return new, -cost, {"holding": holding, "backorder": backorder, "ordering": fixed, "q": q}


def draw_demand(cfg: InventoryConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.poisson(cfg.demand_rates, size=(cfg.horizon, cfg.n_items)).astype(np.float64)


class InventoryEnv(Env):
    """Demand for the whole episode is drawn at reset, one (horizon, N) Poisson block."""

    fourier_order = 3
    fourier_coupled = False

    def __init__(self, cfg: InventoryConfig | None = None):
        super().__init__()
        self.cfg = cfg or InventoryConfig()
        n = self.cfg.n_items
        self.action_spec = ActionSpaceSpec.uniform(n, 0.0, float(self.cfg.s_max), 1.0)
        self.state_dim = n
        self.horizon = self.cfg.horizon
        self.state_low = np.full(n, STATE_CLIP[0])
        self.state_high = np.full(n, STATE_CLIP[1])
        self.demand = None

    def _reset(self, rng):
        self.demand = draw_demand(self.cfg, rng)
        return np.full(self.cfg.n_items, float(self.cfg.init_inventory))

    def _step(self, action, rng):
        levels, reward, _ = inventory_step(self.state, action, self.cfg, rng,
                                           demand=self.demand[self.t])
        return levels, reward, False
