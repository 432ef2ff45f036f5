"""Item recommendation to a simulated customer whose choices follow item similarity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dncrl.catalog import Catalog, pick_probability
from dncrl.envs.base import Env
from dncrl.mapping import ActionSpaceSpec


@dataclass
class CatalogEnvConfig:
    catalog: Catalog
    n_recommend: int = 1
    end_prob_pick: float = 0.1
    end_prob_other: float = 0.2
    horizon: int = 100


def project_to_catalog(block, features: np.ndarray) -> int:
    """Index of the catalog row nearest to ``block`` (lowest index on ties)."""
    if len(features) == 0:
        raise ValueError("empty catalog")
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (features.shape[1],):
        raise ValueError(f"block has shape {block.shape}, expected ({features.shape[1]},)")
    diff = features - block
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def recommender_step(last_item: int, action, cfg: CatalogEnvConfig, rng: np.random.Generator):
    """Returns (next last_item, reward, done, offered item, accepted)."""
    feats = cfg.catalog.features
    f = feats.shape[1]
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (cfg.n_recommend * f,):
        raise ValueError(f"action length {action.shape} != {cfg.n_recommend * f}")
    items = [project_to_catalog(action[b * f:(b + 1) * f], feats) for b in range(cfg.n_recommend)]
    sims = cfg.catalog.similarity[last_item, items]
    pos = int(np.argmax(sims))
    offered = items[pos]
    accepted = rng.random() < pick_probability(sims[pos])
    if accepted:
        done = rng.random() < cfg.end_prob_pick
        return offered, float(cfg.catalog.item_rewards[offered]), done, offered, True
    nxt = int(rng.integers(len(feats)))
    done = rng.random() < cfg.end_prob_other
    return nxt, 0.0, done, offered, False


class RecommenderEnv(Env):
    """State is the feature vector of the last picked item."""

    fourier_order = 3
    fourier_coupled = False

    def __init__(self, cfg: CatalogEnvConfig):
        super().__init__()
        self.cfg = cfg
        f = cfg.catalog.features.shape[1]
        self.action_spec = ActionSpaceSpec.uniform(cfg.n_recommend * f, 0.0, 1.0, 0.01)
        self.state_dim = f
        self.horizon = cfg.horizon
        self.state_low = np.zeros(f)
        self.state_high = np.ones(f)
        self.last_item = 0

    def _reset(self, rng):
        self.last_item = int(rng.integers(len(self.cfg.catalog.features)))
        return self.cfg.catalog.features[self.last_item].copy()

    def _step(self, action, rng):
        self.last_item, reward, done, _, _ = recommender_step(self.last_item, action, self.cfg, rng)
        return self.cfg.catalog.features[self.last_item].copy(), reward, done
