from dncrl.envs.base import Env
from dncrl.envs.inventory import InventoryConfig, InventoryEnv, inventory_step
from dncrl.envs.maze import MazeConfig, MazeEnv, load_layout, maze_step
from dncrl.envs.recommender import (CatalogEnvConfig, RecommenderEnv, project_to_catalog,
                                     recommender_step)

__all__ = [
    "CatalogEnvConfig", "Env", "InventoryConfig", "InventoryEnv", "MazeConfig", "MazeEnv",
    "RecommenderEnv", "inventory_step", "load_layout", "maze_step", "project_to_catalog",
    "recommender_step",
]
