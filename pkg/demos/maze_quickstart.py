"""Train DNC on the continuous maze for a few hundred episodes and write a heatmap.

Usage: python demos/maze_quickstart.py [--episodes 300] [--actuators 8] [--out maze-demo]
"""
import argparse
from pathlib import Path

import numpy as np

from dncrl.bench import export_heatmap
from dncrl.envs import MazeConfig, MazeEnv
from dncrl.mapping import DncMapper, MinMaxMapper, PerturbationParams, SaParams
from dncrl.training import TrainConfig, train_run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--episodes", type=int, default=300)
    parser.add_argument("--actuators", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="maze-demo")
    args = parser.parse_args()

    env = MazeEnv(MazeConfig(n_actuators=args.actuators))
    cfg = TrainConfig(alpha_cr=1e-2, alpha_ac=1e-2, sigma=1.0, critic_hidden=32,
                      n_episodes=args.episodes, eval_every=max(1, args.episodes // 5))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mappers = {"dnc": DncMapper(env.action_spec, PerturbationParams(1, 1.0), SaParams()),
               "minmax": MinMaxMapper(env.action_spec)}
    for name, mapper in mappers.items():
        visits = np.zeros((50, 50), dtype=np.int64)
        res = train_run(env, mapper, cfg, args.seed, visits=visits)
        evals = ", ".join(f"{ep}: {v:.1f}" for ep, v in res.eval_points)
        print(f"{name:>6}: {res.steps} steps, eval returns {evals}")
        paths = export_heatmap(visits, out / f"heatmap-{name}")
        print(f"        heatmap -> {paths[1]}")


if __name__ == "__main__":
    main()
