"""Compare DNC and MinMax on the two-item joint replenishment problem.

Usage: python demos/inventory_compare.py [--episodes 1000] [--seed 0]
"""
import argparse

from dncrl.envs import InventoryEnv
from dncrl.mapping import DncMapper, MinMaxMapper, PerturbationParams, SaParams
from dncrl.training import TrainConfig, train_run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--episodes", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    env = InventoryEnv()
    cfg = TrainConfig(alpha_cr=1e-2, alpha_ac=1e-3, sigma=0.5, actor_hidden=32, critic_hidden=64,
                      reward_scale=1e-2, n_episodes=args.episodes,
                      eval_every=max(1, args.episodes // 4))
    for name, mapper in (("dnc", DncMapper(env.action_spec, PerturbationParams(1, 1.0), SaParams())),
                         ("minmax", MinMaxMapper(env.action_spec))):
        res = train_run(env, mapper, cfg, args.seed)
        print(f"{name:>6}: " + ", ".join(f"{ep}: {v:.0f}" for ep, v in res.eval_points))


if __name__ == "__main__":
    main()
