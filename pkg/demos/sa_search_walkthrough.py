"""Map one continuous action onto a 2-D grid with the annealed neighborhood search.

Usage: python demos/sa_search_walkthrough.py [--seed 0]
"""
import argparse

import numpy as np

from dncrl.mapping import (ActionSpaceSpec, PerturbationParams, SaParams, brute_force_best,
                           discretize_base, enumerate_action_space, generate_neighbors, sa_search)


def two_peaks(state, actions):
    a = np.asarray(actions, dtype=float)
    return np.maximum(5 - ((a - 1) ** 2).sum(axis=1), 10 - ((a - 9) ** 2).sum(axis=1))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    spec = ActionSpaceSpec.uniform(2, 0, 10, 1)
    a_hat = np.array([-0.8, -0.8])
    base = discretize_base(a_hat, spec)
    print(f"continuous action {a_hat} -> base grid action {base}")

    local = generate_neighbors(base, spec, PerturbationParams(1, 1.0))
    print(f"depth-1 neighborhood ({len(local.candidates)} actions):")
    for cand, q in zip(local.candidates, two_peaks(None, local.candidates)):
        print(f"  {cand}  Q = {q:6.1f}")

    best = brute_force_best(None, enumerate_action_space(spec, 1000), two_peaks)
    rng = np.random.default_rng(args.seed)
    for depth, sp in ((1, SaParams()), (15, SaParams(1.0, 0.99, 0.05))):
        found = sa_search(None, a_hat, two_peaks, spec, PerturbationParams(depth, 1.0), sp, rng)
        print(f"depth {depth:>2}: search returns {found}, global best {best}")


if __name__ == "__main__":
    main()
