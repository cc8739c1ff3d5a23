"""Regularised evaluation on random MDPs inside and outside the lower-bound region.

For each instance the fixed point is computed with the exact model and a fixed
deterministic policy, at eps = k * alpha * ratio_bound for a few k. Inside the
region (k < 1) the estimate never exceeds the true value.

    python scripts/lower_bound_check.py --n 200
"""

import argparse

import numpy as np

from pessorl.envs import collect_dataset, dataset_stats
from pessorl.mdp import exact_policy_value, greedy_policy, random_mdp, random_policy, state_values
from pessorl.theory import theorem1_ratio_bound
from pessorl.training import evaluate_regularized


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--scales", type=float, nargs="+", default=[0.5, 0.9, 10.0, 1000.0])
    args = p.parse_args()

    worst = {k: -np.inf for k in args.scales}
    for seed in range(args.n):
        rng = np.random.default_rng(seed)
        S, A = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        mdp = random_mdp(S, A, rng=rng)
        # uniform behaviour over many short episodes: every state is in the data
        ds = collect_dataset(mdp, random_policy(S, A, rng), 50, 10, seed=seed)
        stats = dataset_stats(ds, S, A)
        pi = greedy_policy(rng.random((S, A)))
        dphi = rng.dirichlet(np.ones(S))
        ratio = theorem1_ratio_bound(pi, stats.pi_beta_hat, dphi, stats.d_beta_hat)
        v_true = exact_policy_value(mdp, pi)
        for k in args.scales:
            q = evaluate_regularized(mdp, pi, stats, dphi, k * ratio, 1.0, d_min=1e-6)
            worst[k] = max(worst[k], float(np.max(state_values(q, pi) - v_true)))
    for k in args.scales:
        tag = "inside" if k <= 1 else "outside"
        print(f"eps = {k:g} x alpha x bound ({tag}): max(V_hat - V_pi) = {worst[k]:.4g}")


if __name__ == "__main__":
    main()
