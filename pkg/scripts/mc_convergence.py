#!/usr/bin/env python3
"""Monte-Carlo valuation error against exact values as the permutation count grows.

Builds a random 8-client embedding history, computes exact values, then
reports the max error of the sampled estimate over several seeds per K,
next to the Hoeffding accuracy implied by K.

    python scripts/mc_convergence.py --clients 8 --seeds 20 --K 100 400 1600 6400
"""

from __future__ import annotations

import argparse

import numpy as np

from verfedsv.shapley import UtilityEvaluator, exact_verfedsv, hoeffding_eps, mc_verfedsv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--clients", type=int, default=8)
    parser.add_argument("--rounds", type=int, default=5)
    parser.add_argument("--samples", type=int, default=40)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--K", type=int, nargs="+", default=[100, 400, 1600, 6400])
    parser.add_argument("--antithetic", action="store_true")
    parser.add_argument("--delta", type=float, default=0.05)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    M, T, N = args.clients, args.rounds, args.samples
    steps = 0.3 * rng.normal(size=(T, M, N, 2))
    snaps = np.concatenate([np.zeros((1, M, N, 2)), np.cumsum(steps, axis=0)])
    ev = UtilityEvaluator(snaps, rng.integers(0, 2, size=N))
    exact = exact_verfedsv(ev)
    span = float(exact.values.max() - exact.values.min())
    print(f"M={M} T={T} N={N}  value range {span:.4g}  utility range {exact.utility_range:.4g}")
    print(f"{'K':>7} {'mean err/range':>15} {'worst err/range':>16} {'hoeffding eps/range':>20}")
    for K in args.K:
        errs = [np.abs(mc_verfedsv(ev, K, seed=s, antithetic=args.antithetic).values - exact.values).max()
                for s in range(args.seeds)]
        bound = hoeffding_eps(exact.utility_range, M, K, args.delta)
        print(f"{K:>7} {np.mean(errs) / span:>15.4f} {np.max(errs) / span:>16.4f} {bound / span:>20.4f}")


if __name__ == "__main__":
    main()
