"""Cyclic RW2 binomial smoother over 366 days: mean absolute error of the
Laplace and corrected means against the sampler, for a few prior precisions.

    python scripts/tokyo.py --precision 1e3 1e4 1e5
"""
import argparse

import numpy as np

from lapvbc.experiments import tokyo_comparison
from lapvbc.simulate import TOKYO_PRECISION


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--precision", type=float, nargs="+", default=[TOKYO_PRECISION])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iters", type=int, default=200_000)
    args = ap.parse_args()

    print("precision  MAE(GA)   MAE(VBC)  ratio   MC-err   fit(ms)  VBC(ms)  MCMC(s)")
    for tau in args.precision:
        c = tokyo_comparison(args.seed, tau, args.iters, args.iters // 10)
        print(f"{tau:<9.0e}  {c.mae_ga:.5f}  {c.mae_vbc:.5f}  {c.mae_vbc / c.mae_ga:.3f}  "
              f"{np.mean(c.mc_error):.5f}  {c.fit_seconds * 1e3:7.1f}  "
              f"{c.correct_seconds * 1e3:7.1f}  {c.mcmc_seconds:7.1f}")


if __name__ == "__main__":
    main()
