"""Poisson regression replicates: posterior means of the Laplace fit, the
corrected fit and the sampler for the intercept and slope.

    python scripts/poisson_replicates.py --replicates 20 --iters 200000
"""
import argparse

import numpy as np

from lapvbc.experiments import poisson_replicate


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--iters", type=int, default=200_000)
    ap.add_argument("--burn-in", type=int, help="default: a tenth of --iters")
    args = ap.parse_args()

    print("seed  label      GA        VBC       MCMC      MC-err   |GA-MCMC| |VBC-MCMC|")
    burn_in = args.iters // 10 if args.burn_in is None else args.burn_in
    runs = []
    for seed in range(1, args.replicates + 1):
        r = poisson_replicate(seed, args.n, args.iters, burn_in)
        runs.append(r)
        for k, label in enumerate(r.labels):
            print(f"{seed:4d}  {label:9s} {r.mean_ga[k]:9.4f} {r.mean_vbc[k]:9.4f} "
                  f"{r.mean_mcmc[k]:9.4f} {r.mc_error[k]:8.4f} {r.error_ga[k]:9.4f} "
                  f"{r.error_vbc[k]:9.4f}")
    wins = sum(r.improved() for r in runs)
    print(f"\ncorrection closer to the sampler on every coefficient: {wins}/{len(runs)}")
    print("mean |GA - MCMC| :", np.mean([r.error_ga for r in runs], axis=0).round(4))
    print("mean |VBC - MCMC|:", np.mean([r.error_vbc for r in runs], axis=0).round(4))


if __name__ == "__main__":
    main()
