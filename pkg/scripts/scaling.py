"""Wall time of the Laplace fit, the correction and the sampler as the
number of observations grows.

    python scripts/scaling.py --sizes 1000 10000 100000
"""
import argparse

from lapvbc.experiments import timing


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000])
    ap.add_argument("--repeats", type=int, default=15)
    ap.add_argument("--iters", type=int, default=200_000)
    ap.add_argument("--no-mcmc", action="store_true", help="skip the sampler")
    args = ap.parse_args()

    print("n         fit(ms)  VBC(ms)  (fit+VBC)/fit  MCMC(s)  MCMC/(fit+VBC)")
    for n in args.sizes:
        t = timing(n, repeats=args.repeats, iters=args.iters,
                   burn_in=args.iters // 10, sample=not args.no_mcmc)
        mcmc = "-" if t.mcmc_seconds is None else f"{t.mcmc_seconds:.1f}"
        factor = "-" if t.mcmc_factor is None else f"{t.mcmc_factor:.0f}"
        print(f"{n:<9d} {t.fit_seconds * 1e3:8.1f} {t.correct_seconds * 1e3:8.1f} "
              f"{t.ratio:14.2f} {mcmc:>8s} {factor:>15s}")


if __name__ == "__main__":
    main()
