"""Monte Carlo error rate of the linearised estimator at lam = (m n)^(-1/2).

The truth has log probabilities at ``sigma`` times evenly spaced normal
quantiles, so ``eta0'eta0`` grows in proportion to ``m``.  Prints the
Monte Carlo mean of the penalised error, its exact expectation, and the
bound ``lam eta0'eta0 + 1/(n lam)`` for each ``n``, then the fitted slope.

    python3 scripts/rate_study.py --sigma 1 3 --m 100
"""

import argparse

import numpy as np
from scipy.stats import norm

from compost.linearized import TruthSpec, rate_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--m", type=int, default=100)
    ap.add_argument("--sigma", type=float, nargs="+", default=[0.5, 1.0, 2.0, 3.0])
    ap.add_argument("--n", type=float, nargs="+", default=[1e3, 1e4, 1e5, 1e6])
    ap.add_argument("--replications", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    grid = norm.ppf((np.arange(args.m) + 0.5) / args.m)
    for sigma in args.sigma:
        rep = rate_experiment(TruthSpec.from_eta(sigma * grid), args.n, replications=args.replications, seed=args.seed)
        print(f"sigma={sigma:g}  eta0'eta0/m={rep.eta0_sq / args.m:.3f}  sum rho={rep.rho_sum:.4f}")
        print(f"  {'n':>9} {'lambda':>10} {'mc mean':>11} {'expected':>11} {'bound':>11} {'mc/bound':>9}")
        for r in rep.records:
            print(f"  {r.n:>9d} {r.lam:>10.3g} {r.mc_mean:>11.4g} {r.expected:>11.4g} {r.bound:>11.4g} {r.ratio:>9.3f}")
        print(f"  slope of log error on log n: {rep.slope():.3f}\n")


if __name__ == "__main__":
    main()
