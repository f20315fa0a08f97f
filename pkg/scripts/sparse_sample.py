"""One low-count column estimated with a flat and with a pooled-prior base measure.

Draws the default study's truths, takes the column with the fewest counts,
and compares ``KL(p, p_hat)`` under uniform weights, under weights from the
pooled cross-validated estimate, and for the pooled estimate itself.

    python3 scripts/sparse_sample.py --seed 20240517
"""

import argparse

import numpy as np

from compost.domain import kl_divergence
from compost.estimator import sscomp
from compost.simharness import STREAM_SAMPLES, StudyConfig, generate_truths, sample_multinomial, split_total, stream


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=StudyConfig.seed)
    ap.add_argument("--N", type=int, default=10_000)
    args = ap.parse_args()

    cfg = StudyConfig(n_total=args.N, seed=args.seed)
    P, _ = generate_truths(cfg)
    sizes = split_total(cfg.n_total, cfg.s, cfg.seed, cfg.split_concentration)
    K = np.column_stack([sample_multinomial(P[:, x], sizes[x], stream(cfg.seed, STREAM_SAMPLES, x)) for x in range(cfg.s)])
    x = int(np.argmin(sizes))
    k, p = K[:, x], P[:, x]
    prior, _ = sscomp(K.sum(axis=1))
    flat, t_flat = sscomp(k)
    shaped, t_shaped = sscomp(k, prior)
    print(f"column {x}: n={int(k.sum())}, {int(np.sum(k == 0))} empty cells of {k.size}")
    print(f"  uniform weights   KL={kl_divergence(p, flat):.3f}  lambda={t_flat.chosen_lambda:.3g}")
    print(f"  prior weights     KL={kl_divergence(p, shaped):.3f}  lambda={t_shaped.chosen_lambda:.3g}")
    print(f"  pooled estimate   KL={kl_divergence(p, prior):.3f}")


if __name__ == "__main__":
    main()
