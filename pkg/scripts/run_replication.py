"""Run the CV-versus-oracle simulation study at one or more total sample sizes.

    python3 scripts/run_replication.py --N 10000 25000 --outdir results/
"""

import argparse
import json
from pathlib import Path

from compost.io import write_atomic
from compost.simharness import StudyConfig, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--N", type=int, nargs="+", default=[10_000, 25_000])
    ap.add_argument("--seed", type=int, default=StudyConfig.seed)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--outdir", type=Path, default=None, help="write report-<N>.json/.csv here")
    args = ap.parse_args()

    for N in args.N:
        report = run_study(StudyConfig(n_total=N, seed=args.seed), threads=args.threads)
        print(f"N={N}  column sizes {report.sizes.min()}..{report.sizes.max()}  prior lambda {report.prior_lambda:.3g}")
        for scheme, stats in report.summary().items():
            o, c = stats["loss_oracle"], stats["loss_cv"]
            print(
                f"  {scheme:<8} oracle median {o['median']:.4f} ({o['min']:.3f}, {o['max']:.3f})"
                f"   cv median {c['median']:.4f} ({c['min']:.3f}, {c['max']:.3f})"
                f"   cv failures {stats['cv_failures']}/{report.config.s}"
            )
        if args.outdir:
            args.outdir.mkdir(parents=True, exist_ok=True)
            write_atomic(args.outdir / f"report-{N}.json", report.to_json())
            write_atomic(args.outdir / f"report-{N}.csv", report.to_csv())
            with open(args.outdir / f"summary-{N}.json", "w") as fh:
                json.dump(report.summary(), fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
