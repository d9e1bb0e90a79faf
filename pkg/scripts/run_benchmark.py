#!/usr/bin/env python3
"""Runtime and conditioning comparison: O-spline fits vs the dense exact fit.

Runs the full pipeline (fit + 3000 posterior samples + derivative curves)
over a grid of data sizes.  Use --profile ci for 3 timed repetitions per
cell instead of 10.  Timing cells should be run single-threaded; set
OMP_NUM_THREADS=1 & co before launching for stable numbers.
"""

import argparse

from osplines.simbench import load_config_file, make_config, run_benchmark_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="key = value overrides file")
    ap.add_argument("--profile", default="full", choices=["full", "ci"])
    ap.add_argument("--out", default="results/bench")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    overrides = load_config_file(args.config) if args.config else {}
    overrides.pop("experiment", None)
    overrides.update({"out": args.out, "seed": args.seed})
    result = run_benchmark_study(make_config("bench", args.profile, overrides))
    print(f"{'n':>5} {'method':>12} {'rel runtime':>12} {'log10 CN':>9}")
    for cell in result.cells:
        if cell.status == "ok":
            print(
                f"{cell.n:>5} {cell.method:>12} "
                f"{cell.mean_rel:>8.2f}({cell.sd_rel:.2f}) {cell.log10_cn_max:>9.2f}"
            )
        else:
            print(f"{cell.n:>5} {cell.method:>12} {'--':>12} {'--':>9}")
    for path in result.files:
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
