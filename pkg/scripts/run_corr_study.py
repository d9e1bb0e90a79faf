#!/usr/bin/env python3
"""Correlation-convergence study: exact vs O-spline auto/cross correlations.

Defaults reproduce the full study (orders 1-4, 5 to 100 knots on [0, 15]);
results land in results/corr as plot-ready CSV plus a manifest.
"""

import argparse

from osplines.simbench import load_config_file, make_config, run_correlation_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="key = value overrides file")
    ap.add_argument("--profile", default="full", choices=["full", "ci"])
    ap.add_argument("--out", default="results/corr")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    overrides = load_config_file(args.config) if args.config else {}
    overrides.pop("experiment", None)
    overrides.update({"out": args.out, "seed": args.seed})
    result = run_correlation_study(make_config("corr", args.profile, overrides))
    for (p, k, q), err in sorted(result.max_errors.items()):
        print(f"p={p} k={k:>3} q={q}: max corr error {err:.5f}")
    for path in result.files:
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
