#!/usr/bin/env python3
"""Time both clustering variants over problem sizes and report scaling.

Writes the raw timings as CSV and prints the fitted log-log slopes plus
the per-iteration speedup at the largest size. With the default sizes
the sweep takes a couple of minutes; pass smaller --sizes for a quick
look.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from planarseg.bench import (
    DEFAULT_SIZES,
    bench_clustering,
    bench_results_to_csv,
    fit_loglog_slope,
)


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--sizes",
        default=",".join(str(s) for s in DEFAULT_SIZES),
        help="comma-separated pixel counts",
    )
    parser.add_argument("--k", type=int, default=10, help="anchors per dimension")
    parser.add_argument("--iters", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--vanilla-iters", type=int, default=1)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="complexity_sweep.csv")
    return parser.parse_args()


def main() -> int:
    args = parse_args()
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    results = bench_clustering(
        sizes=sizes,
        config_grid=[(args.k, args.iters)],
        repeats=args.repeats,
        workers=args.workers,
        vanilla_iters=args.vanilla_iters,
        rng_seed=args.seed,
    )
    Path(args.out).write_text(bench_results_to_csv(results))
    print(f"wrote {args.out}")

    fast = {r.n: r for r in results if r.variant == "fast"}
    vanilla = {r.n: r for r in results if r.variant == "vanilla"}
    print(f"{'N':>8} {'fast iter_ms':>14} {'vanilla iter_ms':>16} {'ratio':>8}")
    for n in sizes:
        ratio = vanilla[n].iter_ms / fast[n].iter_ms
        print(
            f"{n:>8} {fast[n].iter_ms:>14.3f} "
            f"{vanilla[n].iter_ms:>16.3f} {ratio:>7.1f}x"
        )
    if len(sizes) >= 2:
        fast_slope = fit_loglog_slope(sizes, [fast[n].iter_ms for n in sizes])
        vanilla_slope = fit_loglog_slope(sizes, [vanilla[n].iter_ms for n in sizes])
        print(f"log-log slope fast:    {fast_slope:.3f} (anchor count fixed, ~1)")
        print(f"log-log slope vanilla: {vanilla_slope:.3f} (all-pairs, ~2)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
