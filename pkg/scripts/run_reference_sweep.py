#!/usr/bin/env python3
"""Run the reference client-count / data-volume sweep and print a summary.

Writes results.csv (one row per round per cell) and summary.csv into the
output directory. Rerunning with the same spec reproduces identical bytes.
"""

import argparse
import collections
import statistics

from floatfl.sim import DatasetSpec, SweepSpec, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="sweep-results")
    ap.add_argument("--clients", type=int, nargs="+", default=[10, 20, 50, 100])
    ap.add_argument("--per-class", type=int, nargs="+", default=[10, 20])
    ap.add_argument("--rounds", type=int, default=20)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    args = ap.parse_args()

    spec = SweepSpec(
        client_counts=tuple(args.clients),
        per_class_counts=tuple(args.per_class),
        rounds=args.rounds,
        seeds=tuple(args.seeds),
        dataset=DatasetSpec(),
    )
    paths = run_sweep(spec, args.out)
    print(f"results: {paths['results']}")
    print(f"summary: {paths['summary']}")

    finals = collections.defaultdict(list)
    with open(paths["summary"]) as fh:
        next(fh)
        for line in fh:
            n, x, seed, status, final_round, final_acc = line.strip().split(",")
            if final_acc:
                finals[(int(n), int(x))].append(float(final_acc))
    print(f"\n{'clients':>8} {'x/class':>8} {'median final accuracy':>23}")
    for (n, x), accs in sorted(finals.items()):
        print(f"{n:>8} {x:>8} {statistics.median(accs):>23.4f}")


if __name__ == "__main__":
    main()
