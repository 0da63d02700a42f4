"""Greedy against Checkpoint at several checkpoint intervals (quarter-item budget per cycle)."""

import argparse

from _common import out_dir

from approxint.experiments import CHECKPOINT_INTERVALS, throughput_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--periods", type=int, default=400)
    ap.add_argument("--intervals", type=int, nargs="+", default=list(CHECKPOINT_INTERVALS))
    args = ap.parse_args()
    rep = throughput_experiment(tuple(args.intervals), args.periods)
    path = out_dir() / "throughput.csv"
    rep.save(path, out_dir() / "throughput.latency.csv")
    greedy = rep["greedy"].outputs_emitted
    print(f"greedy: {greedy} outputs")
    for k in args.intervals:
        n = rep[f"checkpoint:{k}"].outputs_emitted
        print(f"checkpoint:{k:<3} {n:>5} outputs  gain {greedy / max(n, 1):.1f}x")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
