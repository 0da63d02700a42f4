"""Throughput against coherence for Greedy and Smart at several accuracy floors."""

import argparse

from _common import out_dir

from approxint.experiments import smart_experiment
from approxint.report import compute_metrics


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--periods", type=int, default=3000)
    ap.add_argument("--floors", type=float, nargs="+", default=[0.5, 0.6, 0.7, 0.8, 0.9])
    args = ap.parse_args()
    rep = compute_metrics(smart_experiment(args.periods, floors=tuple(args.floors)),
                          config={"experiment": "smart", "periods": args.periods})
    path = out_dir() / "smart_tradeoff.csv"
    rep.save(path)
    print(f"{'strategy':<14}{'throughput':>11}{'coherence':>11}{'mean p':>8}")
    for name, m in rep.strategies.items():
        print(f"{name:<14}{m.throughput_norm:>11.3f}{m.coherence:>11.3f}{m.mean_knob:>8.1f}")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
