"""Perforated corner detection: equivalence against skip level and on the preset traces."""

import argparse

from approxint.corners import SCENES
from approxint.experiments import corner_trace_runs, perforation_equivalence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--items", type=int, default=400)
    args = ap.parse_args()
    skips = (0.0, 0.2, 0.3, 0.42, 0.5, 0.6, 0.8)
    print("scene      " + "".join(f"{s:>7}" for s in skips))
    for name in SCENES:
        row = [perforation_equivalence(name, s, args.seeds) for s in skips]
        print(f"{name:<11}" + "".join(f"{v:>7.2f}" for v in row))
    print("\ngreedy on preset traces")
    runs = corner_trace_runs(args.items)
    for r in runs:
        print(f"  {r.trace:<4} outputs={r.outputs:<4} equivalent={r.equivalent / max(r.outputs, 1):.3f} "
              f"mean skip={r.mean_skip:.2f}")
    pooled = sum(r.equivalent for r in runs) / sum(r.outputs for r in runs)
    print(f"  pooled equivalence {pooled:.3f}")


if __name__ == "__main__":
    main()
