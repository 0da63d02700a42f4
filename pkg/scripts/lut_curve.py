"""Measured coherence of the trained 6-class model against the number of features used.

Writes ``lut_curve.csv`` (p, lut, measured) and prints a coarse table.
"""

import argparse
import csv

from _common import out_dir

from approxint.experiments import lut_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    curve = lut_curve(samples=args.samples, seed=args.seed)
    path = out_dir() / "lut_curve.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "lut", "measured"])
        for p, (lut, coh) in enumerate(zip(curve.model.accuracy_lut, curve.coherence)):
            w.writerow([p, repr(float(lut)), repr(float(coh))])
    print(f"class-0 share {curve.first_class_share:.3f}, holdout accuracy {curve.accuracy:.3f}")
    for p in (0, 1, 2, 5, 10, 20, 40, 70, 140):
        print(f"p={p:<4} lut={curve.model.accuracy_lut[p]:.3f} measured={curve.coherence[p]:.3f}")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
