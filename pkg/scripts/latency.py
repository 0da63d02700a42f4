"""Latency histograms (power cycles per output) on a constant and a square-wave trace."""

from _common import out_dir

from approxint.experiments import latency_experiment
from approxint.report import compute_metrics


def main():
    for kind in ("constant", "square-wave"):
        rep = compute_metrics(latency_experiment(kind), config={"experiment": "latency", "trace": kind})
        rep.save(out_dir() / f"latency-{kind}.csv", out_dir() / f"latency-{kind}.latency.csv")
        print(kind)
        for name, m in rep.strategies.items():
            hist = " ".join(f"{c}:{n}" for c, n in m.latency_hist.items())
            print(f"  {name:<14} {hist}")
    print(f"wrote {out_dir()}")


if __name__ == "__main__":
    main()
