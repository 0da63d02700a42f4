"""Write the report CSVs of every acceptance experiment into a directory.

    python3 scripts/acceptance_reports.py out/acceptance
"""

import argparse
from pathlib import Path

from approxint.experiments import acceptance_runs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dest", type=Path)
    args = ap.parse_args()
    args.dest.mkdir(parents=True, exist_ok=True)
    for name, text in acceptance_runs().reports().items():
        (args.dest / name).write_text(text, encoding="utf-8")
        print(args.dest / name)


if __name__ == "__main__":
    main()
