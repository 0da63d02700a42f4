"""Helpers shared by the experiment scripts."""

import os
from pathlib import Path

from approxint.cli import OUT_ENV


def out_dir(sub: str = "") -> Path:
    path = Path(os.environ.get(OUT_ENV) or "out") / sub
    path.mkdir(parents=True, exist_ok=True)
    return path
