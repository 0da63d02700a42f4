"""Loop-perforated Harris corner detection as an energy-metered workload.

One loop iteration computes the Harris response of one pixel. A
:class:`PerforationPlan` skips a seeded random subset of exactly
``round(skip_fraction * P)`` pixels; skipped pixels get response 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("image must be 2-D")
        if px.shape[0] < 3 or px.shape[1] < 3:
            raise ValueError("image must be at least 3x3")
        if px.min() < 0 or px.max() > 255:
            raise ValueError("pixel values must lie in 0..255")
        px = px.astype(np.uint8)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def size(self) -> int:
        return self.pixels.size


def read_pgm(path: str | Path) -> GrayImage:
    """Read a binary (P5) PGM with maxval <= 255."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pos += 1
    raw = np.frombuffer(data[pos:pos + width * height], dtype=np.uint8)
    if raw.size != width * height:
        raise ValueError(f"{path}: expected {width * height} pixels, found {raw.size}")
    return GrayImage(raw.reshape(height, width))


def write_pgm(img: GrayImage, path: str | Path) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


def scene(name: str, size: int = 64) -> GrayImage:
    """Procedural test scenes with known geometry.

    ``rectangle``: one bright filled rectangle (4 corners).
    ``cross``: a plus sign (12 corners).
    ``complex``: several shapes of differing contrast, so corner strengths vary.
    """
    img = np.full((size, size), 30, dtype=np.uint8)
    s = size / 64
    def box(r0, r1, c0, c1, value):
        img[int(r0 * s):int(r1 * s), int(c0 * s):int(c1 * s)] = value

    if name == "rectangle":
        box(16, 48, 20, 44, 200)
    elif name == "cross":
        box(12, 52, 26, 38, 200)
        box(26, 38, 12, 52, 200)
    elif name == "complex":
        box(6, 22, 6, 26, 210)
        box(8, 20, 36, 58, 110)
        box(30, 58, 8, 20, 160)
        box(30, 42, 20, 30, 160)
        box(34, 56, 38, 56, 70)
        box(40, 50, 44, 50, 140)
    elif name == "uniform":
        pass
    else:
        raise ValueError(f"unknown scene {name!r}")
    return GrayImage(img)


SCENES = ("rectangle", "cross", "complex")


@dataclass(frozen=True)
class Corner:
    x: int
    y: int
    response: float


@dataclass(frozen=True)
class CornerSet:
    corners: tuple[Corner, ...] = ()

    def __len__(self) -> int:
        return len(self.corners)

    def __iter__(self):
        return iter(self.corners)

    def positions(self) -> np.ndarray:
        return np.array([(c.x, c.y) for c in self.corners], dtype=float).reshape(-1, 2)

    def to_rows(self) -> list[list]:
        return [[c.x, c.y, c.response] for c in self.corners]

    @classmethod
    def from_rows(cls, rows) -> "CornerSet":
        return cls(tuple(Corner(int(x), int(y), float(r)) for x, y, r in rows))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "response"])
            w.writerows([c.x, c.y, repr(c.response)] for c in self.corners)


@dataclass(frozen=True)
class DetectorParams:
    window: int = 3
    k: float = 0.04
    threshold: float = 0.1
    nms_radius: int = 3


@dataclass(frozen=True)
class PerforationPlan:
    skip_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.skip_fraction < 1:
            raise ValueError("skip_fraction must be in [0, 1)")

    def executed_count(self, iterations: int) -> int:
        return iterations - int(round(self.skip_fraction * iterations))

    def executed_mask(self, shape: tuple[int, int]) -> np.ndarray:
        total = shape[0] * shape[1]
        keep = self.executed_count(total)
        mask = np.zeros(total, dtype=bool)
        if keep == total:
            mask[:] = True
        else:
            mask[np.random.default_rng(self.seed).permutation(total)[:keep]] = True
        return mask.reshape(shape)


def harris_response(img: GrayImage, params: DetectorParams = DetectorParams()) -> np.ndarray:
    if img.height < params.window or img.width < params.window:
        raise ValueError(f"image smaller than the {params.window}x{params.window} window")
    f = img.pixels.astype(float) / 255.0
    ix = ndimage.sobel(f, axis=1, mode="nearest")
    iy = ndimage.sobel(f, axis=0, mode="nearest")
    sxx = ndimage.uniform_filter(ix * ix, params.window, mode="nearest")
    syy = ndimage.uniform_filter(iy * iy, params.window, mode="nearest")
    sxy = ndimage.uniform_filter(ix * iy, params.window, mode="nearest")
    return sxx * syy - sxy**2 - params.k * (sxx + syy) ** 2


def detect_corners(
    img: GrayImage,
    plan: PerforationPlan = PerforationPlan(),
    params: DetectorParams = DetectorParams(),
) -> CornerSet:
    """Perforated Harris detector with greedy non-maximum suppression.

    A pixel is a candidate when its computed response exceeds
    ``threshold * max(response)``; candidates are accepted strongest first
    (raster order breaks ties) unless an accepted corner lies within
    ``nms_radius`` (Chebyshev distance).
    """
    response = harris_response(img, params)
    response = np.where(plan.executed_mask(response.shape), response, 0.0)
    peak = response.max()
    if peak <= 0:
        return CornerSet()
    cand = np.flatnonzero(response.ravel() > params.threshold * peak)
    cand = cand[np.argsort(-response.ravel()[cand], kind="stable")]
    rows, cols = np.divmod(cand, img.width)
    accepted: list[tuple[int, int]] = []
    r = params.nms_radius
    for y, x in zip(rows, cols):
        if all(abs(x - ax) > r or abs(y - ay) > r for ax, ay in accepted):
            accepted.append((int(x), int(y)))
    corners = sorted((Corner(x, y, float(response[y, x])) for x, y in accepted),
                     key=lambda c: (c.y, c.x))
    return CornerSet(tuple(corners))


def equivalence_check(reference: CornerSet, approx: CornerSet) -> bool:
    """Same corner count, and each approximate corner is strictly nearest to a distinct reference corner."""
    if len(reference) != len(approx):
        return False
    if len(reference) == 0:
        return True
    ref = reference.positions()
    app = approx.positions()
    d = np.linalg.norm(app[:, None, :] - ref[None, :, :], axis=2)
    matched = set()
    for row in d:
        j = int(np.argmin(row))
        if np.sum(row == row[j]) > 1 or j in matched:
            return False
        matched.add(j)
    return True


@dataclass(frozen=True)
class CornerCosts:
    iteration_uj: float = 0.5
    overhead_uj: float = 100.0
    output_uj: float = 50.0

    def __post_init__(self):
        if min(self.iteration_uj, self.overhead_uj, self.output_uj) < 0:
            raise ValueError("costs must be non-negative")


def iteration_energy(costs: CornerCosts = CornerCosts(), index: int | None = None) -> float:
    """Energy of one loop iteration; the default model is constant across pixels."""
    return costs.iteration_uj


def detection_cost(img: GrayImage, plan: PerforationPlan, costs: CornerCosts = CornerCosts()) -> float:
    """Fixed overhead plus the executed iterations (output transmission not included)."""
    return costs.overhead_uj + plan.executed_count(img.size) * iteration_energy(costs)


def choose_skip(
    budget: float, img: GrayImage, costs: CornerCosts = CornerCosts(), seed: int = 0
) -> PerforationPlan | None:
    """Least perforation that fits ``budget``; None when even overhead plus output do not fit."""
    spare = budget - costs.overhead_uj - costs.output_uj
    if spare < 0:
        return None
    total = img.size
    if costs.iteration_uj == 0:
        executed = total
    else:
        executed = min(total, int(math.floor(spare / costs.iteration_uj + 1e-9)))
    if executed == 0:
        return None
    return PerforationPlan((total - executed) / total, seed)
