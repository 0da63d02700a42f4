"""Building anytime models: synthetic data, OvR training, schedule, costs, LUT."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .anytime import AnytimeModel, partial_labels

log = logging.getLogger(__name__)


class TrainingDivergedWarning(RuntimeWarning):
    pass


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y disagree on the number of samples")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("labels must lie in range(num_classes)")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    def split(self, train_fraction: float = 0.7, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        perm = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(train_fraction * len(self)))
        a, b = perm[:cut], perm[cut:]
        return (Dataset(self.X[a], self.y[a], self.num_classes, self.params),
                Dataset(self.X[b], self.y[b], self.num_classes, self.params))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{j}" for j in range(self.num_features)] + ["label"])
            for row, label in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in row] + [int(label)])


def class_means(c: int, n: int, separation: float, seed: int, decay: float = 1.0) -> np.ndarray:
    """Class centroids at pairwise distance ``separation``, centred on the origin.

    Feature ``j`` carries class information in proportion to
    ``decay ** rank(j)`` with ranks shuffled by ``seed``, so with ``decay < 1``
    a few features dominate.
    """
    rng = np.random.default_rng(seed)
    profile = rng.permutation(decay ** np.arange(n))
    G = rng.standard_normal((n, c)) * profile[:, None]
    if n >= c:
        Q, _ = np.linalg.qr(G)
        means = separation / np.sqrt(2) * Q.T
    else:
        # not enough dimensions for equidistant means: random directions
        means = separation / 2 * (G / np.linalg.norm(G, axis=0)).T
    return means - means.mean(axis=0)


def gen_dataset(
    c: int = 6,
    n: int = 140,
    per_class: int = 200,
    separation: float = 10.0,
    seed: int = 0,
    decay: float = 1.0,
) -> Dataset:
    """Gaussian clusters (unit covariance) around :func:`class_means`."""
    if c < 2 or n < 1 or per_class < 1:
        raise ValueError("need c >= 2, n >= 1 and per_class >= 1")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    if not 0 < decay <= 1:
        raise ValueError("decay must be in (0, 1]")
    means = class_means(c, n, separation, seed, decay)
    rng = np.random.default_rng([seed, 1])
    y = rng.permutation(np.repeat(np.arange(c), per_class))
    X = means[y] + rng.standard_normal((len(y), n))
    params = dict(c=c, n=n, per_class=per_class, separation=separation, seed=seed, decay=decay)
    return Dataset(X, y, c, params)


def sample_like(params: dict, count: int, seed: int) -> Dataset:
    """Fresh samples from the generator described by ``params`` (balanced, shuffled)."""
    c, n = params["c"], params["n"]
    means = class_means(c, n, params["separation"], params["seed"], params.get("decay", 1.0))
    rng = np.random.default_rng([params["seed"], 2, seed])
    y = rng.integers(0, c, size=count)
    X = means[y] + rng.standard_normal((count, n))
    return Dataset(X, y, c, dict(params))


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-2
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    fit_bias: bool = False
    # step size at update t = 1, 2, ... is 1 / (lam * (t + t0 - 1))
    t0: float = 1.0
    # an epoch diverges when its objective exceeds the previous one by more
    # than divergence_tol (relative) plus divergence_atol (absolute)
    divergence_tol: float = 0.05
    divergence_atol: float = 0.01

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(eq=False)
class TrainResult:
    weights: np.ndarray
    biases: np.ndarray
    objective: list[float]
    diverged: bool = False


def ovr_objective(W: np.ndarray, Xa: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Per-class ``lam/2 ||w||^2 + mean hinge``."""
    margins = Y * (Xa @ W.T)
    hinge = np.maximum(0.0, 1.0 - margins).mean(axis=0)
    return 0.5 * lam * np.sum(W**2, axis=1) + hinge


def train_ovr(data: Dataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch Pegasos, one binary hinge-loss problem per class.

    All classes share the sample stream; each keeps its own hyperplane and is
    projected onto the ball of radius ``1/sqrt(lam)`` after every step. The
    iterates of each epoch are averaged; the objective is tracked on that
    average and the last epoch's average is returned.
    """
    X, y, c = data.X, data.y, data.num_classes
    Xa = np.hstack([X, np.ones((len(X), 1))]) if cfg.fit_bias else X
    Y = np.where(y[:, None] == np.arange(c)[None, :], 1.0, -1.0)
    W = np.zeros((c, Xa.shape[1]))
    rng = np.random.default_rng(cfg.seed)
    radius = 1.0 / np.sqrt(cfg.lam)
    history: list[float] = []
    diverged = False
    t = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(X))
        avg = np.zeros_like(W)
        steps = 0
        for start in range(0, len(X), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            t += 1
            eta = 1.0 / (cfg.lam * (t + cfg.t0 - 1))
            xb, yb = Xa[idx], Y[idx]
            active = (yb * (xb @ W.T)) < 1.0
            grad = cfg.lam * W - ((active * yb).T @ xb) / len(idx)
            W -= eta * grad
            norms = np.linalg.norm(W, axis=1)
            scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
            W *= scale[:, None]
            avg += W
            steps += 1
        avg /= steps
        obj = float(ovr_objective(avg, Xa, Y, cfg.lam).sum())
        if history and obj > history[-1] * (1 + cfg.divergence_tol) + cfg.divergence_atol:
            diverged = True
            warnings.warn(
                f"OvR objective rose from {history[-1]:.4g} to {obj:.4g} in epoch {epoch}",
                TrainingDivergedWarning, stacklevel=2,
            )
        history.append(obj)
    W = avg
    if cfg.fit_bias:
        return TrainResult(W[:, :-1].copy(), W[:, -1].copy(), history, diverged)
    return TrainResult(W, np.zeros(c), history, diverged)


def order_features(weights: np.ndarray) -> np.ndarray:
    """Schedule features by descending summed absolute coefficient (stable for ties)."""
    importance = np.abs(np.atleast_2d(weights)).sum(axis=0)
    return np.argsort(-importance, kind="stable")


def assign_costs(
    n: int,
    kind: str = "uniform",
    *,
    c0: float = 10.0,
    profile: list[float] | np.ndarray | None = None,
    seed: int = 0,
    scale: float = 10.0,
    sigma: float = 1.0,
) -> np.ndarray:
    """Per-feature energy costs (uJ).

    ``uniform`` gives every feature ``c0``; ``profile`` takes an explicit
    list; ``heavy-tail`` draws lognormal costs with median ``scale``.
    """
    if kind == "uniform":
        if c0 < 0:
            raise ValueError("c0 must be non-negative")
        return np.full(n, float(c0))
    if kind == "profile":
        costs = np.asarray(profile, dtype=float)
        if costs.shape != (n,):
            raise ValueError(f"cost profile has {costs.size} entries, expected {n}")
        if np.any(costs < 0):
            raise ValueError("costs must be non-negative")
        return costs
    if kind == "heavy-tail":
        rng = np.random.default_rng(seed)
        return scale * rng.lognormal(0.0, sigma, size=n)
    raise ValueError(f"unknown cost model {kind!r}")


def coherence_counts(model: AnytimeModel, X: np.ndarray) -> np.ndarray:
    labels = partial_labels(model, X)
    return np.sum(labels == labels[:, -1:], axis=0)


def build_lut(model: AnytimeModel, holdout: Dataset | np.ndarray) -> np.ndarray:
    """Fraction of holdout samples whose label after ``p`` features matches the full one."""
    X = holdout.X if isinstance(holdout, Dataset) else np.asarray(holdout)
    if len(X) == 0:
        raise ValueError("holdout set is empty")
    lut = coherence_counts(model, X) / len(X)
    lut[-1] = 1.0
    return lut


def accuracy(model: AnytimeModel, data: Dataset, p: int | None = None) -> float:
    labels = partial_labels(model, data.X)
    col = model.num_features if p is None else p
    return float(np.mean(labels[:, col] == data.y))


@dataclass(frozen=True)
class ModelRecipe:
    classes: int = 6
    features: int = 140
    per_class: int = 400
    separation: float = 8.0
    decay: float = 0.98
    data_seed: int = 0
    holdout_fraction: float = 0.3
    cost_kind: str = "uniform"
    cost_c0: float = 10.0
    cost_seed: int = 0
    cost_scale: float = 10.0


def build_model(recipe: ModelRecipe = ModelRecipe(), cfg: TrainConfig = TrainConfig(),
                costs: np.ndarray | None = None) -> tuple[AnytimeModel, Dataset]:
    """Generate data, train, schedule, cost and tabulate a model. Returns it with its holdout."""
    data = gen_dataset(recipe.classes, recipe.features, recipe.per_class,
                       recipe.separation, recipe.data_seed, recipe.decay)
    train, holdout = data.split(1 - recipe.holdout_fraction, seed=recipe.data_seed)
    result = train_ovr(train, cfg)
    order = order_features(result.weights)
    if costs is None:
        costs = assign_costs(recipe.features, recipe.cost_kind, c0=recipe.cost_c0,
                             seed=recipe.cost_seed, scale=recipe.cost_scale)
    model = AnytimeModel(result.weights, result.biases, order, costs,
                         meta={"generator": data.params, "train": asdict(cfg),
                               "objective": result.objective})
    model = model.with_lut(build_lut(model, holdout))
    log.info("trained %d-class model on %d samples; holdout accuracy %.3f",
             recipe.classes, len(train), accuracy(model, holdout))
    return model, holdout
