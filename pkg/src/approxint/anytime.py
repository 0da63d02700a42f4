"""Anytime one-vs-rest linear SVM.

Scores are built one feature at a time in a fixed schedule; a classification
is available after any number of features ``p`` and agrees with the full
classification with a probability that grows with ``p``. Class and feature
indices are zero-based. Argmax ties go to the lowest class index, so with
zero biases an empty score vector classifies as class 0.

Coherence estimators
--------------------
For two classes the full decision is the sign of ``S + R`` where ``S`` sums
the ``p`` scheduled products ``c_j * x_j`` and ``R`` the remaining ones.
:func:`estimate_coherence_analytic` integrates

    P(coherent) = int_0^inf f_S(k) P(R > -k) dk + int_-inf^0 f_S(k) P(R < -k) dk

(which is ``2 * int_0^inf f_S(k) (1 - F_R(-k)) dk`` for symmetric terms) with
``f_S`` and ``F_R`` replaced by normals matched to the exact first two
moments of the product sums. Products of normals are not normal, so the
estimate is approximate; :func:`estimate_coherence_mc` is the exact-in-the-
limit reference and the only estimator for more than two classes or for
correlated coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, stats

MODEL_FORMAT = "approxint-model/1"


@dataclass(eq=False)
class AnytimeModel:
    weights: np.ndarray
    biases: np.ndarray
    feature_order: np.ndarray
    feature_cost: np.ndarray
    accuracy_lut: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        c, n = self.weights.shape
        if c < 2:
            raise ValueError("need at least 2 classes")
        if n < 1:
            raise ValueError("need at least 1 feature")
        self.biases = np.asarray(self.biases, dtype=float)
        if self.biases.shape != (c,):
            raise ValueError(f"expected {c} biases, got shape {self.biases.shape}")
        self.feature_order = np.asarray(self.feature_order, dtype=int)
        if self.feature_order.shape != (n,) or not np.array_equal(
            np.sort(self.feature_order), np.arange(n)
        ):
            raise ValueError("feature_order must be a permutation of range(n)")
        self.feature_cost = np.asarray(self.feature_cost, dtype=float)
        if self.feature_cost.shape != (n,):
            raise ValueError(f"expected {n} feature costs")
        if np.any(self.feature_cost < 0):
            raise ValueError("feature costs must be non-negative")
        if self.accuracy_lut is not None:
            lut = np.asarray(self.accuracy_lut, dtype=float)
            if lut.shape != (n + 1,):
                raise ValueError(f"accuracy_lut must have {n + 1} entries")
            if np.any((lut < 0) | (lut > 1)):
                raise ValueError("accuracy_lut values must lie in [0, 1]")
            if lut[n] != 1.0:
                raise ValueError("accuracy_lut must be exactly 1.0 at p = n")
            self.accuracy_lut = lut

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_features(self) -> int:
        return self.weights.shape[1]

    @property
    def scheduled_costs(self) -> np.ndarray:
        """Feature costs in processing order."""
        return self.feature_cost[self.feature_order]

    @property
    def cumulative_cost(self) -> np.ndarray:
        """``cumulative_cost[p]`` is the cost of the first ``p`` scheduled features."""
        return np.concatenate([[0.0], np.cumsum(self.scheduled_costs)])

    def min_features_for(self, accuracy: float) -> int | None:
        """Smallest ``p`` with ``accuracy_lut[p] >= accuracy``, or None if unreachable."""
        if self.accuracy_lut is None:
            raise ValueError("model has no accuracy lookup table")
        hits = np.flatnonzero(self.accuracy_lut >= accuracy)
        return int(hits[0]) if len(hits) else None

    def with_lut(self, lut: np.ndarray) -> "AnytimeModel":
        return AnytimeModel(
            self.weights, self.biases, self.feature_order, self.feature_cost, lut, dict(self.meta)
        )

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "num_classes": self.num_classes,
            "num_features": self.num_features,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "feature_order": self.feature_order.tolist(),
            "feature_cost": self.feature_cost.tolist(),
            "accuracy_lut": None if self.accuracy_lut is None else self.accuracy_lut.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnytimeModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        model = cls(
            d["weights"], d["biases"], d["feature_order"], d["feature_cost"],
            d.get("accuracy_lut"), d.get("meta", {}),
        )
        if (model.num_classes, model.num_features) != (d["num_classes"], d["num_features"]):
            raise ValueError("model header does not match array shapes")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AnytimeModel":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not a model file ({exc})") from None
        return cls.from_dict(data)


@dataclass(frozen=True, eq=False)
class PartialScore:
    scores: np.ndarray
    p: int


@dataclass(frozen=True)
class Classification:
    label: int
    features_used: int
    margin: float


def init_partial(model: AnytimeModel) -> PartialScore:
    return PartialScore(model.biases.copy(), 0)


def advance(ps: PartialScore, model: AnytimeModel, x: np.ndarray) -> PartialScore:
    """Add the next scheduled feature of ``x`` to every class score."""
    if ps.p >= model.num_features:
        raise ValueError("all features already used")
    j = model.feature_order[ps.p]
    return PartialScore(ps.scores + model.weights[:, j] * x[j], ps.p + 1)


def run_partial(model: AnytimeModel, x: np.ndarray, p: int) -> PartialScore:
    ps = init_partial(model)
    for _ in range(p):
        ps = advance(ps, model, x)
    return ps


def classify(ps: PartialScore) -> Classification:
    scores = ps.scores
    label = int(np.argmax(scores))
    if len(scores) > 1:
        top = np.sort(scores)[::-1]
        margin = float(top[0] - top[1])
    else:
        margin = 0.0
    return Classification(label, ps.p, margin)


def classify_full(model: AnytimeModel, x: np.ndarray) -> Classification:
    scores = model.weights @ np.asarray(x, dtype=float) + model.biases
    return classify(PartialScore(scores, model.num_features))


def coherent(ps: PartialScore, model: AnytimeModel, x: np.ndarray) -> bool:
    """Whether the classification at ``ps.p`` equals the one using every feature."""
    if ps.p == model.num_features:
        return True
    return classify(ps).label == classify_full(model, x).label


def partial_labels(model: AnytimeModel, X: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Labels of every row of ``X`` after ``p = 0..n`` features, shape ``(N, n + 1)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    order = model.feature_order
    Wo = model.weights[:, order]
    out = np.empty((len(X), model.num_features + 1), dtype=np.int64)
    for start in range(0, len(X), chunk):
        Xo = X[start:start + chunk, order]
        contrib = Xo[:, :, None] * Wo.T[None, :, :]
        cum = np.cumsum(contrib, axis=1) + model.biases
        scores = np.concatenate(
            [np.broadcast_to(model.biases, (len(Xo), 1, model.num_classes)), cum], axis=1
        )
        out[start:start + chunk] = np.argmax(scores, axis=2)
    return out


# -- coherence estimation -----------------------------------------------------


@dataclass(eq=False)
class CoefficientStats:
    """Independent normal coefficients and features, in scheduling order.

    ``coef_cov`` optionally replaces ``coef_std`` with a full covariance of
    the coefficient vector (Monte Carlo only).
    """

    coef_mean: np.ndarray
    coef_std: np.ndarray
    feature_mean: np.ndarray
    feature_std: np.ndarray
    coef_cov: np.ndarray | None = None

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in
                  (self.coef_mean, self.coef_std, self.feature_mean, self.feature_std)]
        n = len(arrays[0])
        if any(a.shape != (n,) for a in arrays):
            raise ValueError("all parameter vectors must have the same length")
        if n < 1:
            raise ValueError("need at least one feature")
        self.coef_mean, self.coef_std, self.feature_mean, self.feature_std = arrays
        if np.any(self.coef_std <= 0) or np.any(self.feature_std <= 0):
            raise ValueError("standard deviations must be positive")
        if self.coef_cov is not None:
            cov = np.asarray(self.coef_cov, dtype=float)
            if cov.shape != (n, n):
                raise ValueError(f"coef_cov must be {n}x{n}")
            if not np.allclose(cov, cov.T):
                raise ValueError("coef_cov must be symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.abs(cov).max()):
                raise ValueError("coef_cov must be positive semidefinite")
            self.coef_cov = cov

    @classmethod
    def iid(cls, n: int, coef_std: float = 1.0, feature_std: float = 1.0,
            coef_mean: float = 0.0, feature_mean: float = 0.0) -> "CoefficientStats":
        return cls(np.full(n, coef_mean), np.full(n, coef_std),
                   np.full(n, feature_mean), np.full(n, feature_std))

    @property
    def n(self) -> int:
        return len(self.coef_mean)

    def reordered(self, order: np.ndarray) -> "CoefficientStats":
        order = np.asarray(order)
        cov = None if self.coef_cov is None else self.coef_cov[np.ix_(order, order)]
        return CoefficientStats(self.coef_mean[order], self.coef_std[order],
                                self.feature_mean[order], self.feature_std[order], cov)

    def product_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of each product ``c_j * x_j``."""
        mc, sc, mx, sx = self.coef_mean, self.coef_std, self.feature_mean, self.feature_std
        return mc * mx, sc**2 * sx**2 + mc**2 * sx**2 + mx**2 * sc**2


def estimate_coherence_analytic(stats_: CoefficientStats, p: int, n: int | None = None) -> float:
    """Two-class coherence probability after ``p`` of ``n`` features (normal approximation)."""
    n = stats_.n if n is None else n
    if n != stats_.n:
        raise ValueError(f"stats describe {stats_.n} features, not {n}")
    if not 0 <= p <= n:
        raise ValueError(f"p must be in [0, {n}]")
    if stats_.coef_cov is not None:
        raise ValueError("the analytic estimate assumes independent coefficients")
    if p == n:
        return 1.0
    means, variances = stats_.product_moments()
    mu_r, sd_r = means[p:].sum(), np.sqrt(variances[p:].sum())
    if p == 0:
        # empty sum is zero, which the tie-break sends to the negative class
        return float(stats.norm.cdf(0.0, mu_r, sd_r))
    mu_s, sd_s = means[:p].sum(), np.sqrt(variances[:p].sum())
    if sd_s == 0 or sd_r == 0:
        raise ValueError("degenerate statistics: zero variance")

    f_s = stats.norm(mu_s, sd_s).pdf
    r = stats.norm(mu_r, sd_r)
    upper = max(0.0, mu_s) + 10 * sd_s
    lower = min(0.0, mu_s) - 10 * sd_s
    pos, _ = integrate.quad(lambda k: f_s(k) * r.sf(-k), 0.0, upper, epsabs=1e-6)
    neg, _ = integrate.quad(lambda k: f_s(k) * r.cdf(-k), lower, 0.0, epsabs=1e-6)
    return float(min(1.0, max(0.0, pos + neg)))


@dataclass(frozen=True)
class McEstimate:
    probability: float
    std_error: float
    draws: int


def _draw_coefficients(stats_: CoefficientStats, rng: np.random.Generator, shape: tuple) -> np.ndarray:
    if stats_.coef_cov is None:
        return rng.normal(stats_.coef_mean, stats_.coef_std, size=shape + (stats_.n,))
    return rng.multivariate_normal(stats_.coef_mean, stats_.coef_cov, size=shape,
                                   method="eigh")


def coherence_curve_mc(
    stats_: CoefficientStats,
    classes: int = 2,
    draws: int = 100_000,
    seed: int = 0,
    order: np.ndarray | None = None,
    chunk: int | None = None,
) -> tuple[np.ndarray, int]:
    """Monte Carlo coherence counts for every ``p = 0..n`` from shared draws.

    Each draw samples ``classes`` hyperplanes (a single class-difference
    hyperplane when ``classes == 2``) and one input, both from ``stats_``.
    Returns the per-``p`` coherent counts and the number of draws.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if order is not None:
        stats_ = stats_.reordered(order)
    n = stats_.n
    rng = np.random.default_rng(seed)
    counts = np.zeros(n + 1, dtype=np.int64)
    planes = 1 if classes == 2 else classes
    if chunk is None:
        chunk = max(1, 2_000_000 // (planes * n))
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        coef = _draw_coefficients(stats_, rng, (m, planes))
        x = rng.normal(stats_.feature_mean, stats_.feature_std, size=(m, 1, n))
        cum = np.cumsum(coef * x, axis=2)
        scores = np.concatenate([np.zeros((m, planes, 1)), cum], axis=2)
        if classes == 2:
            labels = (scores[:, 0, :] > 0).astype(np.int64)
        else:
            labels = np.argmax(scores, axis=1)
        counts += np.sum(labels == labels[:, -1:], axis=0)
        done += m
    return counts, draws


def estimate_coherence_mc(
    stats_: CoefficientStats,
    p: int,
    n: int | None = None,
    classes: int = 2,
    draws: int = 100_000,
    seed: int = 0,
    order: np.ndarray | None = None,
) -> McEstimate:
    n = stats_.n if n is None else n
    if n != stats_.n:
        raise ValueError(f"stats describe {stats_.n} features, not {n}")
    if not 0 <= p <= n:
        raise ValueError(f"p must be in [0, {n}]")
    counts, total = coherence_curve_mc(stats_, classes, draws, seed, order)
    prob = counts[p] / total
    return McEstimate(float(prob), float(np.sqrt(prob * (1 - prob) / total)), total)
