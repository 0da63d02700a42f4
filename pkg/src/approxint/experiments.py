"""Reusable experiment recipes shared by the acceptance tests, the CLI and scripts/."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .anytime import (
    AnytimeModel,
    CoefficientStats,
    coherence_curve_mc,
    estimate_coherence_analytic,
    partial_labels,
)
from .corners import (
    SCENES,
    CornerCosts,
    CornerSet,
    PerforationPlan,
    choose_skip,
    detect_corners,
    equivalence_check,
    scene,
)
from .energy import PRESETS, CapacitorState, EnergyTrace, preset_trace, synth_trace
from .report import SimReport, compute_metrics
from .runtime import CornerWorkload, RunLog, RuntimeConfig, StrategyConfig, SvmWorkload, run
from .train import Dataset, ModelRecipe, TrainConfig, build_model, sample_like

SVM_OVERHEAD_UJ = 200.0
SVM_OUTPUT_UJ = 50.0


# -- coherence estimator cross-check ---------------------------------------------------


@dataclass(frozen=True)
class CrossCheckRow:
    p: int
    analytic: float
    monte_carlo: float
    std_error: float

    @property
    def gap(self) -> float:
        return abs(self.analytic - self.monte_carlo)


def coherence_crosscheck(n: int = 40, ps=(0, 5, 10, 20, 30, 40), draws: int = 1_000_000,
                         seed: int = 0) -> list[CrossCheckRow]:
    """Analytic two-class coherence against Monte Carlo for iid standard-normal statistics."""
    st = CoefficientStats.iid(n)
    counts, total = coherence_curve_mc(st, classes=2, draws=draws, seed=seed)
    rows = []
    for p in ps:
        mc = counts[p] / total
        rows.append(CrossCheckRow(p, estimate_coherence_analytic(st, p), float(mc),
                                  float(np.sqrt(mc * (1 - mc) / total))))
    return rows


# -- lookup-table shape ------------------------------------------------------------------


@dataclass
class LutCurve:
    model: AnytimeModel
    coherence: np.ndarray
    samples: int
    first_class_share: float
    accuracy: float


def lut_curve(recipe: ModelRecipe = ModelRecipe(), samples: int = 100_000, seed: int = 7) -> LutCurve:
    """Measured coherence of a trained model on fresh samples, for every ``p``."""
    model, _ = _cached_model(recipe)
    fresh = sample_like(model.meta["generator"], samples, seed=seed)
    labels = partial_labels(model, fresh.X)
    coh = np.mean(labels == labels[:, -1:], axis=0)
    return LutCurve(model, coh, samples, float(np.mean(labels[:, -1] == 0)),
                    float(np.mean(labels[:, -1] == fresh.y)))


@lru_cache(maxsize=8)
def _cached_model(recipe: ModelRecipe, cfg: TrainConfig = TrainConfig()) -> tuple[AnytimeModel, Dataset]:
    return build_model(recipe, cfg)


# -- SVM runtime experiments -------------------------------------------------------------


def quarter_budget_c0(cap: CapacitorState = CapacitorState(), features: int = 140,
                      fraction: float = 0.25) -> float:
    """Uniform feature cost that makes one usable budget ``fraction`` of a full item."""
    full = cap.usable_budget / fraction
    return (full - SVM_OVERHEAD_UJ - SVM_OUTPUT_UJ) / features


def one_budget_power(cap: CapacitorState = CapacitorState(), period_s: float = 60.0,
                     efficiency: float = 0.8, idle_uw: float = 1.0) -> float:
    """Constant harvest power (uW) that refills one usable budget per sampling period."""
    return cap.usable_budget / (efficiency * period_s) + idle_uw / efficiency


@dataclass
class SvmSetup:
    model: AnytimeModel
    items: Dataset
    workload: SvmWorkload
    config: RuntimeConfig

    def full_item_cost(self) -> float:
        return self.workload.overhead_uj + float(self.workload.unit_costs.sum()) + self.workload.output_uj


def svm_setup(items: int = 1000, c0: float | None = None, period_s: float = 60.0,
              item_seed: int = 1) -> SvmSetup:
    """Separable 6-class model with uniform feature costs and ``items`` fresh inputs."""
    c0 = quarter_budget_c0() if c0 is None else c0
    model, _ = _cached_model(ModelRecipe(cost_c0=c0))
    data = sample_like(model.meta["generator"], items, seed=item_seed)
    workload = SvmWorkload(model, data.X, data.y, SVM_OVERHEAD_UJ, SVM_OUTPUT_UJ)
    return SvmSetup(model, data, workload, RuntimeConfig(period_s=period_s))


def run_matrix(trace: EnergyTrace, workload, strategies, config: RuntimeConfig,
               seed: int = 0, with_reference: bool = True) -> dict[str, RunLog]:
    configs = [StrategyConfig.parse(s) for s in strategies]
    if with_reference:
        configs.insert(0, StrategyConfig("continuous"))
    by_label = {c.label: c for c in configs}
    return {label: run(trace, workload, c, config, seed) for label, c in by_label.items()}


CHECKPOINT_INTERVALS = (1, 2, 5, 10, 20, 30)


def throughput_runs(intervals=CHECKPOINT_INTERVALS, periods: int = 400) -> dict[str, RunLog]:
    """Greedy against Checkpoint when one power cycle buys a quarter of an item."""
    setup = svm_setup(items=periods)
    trace = synth_trace("constant", periods * setup.config.period_s, power=one_budget_power(),
                        name="constant-quarter")
    strategies = ["greedy"] + [f"checkpoint:{k}" for k in intervals]
    return run_matrix(trace, setup.workload, strategies, setup.config)


def throughput_experiment(intervals=CHECKPOINT_INTERVALS, periods: int = 400) -> SimReport:
    logs = throughput_runs(intervals, periods)
    return compute_metrics(logs, config={"experiment": "throughput", "trace": "constant-quarter",
                                         "feature_cost_uj": quarter_budget_c0()})


def latency_experiment(kind: str, periods: int = 600, square_period: float = 600.0) -> dict[str, RunLog]:
    """Greedy, Smart and Checkpoint on a constant or a square-wave trace of the same mean power."""
    setup = svm_setup(items=periods)
    power = one_budget_power()
    duration = periods * setup.config.period_s
    if kind == "constant":
        trace = synth_trace("constant", duration, power=power)
    elif kind == "square-wave":
        trace = synth_trace("square-wave", duration, high=2 * power, low=0.0, period=square_period)
    else:
        raise ValueError(kind)
    return run_matrix(trace, setup.workload, ["greedy", "smart:0.8", "checkpoint:10"], setup.config)


def equivalence_experiment(items: int = 1000, period_s: float = 600.0) -> dict[str, RunLog]:
    """Checkpoint with a sampling period long enough to finish every item.

    The device is still charging when the first item arrives, so one extra
    item is offered to leave ``items`` comparable outputs.
    """
    setup = svm_setup(items=items + 1, period_s=period_s)
    trace = synth_trace("constant", (items + 1) * period_s, power=one_budget_power())
    return run_matrix(trace, setup.workload, ["checkpoint:10"], setup.config)


def smart_trace(periods: int = 3000, seed: int = 3) -> EnergyTrace:
    """Slowly drifting harvest that keeps the device on but varies the per-item budget."""
    return synth_trace("random-walk", periods * 60.0, mean=10.0, sigma=1.5, step=60.0,
                       min_power=2.0, max_power=18.0, seed=seed, name="random-walk-smart")


def smart_experiment(periods: int = 3000, floors=(0.6, 0.8)) -> dict[str, RunLog]:
    setup = svm_setup(items=periods)
    strategies = ["greedy"] + [f"smart:{a:g}" for a in floors]
    return run_matrix(smart_trace(periods), setup.workload, strategies, setup.config)


# -- corners ---------------------------------------------------------------------------


def perforation_equivalence(name: str, skip: float, seeds: int = 100) -> float:
    """Fraction of perforation seeds whose corners are equivalent to the full detector."""
    img = scene(name)
    ref = detect_corners(img)
    hits = sum(equivalence_check(ref, detect_corners(img, PerforationPlan(skip, seed=s)))
               for s in range(seeds))
    return hits / seeds


@dataclass
class CornerTraceResult:
    trace: str
    outputs: int
    equivalent: int
    mean_skip: float
    knob_matches_choose_skip: bool
    log: RunLog


def corner_trace_runs(items: int = 400, presets=tuple(PRESETS), costs: CornerCosts = CornerCosts(),
                      seed: int = 0) -> list[CornerTraceResult]:
    """Greedy corner detection on each preset trace; equivalence of every emitted output."""
    workload = CornerWorkload.from_scenes(items, seed=seed, costs=costs)
    refs = {n: detect_corners(scene(n)) for n in SCENES}
    config = RuntimeConfig(period_s=30.0)
    out = []
    for name in presets:
        trace = preset_trace(name, items * config.period_s, seed=seed)
        lg = run(trace, workload, StrategyConfig("greedy"), config, seed)
        budgets = {e["item"]: e["budget"] for e in lg.of("item_started")}
        eq = 0
        skips = []
        consistent = True
        for o in lg.outputs():
            img = workload.images[o["item"]]
            eq += equivalence_check(refs[workload.names[o["item"]]], CornerSet.from_rows(o["result"]))
            plan = choose_skip(budgets[o["item"]], img, costs)
            consistent &= plan is not None and plan.executed_count(img.size) == o["knob"]
            skips.append(1 - o["knob"] / img.size)
        out.append(CornerTraceResult(name, len(skips), eq, float(np.mean(skips)) if skips else 0.0,
                                     consistent, lg))
    return out


# -- everything the acceptance suite reports on -------------------------------------------


@dataclass
class AcceptanceRuns:
    throughput: dict[str, RunLog]
    latency: dict[str, dict[str, RunLog]]
    smart: dict[str, RunLog]
    equivalence: dict[str, RunLog]
    corners: list[CornerTraceResult]

    def all_logs(self) -> list[RunLog]:
        logs = [*self.throughput.values(), *self.smart.values(), *self.equivalence.values()]
        for group in self.latency.values():
            logs += group.values()
        return logs + [r.log for r in self.corners]

    def reports(self) -> dict[str, str]:
        """CSV text of every report, keyed by file name."""
        out = {}
        rep = compute_metrics(self.throughput, config={"experiment": "throughput"})
        out["throughput.csv"] = rep.to_csv()
        for kind, logs in self.latency.items():
            rep = compute_metrics(logs, config={"experiment": "latency", "trace": kind})
            out[f"latency-{kind}.csv"] = rep.to_csv()
            out[f"latency-{kind}.latency.csv"] = rep.latency_csv()
        out["smart.csv"] = compute_metrics(self.smart, config={"experiment": "smart"}).to_csv()
        out["equivalence.csv"] = compute_metrics(self.equivalence,
                                                 config={"experiment": "equivalence"}).to_csv()
        for r in self.corners:
            rep = compute_metrics([r.log], config={"experiment": "corners", "trace": r.trace,
                                                   "equivalent": r.equivalent})
            out[f"corners-{r.trace}.csv"] = rep.to_csv()
        return out


def acceptance_runs() -> AcceptanceRuns:
    return AcceptanceRuns(
        throughput=throughput_runs(),
        latency={k: latency_experiment(k) for k in ("constant", "square-wave")},
        smart=smart_experiment(),
        equivalence=equivalence_experiment(),
        corners=corner_trace_runs(),
    )
