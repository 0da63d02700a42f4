"""Trace-driven execution of workloads under intermittent-power strategies.

A run replays an energy trace through a capacitor-buffered :class:`Device`
while work items arrive every ``period_s`` seconds:

* ``continuous`` has unlimited energy and always runs at full knob.
* ``greedy`` starts an item when overhead plus output fit the remaining
  energy, then advances the knob while the next unit still leaves enough for
  the output, and emits before the energy runs out.
* ``smart:A`` processes an item only if the energy covers the first ``p'``
  units, ``p'`` being the smallest count whose lookup-table accuracy reaches
  ``A``; otherwise it drops the item. Accepted items continue greedily.
* ``checkpoint[:interval]`` always computes the exact result, persisting
  progress every ``interval`` units and restoring after each power failure.
  Items arriving while one is in progress are dropped as ``busy``.

Computation is instantaneous relative to charging, so work only moves
energy, never time.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .anytime import AnytimeModel, classify, run_partial
from .corners import (
    CornerCosts,
    CornerSet,
    DetectorParams,
    GrayImage,
    PerforationPlan,
    detect_corners,
    equivalence_check,
    scene,
)
from .energy import (
    DEFAULT_EFFICIENCY,
    DEFAULT_IDLE_UW,
    CapacitorState,
    Device,
    EnergyLedger,
    EnergyTrace,
    Event,
)

log = logging.getLogger(__name__)

RUNLOG_FORMAT = "approxint-runlog/1"
STRATEGIES = ("continuous", "greedy", "smart", "checkpoint")


class LivelockError(RuntimeError):
    """A checkpoint segment cannot fit in one full power cycle."""


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    accuracy_floor: float | None = None
    interval: int = 10
    checkpoint_bytes: int = 2048
    write_uj_per_byte: float = 0.01
    read_uj_per_byte: float = 0.005

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        if self.kind == "smart":
            if self.accuracy_floor is None or not 0 < self.accuracy_floor <= 1:
                raise ValueError("smart needs an accuracy floor in (0, 1]")
        if self.interval < 1 or self.checkpoint_bytes <= 0:
            raise ValueError("checkpoint interval and size must be positive")
        if self.write_uj_per_byte <= 0 or self.read_uj_per_byte <= 0:
            raise ValueError("NVM costs must be positive")

    @classmethod
    def parse(cls, text: str, **defaults) -> "StrategyConfig":
        """Parse ``greedy``, ``continuous``, ``smart:0.8`` or ``checkpoint:20``."""
        kind, _, arg = text.strip().lower().partition(":")
        if kind == "smart":
            if not arg:
                raise ValueError("smart needs a floor, e.g. smart:0.8")
            return cls("smart", accuracy_floor=float(arg), **defaults)
        if kind == "checkpoint" and arg:
            defaults = {**defaults, "interval": int(arg)}
        elif arg:
            raise ValueError(f"strategy {kind!r} takes no argument")
        return cls(kind, **defaults)

    @property
    def label(self) -> str:
        if self.kind == "smart":
            return f"smart:{self.accuracy_floor:g}"
        if self.kind == "checkpoint":
            return f"checkpoint:{self.interval}"
        return self.kind

    @property
    def write_cost(self) -> float:
        return self.checkpoint_bytes * self.write_uj_per_byte

    @property
    def read_cost(self) -> float:
        return self.checkpoint_bytes * self.read_uj_per_byte


@dataclass(frozen=True)
class RuntimeConfig:
    capacitor: CapacitorState = CapacitorState()
    efficiency: float = DEFAULT_EFFICIENCY
    idle_uw: float = DEFAULT_IDLE_UW
    period_s: float = 60.0


# -- workloads -------------------------------------------------------------------


class Workload(Protocol):
    kind: str
    overhead_uj: float
    output_uj: float

    @property
    def unit_costs(self) -> np.ndarray: ...

    def num_items(self) -> int: ...

    def evaluate(self, item: int, units: int, seed: int) -> Any: ...

    def encode(self, result: Any) -> Any: ...

    def truth(self, item: int) -> Any: ...


class SvmWorkload:
    """Anytime classification of feature vectors; one unit is one feature."""

    kind = "svm"

    def __init__(self, model: AnytimeModel, X: np.ndarray, y: np.ndarray | None = None,
                 overhead_uj: float = 200.0, output_uj: float = 50.0):
        self.model = model
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.X.shape[1] != model.num_features:
            raise ValueError("items do not match the model's feature count")
        self.y = None if y is None else np.asarray(y)
        self.overhead_uj = overhead_uj
        self.output_uj = output_uj
        self._costs = model.scheduled_costs

    @property
    def unit_costs(self) -> np.ndarray:
        return self._costs

    @property
    def n_units(self) -> int:
        return self.model.num_features

    def num_items(self) -> int:
        return len(self.X)

    def min_units_for(self, accuracy: float) -> int | None:
        return self.model.min_features_for(accuracy)

    def evaluate(self, item: int, units: int, seed: int = 0) -> int:
        return classify(run_partial(self.model, self.X[item], units)).label

    def encode(self, result: int) -> int:
        return int(result)

    def truth(self, item: int) -> int | None:
        return None if self.y is None else int(self.y[item])


class CornerWorkload:
    """Perforated corner detection; one unit is one pixel iteration."""

    kind = "corners"

    def __init__(self, images: list[GrayImage], names: list[str] | None = None,
                 costs: CornerCosts = CornerCosts(), params: DetectorParams = DetectorParams()):
        if not images:
            raise ValueError("need at least one image")
        sizes = {img.size for img in images}
        if len(sizes) != 1:
            raise ValueError("all images must have the same pixel count")
        self.images = images
        self.names = names or [f"img{i}" for i in range(len(images))]
        self.costs = costs
        self.params = params
        self.overhead_uj = costs.overhead_uj
        self.output_uj = costs.output_uj
        self._costs = np.full(images[0].size, costs.iteration_uj)

    @classmethod
    def from_scenes(cls, count: int, seed: int = 0, scenes=("rectangle", "cross", "complex"),
                    **kwargs) -> "CornerWorkload":
        """``count`` items, each a randomly picked procedural scene."""
        rng = np.random.default_rng(seed)
        picks = [scenes[i] for i in rng.integers(0, len(scenes), size=count)]
        cache = {name: scene(name) for name in scenes}
        return cls([cache[p] for p in picks], picks, **kwargs)

    @property
    def unit_costs(self) -> np.ndarray:
        return self._costs

    @property
    def n_units(self) -> int:
        return len(self._costs)

    def num_items(self) -> int:
        return len(self.images)

    def plan(self, item: int, units: int, seed: int) -> PerforationPlan:
        total = self.n_units
        return PerforationPlan((total - units) / total, seed=seed * 1_000_003 + item)

    def evaluate(self, item: int, units: int, seed: int = 0) -> CornerSet:
        return detect_corners(self.images[item], self.plan(item, units, seed), self.params)

    def encode(self, result: CornerSet) -> list:
        return result.to_rows()

    def truth(self, item: int) -> None:
        return None


def same_output(kind: str, a: Any, b: Any) -> bool:
    """Compare two encoded results of the same item."""
    if kind == "svm":
        return a == b
    if kind == "corners":
        return equivalence_check(CornerSet.from_rows(b), CornerSet.from_rows(a))
    raise ValueError(f"unknown workload kind {kind!r}")


# -- run log ---------------------------------------------------------------------


@dataclass
class RunLog:
    meta: dict
    events: list[dict] = field(default_factory=list)
    energy: EnergyLedger | None = None

    @property
    def strategy(self) -> str:
        return self.meta["strategy"]

    @property
    def workload(self) -> str:
        return self.meta["workload"]

    def outputs(self) -> list[dict]:
        return [e for e in self.events if e["event"] == "output"]

    def of(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["event"] == kind]

    def to_lines(self) -> list[str]:
        lines = [json.dumps({"event": "run", "format": RUNLOG_FORMAT, **self.meta}, sort_keys=True)]
        lines += [json.dumps(e, sort_keys=True) for e in self.events]
        if self.energy is not None:
            lines.append(json.dumps({"event": "energy", **self.energy.as_dict()}, sort_keys=True))
        return lines

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunLog":
        meta = None
        events: list[dict] = []
        energy = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: bad record ({exc})") from None
                kind = rec.get("event")
                if kind == "run":
                    if rec.pop("format", None) != RUNLOG_FORMAT:
                        raise ValueError(f"{path}: unsupported run log format")
                    rec.pop("event")
                    meta = rec
                elif kind == "energy":
                    rec.pop("event")
                    energy = EnergyLedger.from_dict(rec)
                else:
                    events.append(rec)
        if meta is None:
            raise ValueError(f"{path}: missing run header")
        return cls(meta, events, energy)


# -- strategy primitives ------------------------------------------------------------


def greedy_step(remaining: float, next_unit_cost: float | None, output_cost: float) -> str:
    """``advance`` while the next unit leaves room for the output, else ``emit``.

    ``next_unit_cost`` is None once the knob is at its maximum.
    """
    if next_unit_cost is not None and remaining - next_unit_cost >= output_cost - Device.SPEND_TOL:
        return "advance"
    return "emit"


def greedy_units(remaining: float, unit_costs: np.ndarray, output_cost: float) -> int:
    """Number of units :func:`greedy_step` would execute, in closed form."""
    prefix = np.cumsum(unit_costs)
    return int(np.searchsorted(prefix, remaining - output_cost + Device.SPEND_TOL, side="right"))


@dataclass(frozen=True)
class GateDecision:
    proceed: bool
    min_units: int | None


def smart_gate(budget: float, lut: np.ndarray, floor: float, unit_costs: np.ndarray,
               overhead: float, output: float) -> GateDecision:
    """Proceed only if ``budget`` covers the units needed to reach ``floor`` on the LUT."""
    hits = np.flatnonzero(np.asarray(lut) >= floor)
    if not len(hits):
        return GateDecision(False, None)
    p = int(hits[0])
    need = overhead + float(np.sum(unit_costs[:p])) + output
    return GateDecision(budget >= need - Device.SPEND_TOL, p)


@dataclass
class CheckpointState:
    item: int
    n_units: int
    interval: int
    pos: int = 0
    committed: int = -1
    needs_restore: bool = False
    started_cycle: int = 0


def _next_checkpoint_action(st: CheckpointState, unit_costs: np.ndarray,
                            strategy: StrategyConfig, output_cost: float) -> tuple[str, float]:
    if st.needs_restore:
        return "restore", strategy.read_cost
    if st.committed < 0 or (st.pos < st.n_units and st.pos - st.committed >= st.interval):
        return "write", strategy.write_cost
    if st.pos < st.n_units:
        return "work", float(unit_costs[st.pos])
    return "emit", output_cost


def checkpoint_step(st: CheckpointState, remaining: float, unit_costs: np.ndarray,
                    strategy: StrategyConfig, output_cost: float) -> tuple[str, float]:
    """Next action for a checkpointed item and its cost.

    Actions: ``restore`` after a power failure, ``write`` to persist the input
    and then every ``interval`` units, ``work`` for one unit, ``emit`` once
    all units are done. ``die`` means the next action does not fit.
    """
    action, cost = _next_checkpoint_action(st, unit_costs, strategy, output_cost)
    if cost > remaining + Device.SPEND_TOL:
        return "die", cost
    return action, cost


def check_livelock(unit_costs: np.ndarray, strategy: StrategyConfig, budget: float,
                   overhead: float, output: float) -> None:
    """Raise if some checkpoint segment needs more than one full power cycle."""
    n = len(unit_costs)
    worst = overhead + strategy.write_cost
    for start in range(0, n, strategy.interval):
        seg = float(np.sum(unit_costs[start:start + strategy.interval]))
        tail = output if start + strategy.interval >= n else strategy.write_cost
        worst = max(worst, strategy.read_cost + seg + tail)
    if worst > budget:
        raise LivelockError(
            f"checkpoint segment needs {worst:.1f} uJ but a power cycle provides "
            f"{budget:.1f} uJ; shorten the interval"
        )


# -- engine ------------------------------------------------------------------------


class _Run:
    def __init__(self, trace, workload, strategy, config, seed):
        self.trace = trace
        self.w = workload
        self.s = strategy
        self.cfg = config
        self.seed = seed
        self.events: list[dict] = []
        self.cycle = -1
        self.dev = Device(trace, config.capacitor, config.efficiency, config.idle_uw)
        self.costs = np.asarray(workload.unit_costs, dtype=float)
        self.ck: CheckpointState | None = None
        self.cycle_progress = True
        self.stalled = 0

    def emit(self, event: str, **fields) -> None:
        self.events.append({"event": event, "t": self.dev.t, **fields})

    def output(self, item: int, units: int, started: int) -> None:
        result = self.w.evaluate(item, units, self.seed)
        rec = dict(item=item, cycle_started=started, cycle_emitted=self.cycle,
                   knob=units, result=self.w.encode(result))
        truth = self.w.truth(item)
        if truth is not None:
            rec["truth"] = truth
        self.emit("output", **rec)

    def advance_to(self, t: float) -> bool:
        """Simulate up to ``t``; False once the trace is exhausted."""
        while True:
            ev = self.dev.run_until(t)
            if ev is None:
                return True
            if ev is Event.END:
                return False
            if ev is Event.WAKE:
                self.cycle += 1
                self.emit("wake", cycle=self.cycle, budget=self.dev.budget)
                if self.ck is not None:
                    self.resume()
            else:
                self.emit("death", cycle=self.cycle)

    # greedy and smart
    def start_approximate(self, item: int) -> None:
        budget = self.dev.budget
        w = self.w
        if budget < w.overhead_uj + w.output_uj:
            self.emit("item_dropped", item=item, reason="insufficient_energy")
            return
        floor_units = 0
        if self.s.kind == "smart":
            gate = smart_gate(budget, w.model.accuracy_lut, self.s.accuracy_floor, self.costs,
                              w.overhead_uj, w.output_uj)
            if not gate.proceed:
                reason = "unreachable_floor" if gate.min_units is None else "below_floor"
                self.emit("item_dropped", item=item, reason=reason)
                return
            floor_units = gate.min_units
        self.emit("item_started", item=item, cycle=self.cycle, budget=budget)
        self.dev.spend(w.overhead_uj, "work")
        units = greedy_units(self.dev.budget, self.costs, w.output_uj)
        units = max(units, floor_units)
        ok = self.dev.spend(float(np.sum(self.costs[:units])), "work")
        ok = ok and self.dev.spend(w.output_uj, "output")
        if not ok:
            raise AssertionError("approximate strategy ran out of energy before its output")
        self.output(item, units, self.cycle)

    # checkpoint
    def start_checkpoint(self, item: int) -> None:
        w = self.w
        if self.dev.budget < w.overhead_uj + self.s.write_cost:
            self.emit("item_dropped", item=item, reason="insufficient_energy")
            return
        self.emit("item_started", item=item, cycle=self.cycle, budget=self.dev.budget)
        self.dev.spend(w.overhead_uj, "work")
        self.ck = CheckpointState(item, len(self.costs), self.s.interval, started_cycle=self.cycle)
        self.execute()

    def resume(self) -> None:
        if not self.cycle_progress:
            self.stalled += 1
            if self.stalled > 3:
                raise LivelockError(f"item {self.ck.item} made no progress in {self.stalled} cycles")
        else:
            self.stalled = 0
        self.execute()

    def execute(self) -> None:
        st = self.ck
        self.cycle_progress = False
        work_from = None

        def flush():
            nonlocal work_from
            if work_from is not None and st.pos > work_from:
                self.emit("work", item=st.item, unit_start=work_from, unit_end=st.pos)
            work_from = None

        while True:
            action, cost = _next_checkpoint_action(st, self.costs, self.s, self.w.output_uj)
            if cost > self.dev.budget + Device.SPEND_TOL:
                # brown-out part way through the action: its energy is lost
                flush()
                self.dev.spend(cost, _CATEGORY[action])
                st.needs_restore = True
                self.emit("death", cycle=self.cycle)
                return
            if action == "work":
                if work_from is None:
                    work_from = st.pos
                self.dev.spend(cost, "work")
                st.pos += 1
                continue
            flush()
            self.dev.spend(cost, _CATEGORY[action])
            if action == "restore":
                st.pos = st.committed
                st.needs_restore = False
                self.emit("checkpoint_restored", item=st.item, bytes=self.s.checkpoint_bytes,
                          cost=cost, unit=st.pos)
            elif action == "write":
                st.committed = st.pos
                self.cycle_progress = True
                self.emit("checkpoint_written", item=st.item, bytes=self.s.checkpoint_bytes,
                          cost=cost, unit=st.pos)
            else:
                self.output(st.item, st.n_units, st.started_cycle)
                self.ck = None
                return


_CATEGORY = {"restore": "checkpoint_read", "write": "checkpoint_write", "work": "work",
             "emit": "output"}


def schedule_digest(arrivals: np.ndarray) -> str:
    """Short fingerprint of an arrival schedule, used to refuse mixing unrelated logs."""
    text = ",".join(repr(float(t)) for t in arrivals)
    return hashlib.sha256(text.encode("ascii")).hexdigest()[:16]


def arrival_times(trace: EnergyTrace, period: float, max_items: int) -> np.ndarray:
    count = int(math.ceil(trace.duration / period - 1e-12))
    count = max(0, min(count, max_items))
    return trace.start + period * np.arange(count)


def run(
    trace: EnergyTrace,
    workload: Workload,
    strategy: StrategyConfig,
    config: RuntimeConfig = RuntimeConfig(),
    seed: int = 0,
) -> RunLog:
    """Replay ``trace`` and return the complete event log of one strategy."""
    arrivals = arrival_times(trace, config.period_s, workload.num_items())
    meta = dict(strategy=strategy.label, workload=workload.kind, trace=trace.name, seed=seed,
                items=len(arrivals), period_s=config.period_s, schedule=schedule_digest(arrivals),
                strategy_config=asdict(strategy))
    if strategy.kind == "continuous":
        return _run_continuous(workload, arrivals, meta, seed)

    unit_costs = np.asarray(workload.unit_costs, dtype=float)
    if strategy.kind == "smart":
        if getattr(workload, "min_units_for", None) is None:
            raise ValueError(f"smart needs an accuracy lookup table; {workload.kind} has none")
        if workload.min_units_for(strategy.accuracy_floor) is None:
            log.warning("accuracy floor %.3f is above the lookup table maximum; "
                        "every item will be dropped", strategy.accuracy_floor)
    if strategy.kind == "checkpoint":
        check_livelock(unit_costs, strategy, config.capacitor.usable_budget,
                       workload.overhead_uj, workload.output_uj)

    r = _Run(trace, workload, strategy, config, seed)
    for item, t in enumerate(arrivals):
        if not r.advance_to(float(t)):
            break
        r.events.append({"event": "arrival", "t": float(t), "item": item})
        if r.ck is not None:
            r.emit("item_dropped", item=item, reason="busy")
        elif not r.dev.on:
            r.emit("item_dropped", item=item, reason="off")
        elif strategy.kind == "checkpoint":
            r.start_checkpoint(item)
        else:
            r.start_approximate(item)
    r.advance_to(math.inf)
    if r.ck is not None:
        r.emit("item_dropped", item=r.ck.item, reason="unfinished")
    return RunLog(meta, r.events, r.dev.ledger)


def _run_continuous(workload: Workload, arrivals: np.ndarray, meta: dict, seed: int) -> RunLog:
    events = []
    ledger = EnergyLedger(initial=0.0)
    full = len(workload.unit_costs)
    for item, t in enumerate(arrivals):
        t = float(t)
        events.append({"event": "arrival", "t": t, "item": item})
        events.append({"event": "item_started", "t": t, "item": item, "cycle": 0})
        rec = dict(event="output", t=t, item=item, cycle_started=0, cycle_emitted=0, knob=full,
                   result=workload.encode(workload.evaluate(item, full, seed)))
        truth = workload.truth(item)
        if truth is not None:
            rec["truth"] = truth
        events.append(rec)
        ledger.consumed["work"] += workload.overhead_uj + float(np.sum(workload.unit_costs))
        ledger.consumed["output"] += workload.output_uj
    ledger.delivered = ledger.total_consumed
    return RunLog({**meta, "unbounded_energy": True}, events, ledger)
