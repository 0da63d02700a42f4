"""Harvester, capacitor buffer and power-cycle segmentation.

Units used throughout the package: time in seconds, power in microwatts,
energy in microjoules (1 uW * 1 s = 1 uJ).

Traces are zero-order held: sample ``k`` supplies ``power[k]`` on
``[times[k], times[k+1])`` and the trace ends at ``times[-1]``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

TRACE_HEADER = ("t_s", "power_uw")
VOLTAGE_HEADER = ("t_s", "voltage_v")

DEFAULT_EFFICIENCY = 0.8
DEFAULT_IDLE_UW = 1.0
DEFAULT_DT = 1e-3


class TraceError(ValueError):
    """Raised for unreadable or invalid energy traces."""


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    times: np.ndarray
    power: np.ndarray
    name: str = "trace"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        power = np.asarray(self.power, dtype=float)
        if times.ndim != 1 or times.shape != power.shape:
            raise TraceError("times and power must be 1-D arrays of equal length")
        if len(times) < 2:
            raise TraceError(f"trace needs at least 2 samples, got {len(times)}")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(power)):
            raise TraceError("trace contains non-finite values")
        bad = np.flatnonzero(np.diff(times) <= 0)
        if len(bad):
            raise TraceError(
                f"timestamps must be strictly increasing (sample {bad[0] + 1}: "
                f"{times[bad[0] + 1]} after {times[bad[0]]})"
            )
        if np.any(power < 0):
            raise TraceError("harvested power must be non-negative")
        times.flags.writeable = False
        power.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "power", power)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    @property
    def duration(self) -> float:
        return self.end - self.start

    def harvested(self) -> float:
        """Total energy the trace supplies before conversion losses (uJ)."""
        return float(np.sum(self.power[:-1] * np.diff(self.times)))

    def power_at(self, t: float) -> float:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0 or t >= self.end:
            return 0.0
        return float(self.power[i])


def voltage_to_power(volts: np.ndarray, r_load: float) -> np.ndarray:
    """Convert a voltage reading into delivered power via ``P = V**2 / R``.

    ``r_load`` is in ohms; the result is in microwatts.
    """
    if r_load <= 0:
        raise ValueError("r_load must be positive")
    return np.asarray(volts, dtype=float) ** 2 / r_load * 1e6


def load_trace(
    path: str | Path,
    format: Literal["power", "voltage"] = "power",
    *,
    name: str | None = None,
    r_load: float | None = None,
) -> EnergyTrace:
    """Read a trace CSV (header ``t_s,power_uw`` or ``t_s,voltage_v``)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from exc
    if format == "voltage" and r_load is None:
        raise TraceError("voltage traces need r_load to convert to power")

    times: list[float] = []
    values: list[float] = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if lineno == 1 and tuple(c.strip() for c in row) in (TRACE_HEADER, VOLTAGE_HEADER):
            continue
        if len(row) != 2:
            raise TraceError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        try:
            times.append(float(row[0]))
            values.append(float(row[1]))
        except ValueError:
            raise TraceError(f"{path}:{lineno}: cannot parse {row!r} as numbers") from None
    if not times:
        raise TraceError(f"{path}: empty trace")

    power = np.asarray(values)
    if format == "voltage":
        power = voltage_to_power(power, r_load)
    return EnergyTrace(np.asarray(times), power, name=name or path.stem)


def save_trace(trace: EnergyTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for t, p in zip(trace.times, trace.power):
            writer.writerow([repr(float(t)), repr(float(p))])


def synth_trace(
    kind: Literal["constant", "square-wave", "random-walk"],
    duration: float,
    *,
    seed: int = 0,
    name: str | None = None,
    power: float = 100.0,
    high: float = 200.0,
    low: float = 0.0,
    period: float = 2.0,
    step: float | None = None,
    mean: float = 100.0,
    sigma: float = 10.0,
    max_power: float | None = None,
    min_power: float = 0.0,
) -> EnergyTrace:
    """Generate a synthetic power trace.

    ``constant`` holds ``power``; ``square-wave`` alternates ``high`` and
    ``low`` every half ``period``; ``random-walk`` starts at ``mean`` and
    takes Gaussian steps of ``sigma`` every ``step`` seconds, reflected into
    ``[min_power, max_power]``.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    if kind == "constant":
        if power < 0:
            raise ValueError("power must be non-negative")
        step = duration if step is None else step
        times = _grid(duration, step)
        values = np.full(len(times), float(power))
    elif kind == "square-wave":
        if high < 0 or low < 0:
            raise ValueError("high/low power must be non-negative")
        if period <= 0:
            raise ValueError("period must be positive")
        step = period / 2 if step is None else step
        times = _grid(duration, step)
        phase = np.floor(times / (period / 2) + 1e-9).astype(int) % 2
        values = np.where(phase == 0, float(high), float(low))
    elif kind == "random-walk":
        if mean < 0 or sigma < 0:
            raise ValueError("mean and sigma must be non-negative")
        step = 1.0 if step is None else step
        upper = 2 * mean if max_power is None else max_power
        lower = float(min_power)
        if not 0 <= lower <= mean <= upper or upper <= 0:
            raise ValueError("need 0 <= min_power <= mean <= max_power and max_power > 0")
        times = _grid(duration, step)
        steps = rng.normal(0.0, sigma, size=len(times))
        steps[0] = 0.0
        values = np.empty(len(times))
        level = float(mean)
        for i, s in enumerate(steps):
            level += s
            # reflect into [lower, upper]
            while level < lower or level > upper:
                level = 2 * lower - level if level < lower else 2 * upper - level
            values[i] = level
    else:
        raise ValueError(f"unknown trace kind {kind!r}")
    return EnergyTrace(times, values, name=name or kind)


def _grid(duration: float, step: float) -> np.ndarray:
    if step <= 0:
        raise ValueError("step must be positive")
    count = int(math.floor(duration / step + 1e-9))
    times = np.arange(count + 1) * step
    if times[-1] < duration - 1e-9:
        times = np.append(times, duration)
    return times


# Qualitative stand-ins for the five recorded traces: SOM is the richest and
# most stable source, RF the most variable with the least energy.
PRESETS: dict[str, dict] = {
    "SOM": dict(kind="random-walk", mean=160.0, sigma=4.0, step=5.0, max_power=220.0),
    "SOR": dict(kind="random-walk", mean=120.0, sigma=8.0, step=5.0, max_power=200.0),
    "SIM": dict(kind="random-walk", mean=70.0, sigma=10.0, step=5.0, max_power=140.0),
    "SIR": dict(kind="random-walk", mean=45.0, sigma=6.0, step=5.0, max_power=90.0),
    "RF": dict(kind="square-wave", high=300.0, low=0.0, period=270.0),
}


def preset_trace(name: str, duration: float, seed: int = 0) -> EnergyTrace:
    try:
        params = dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    kind = params.pop("kind")
    return synth_trace(kind, duration, seed=seed, name=name, **params)


# -- capacitor ---------------------------------------------------------------


@dataclass(frozen=True)
class CapacitorState:
    capacitance: float = 1470e-6
    voltage_on: float = 2.8
    voltage_off: float = 1.8
    voltage_max: float = 3.3
    current_energy: float = 0.0

    def __post_init__(self):
        if self.capacitance <= 0:
            raise ValueError("capacitance must be positive")
        if not (0 <= self.voltage_off < self.voltage_on <= self.voltage_max):
            raise ValueError("need 0 <= voltage_off < voltage_on <= voltage_max")
        if not (0 <= self.current_energy <= self.energy_max * (1 + 1e-12)):
            raise ValueError(
                f"current_energy {self.current_energy} outside [0, {self.energy_max}]"
            )

    def energy_at(self, volts: float) -> float:
        return 0.5 * self.capacitance * volts**2 * 1e6

    @property
    def energy_max(self) -> float:
        return self.energy_at(self.voltage_max)

    @property
    def energy_on(self) -> float:
        return self.energy_at(self.voltage_on)

    @property
    def energy_off(self) -> float:
        return self.energy_at(self.voltage_off)

    @property
    def usable_budget(self) -> float:
        """Energy between the turn-on and brown-out thresholds (uJ)."""
        return self.energy_on - self.energy_off

    @property
    def voltage(self) -> float:
        return math.sqrt(2 * self.current_energy * 1e-6 / self.capacitance)

    def with_energy(self, energy: float) -> "CapacitorState":
        return replace(self, current_energy=energy)


class Outcome(str, enum.Enum):
    OK = "ok"
    DIED = "died"


def step_charge(
    cap: CapacitorState, power: float, dt: float, efficiency: float = DEFAULT_EFFICIENCY
) -> CapacitorState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not 0 < efficiency <= 1:
        raise ValueError("efficiency must be in (0, 1]")
    energy = min(cap.energy_max, cap.current_energy + efficiency * power * dt)
    return replace(cap, current_energy=energy)


def consume(cap: CapacitorState, cost: float) -> tuple[CapacitorState, Outcome]:
    """Draw ``cost`` uJ; a draw that would cross the brown-out level kills the device."""
    if cost < 0:
        raise ValueError("cost must be non-negative")
    if cap.current_energy - cost >= cap.energy_off:
        return replace(cap, current_energy=cap.current_energy - cost), Outcome.OK
    return replace(cap, current_energy=min(cap.current_energy, cap.energy_off)), Outcome.DIED


# -- event-driven device -------------------------------------------------------


class Event(str, enum.Enum):
    WAKE = "wake"
    DEATH = "death"
    END = "end"


ENERGY_CATEGORIES = ("work", "checkpoint_write", "checkpoint_read", "output", "idle")


@dataclass
class EnergyLedger:
    initial: float
    delivered: float = 0.0
    clipped: float = 0.0
    final: float = 0.0
    consumed: dict[str, float] = field(
        default_factory=lambda: {k: 0.0 for k in ENERGY_CATEGORIES}
    )

    @property
    def total_consumed(self) -> float:
        return sum(self.consumed.values())

    def balance_error(self) -> float:
        """``consumed + final - initial - (delivered - clipped)``; zero when books close."""
        return self.total_consumed + self.final - self.initial - (self.delivered - self.clipped)

    def conserves(self, rel_tol: float = 1e-6) -> bool:
        lhs = self.total_consumed + self.final
        rhs = self.delivered + self.initial
        return lhs <= rhs + rel_tol * max(1.0, rhs)

    def as_dict(self) -> dict:
        return {
            "initial": self.initial,
            "delivered": self.delivered,
            "clipped": self.clipped,
            "final": self.final,
            "consumed": dict(self.consumed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyLedger":
        return cls(
            initial=d["initial"],
            delivered=d["delivered"],
            clipped=d["clipped"],
            final=d["final"],
            consumed=dict(d["consumed"]),
        )


class Device:
    """Capacitor-buffered device integrated exactly over a zero-order-hold trace.

    The device is either off (charging, no draw) or on (charging while drawing
    ``idle_uw``). Work is instantaneous and paid through :meth:`spend`.
    """

    SPEND_TOL = 1e-9

    def __init__(
        self,
        trace: EnergyTrace,
        cap: CapacitorState,
        efficiency: float = DEFAULT_EFFICIENCY,
        idle_uw: float = DEFAULT_IDLE_UW,
    ):
        if not 0 < efficiency <= 1:
            raise ValueError("efficiency must be in (0, 1]")
        if idle_uw < 0:
            raise ValueError("idle_uw must be non-negative")
        self.trace = trace
        self.cap = cap
        self.efficiency = efficiency
        self.idle_uw = idle_uw
        self.t = trace.start
        self.energy = cap.current_energy
        self.on = False
        self.ledger = EnergyLedger(initial=cap.current_energy, final=cap.current_energy)
        self._seg = 0
        self._e_on = cap.energy_on
        self._e_off = cap.energy_off
        self._e_max = cap.energy_max

    @property
    def budget(self) -> float:
        """Energy available above the brown-out level."""
        return self.energy - self._e_off

    def run_until(self, t_target: float) -> Event | None:
        """Integrate to ``t_target``, stopping early at a wake, death or trace end.

        Returns ``None`` when ``t_target`` is reached without an event.
        """
        times, power = self.trace.times, self.trace.power
        end = self.trace.end
        while True:
            if not self.on and self.energy >= self._e_on:
                self.on = True
                return Event.WAKE
            if self.t >= end:
                return Event.END
            if self.t >= t_target:
                return None
            while times[self._seg + 1] <= self.t:
                self._seg += 1
            seg_end = min(float(times[self._seg + 1]), t_target)
            dt = seg_end - self.t
            gain = self.efficiency * float(power[self._seg])
            draw = self.idle_uw if self.on else 0.0
            net = gain - draw

            t_event = math.inf
            if self.on and net < 0:
                t_event = max(0.0, (self.energy - self._e_off) / -net)
            elif not self.on and net > 0:
                t_event = (self._e_on - self.energy) / net
            if t_event <= dt:
                self._accrue(gain, draw, t_event)
                if self.on:
                    self.energy = self._e_off
                    self.on = False
                    self._sync()
                    return Event.DEATH
                self.energy = self._e_on
                self._sync()
                continue
            self._accrue(gain, draw, dt)
            self.t = seg_end
            self._sync()

    def _accrue(self, gain: float, draw: float, dt: float) -> None:
        delivered = gain * dt
        drawn = draw * dt
        new = self.energy + delivered - drawn
        if new > self._e_max:
            self.ledger.clipped += new - self._e_max
            new = self._e_max
        self.ledger.delivered += delivered
        self.ledger.consumed["idle"] += drawn
        self.energy = new
        self.t += dt

    def _sync(self) -> None:
        self.ledger.final = self.energy

    def spend(self, cost: float, category: str = "work") -> bool:
        """Pay ``cost`` uJ now. Returns False (and turns the device off) on brown-out."""
        if cost < 0:
            raise ValueError("cost must be non-negative")
        if not self.on:
            raise RuntimeError("cannot spend energy while the device is off")
        if self.energy - cost >= self._e_off - self.SPEND_TOL:
            self.energy -= cost
            self.ledger.consumed[category] += cost
            self._sync()
            return True
        spent = max(0.0, self.energy - self._e_off)
        self.ledger.consumed[category] += spent
        self.energy -= spent
        self.on = False
        self._sync()
        return False


# -- power cycles --------------------------------------------------------------


@dataclass(frozen=True)
class PowerCycle:
    index: int
    wake_time: float
    death_time: float | None
    budget: float


def segment_cycles(
    trace: EnergyTrace,
    cap: CapacitorState,
    load: float = DEFAULT_IDLE_UW,
    *,
    efficiency: float = DEFAULT_EFFICIENCY,
    method: Literal["event", "step"] = "event",
    dt: float = DEFAULT_DT,
) -> list[PowerCycle]:
    """Split a trace into power cycles for a device drawing a constant ``load`` (uW).

    ``method="event"`` integrates the piecewise-constant trace exactly;
    ``method="step"`` uses fixed ``dt`` steps of :func:`step_charge` and
    :func:`consume` and serves as a slow reference.
    """
    if method == "step":
        return _segment_fixed_step(trace, cap, load, efficiency, dt)
    if method != "event":
        raise ValueError(f"unknown method {method!r}")
    dev = Device(trace, cap, efficiency=efficiency, idle_uw=load)
    cycles: list[PowerCycle] = []
    wake = None
    while True:
        ev = dev.run_until(math.inf)
        if ev is Event.WAKE:
            wake = dev.t
        elif ev is Event.DEATH:
            cycles.append(PowerCycle(len(cycles), wake, dev.t, cap.usable_budget))
            wake = None
        else:
            break
    if wake is not None:
        cycles.append(PowerCycle(len(cycles), wake, None, cap.usable_budget))
    return cycles


def _segment_fixed_step(
    trace: EnergyTrace, cap: CapacitorState, load: float, efficiency: float, dt: float
) -> list[PowerCycle]:
    cycles: list[PowerCycle] = []
    state = cap
    on = False
    wake = None
    steps = int(math.floor(trace.duration / dt + 1e-9))
    for k in range(steps):
        t = trace.start + k * dt
        state = step_charge(state, trace.power_at(t), dt, efficiency)
        if not on:
            if state.current_energy >= state.energy_on:
                on, wake = True, t + dt
            continue
        state, outcome = consume(state, load * dt)
        if outcome is Outcome.DIED:
            cycles.append(PowerCycle(len(cycles), wake, t + dt, cap.usable_budget))
            on, wake = False, None
    if on:
        cycles.append(PowerCycle(len(cycles), wake, None, cap.usable_budget))
    return cycles


def charge_time(cap: CapacitorState, power: float, efficiency: float, target: float) -> float:
    """Closed-form time to charge from the current level to ``target`` uJ at constant power."""
    if power * efficiency <= 0:
        return math.inf
    return max(0.0, target - cap.current_energy) / (efficiency * power)
