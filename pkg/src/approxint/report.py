"""Metrics over run logs and the CSV report format."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .energy import ENERGY_CATEGORIES
from .runtime import RunLog, same_output

REPORT_FORMAT = "approxint-report/1"
LATENCY_FORMAT = "approxint-latency/1"


@dataclass
class StrategyMetrics:
    strategy: str
    items_offered: int
    outputs_emitted: int
    dropped: dict[str, int]
    accuracy: float | None
    coherence: float | None
    coherence_items: int
    throughput_norm: float | None
    mean_knob: float | None
    latency_hist: dict[int, int]
    energy: dict[str, float]
    harvested: float
    conserves: bool

    def rows(self) -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [
            ("items_offered", self.items_offered),
            ("outputs_emitted", self.outputs_emitted),
            ("accuracy", self.accuracy),
            ("coherence", self.coherence),
            ("coherence_items", self.coherence_items),
            ("throughput_norm", self.throughput_norm),
            ("mean_knob", self.mean_knob),
        ]
        out += [(f"dropped_{k}", v) for k, v in sorted(self.dropped.items())]
        out += [(f"energy_{k}_uj", self.energy[k]) for k in ENERGY_CATEGORIES]
        out += [("energy_total_uj", sum(self.energy.values())),
                ("energy_harvested_uj", self.harvested),
                ("energy_conserved", int(self.conserves))]
        return out


@dataclass
class SimReport:
    reference: str
    strategies: dict[str, StrategyMetrics]
    config: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, strategy: str) -> StrategyMetrics:
        return self.strategies[strategy]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {REPORT_FORMAT}\n")
        buf.write(f"# reference={self.reference}\n")
        for key in sorted(self.config):
            buf.write(f"# {key}={self.config[key]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "metric", "value"])
        for name, m in self.strategies.items():
            for metric, value in m.rows():
                w.writerow([name, metric, fmt(value)])
        return buf.getvalue()

    def latency_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {LATENCY_FORMAT}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "latency_cycles", "count"])
        for name, m in self.strategies.items():
            for cycles in sorted(m.latency_hist):
                w.writerow([name, cycles, m.latency_hist[cycles]])
        return buf.getvalue()

    def save(self, path: str | Path, latency_path: str | Path | None = None) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")
        if latency_path is not None:
            Path(latency_path).write_text(self.latency_csv(), encoding="utf-8")


def fmt(value) -> str:
    """Deterministic text for report cells; missing values are empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    v = float(value)
    if math.isnan(v):
        return ""
    return repr(v)


def read_report(path: str | Path) -> dict[str, dict[str, str]]:
    """Parse a report CSV into ``{strategy: {metric: value}}`` (values kept as text)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != f"# {REPORT_FORMAT}":
            raise ValueError(f"{path}: not a {REPORT_FORMAT} file")
        lines = [ln for ln in fh if not ln.startswith("#")]
    out: dict[str, dict[str, str]] = {}
    for row in csv.DictReader(lines):
        out.setdefault(row["strategy"], {})[row["metric"]] = row["value"]
    return out


def _schedule(lg: RunLog) -> tuple:
    return (lg.meta["workload"], lg.meta["items"], lg.meta.get("schedule"))


def compute_metrics(
    logs: Mapping[str, RunLog] | Sequence[RunLog],
    ground_truth: Mapping[int, object] | None = None,
    reference: str = "continuous",
    config: Mapping[str, object] | None = None,
) -> SimReport:
    """Per-strategy metrics, coherence and throughput taken against ``reference``.

    All logs must share the workload and item schedule. Coherence only counts
    items that have an output in both the strategy's log and the reference
    log. When ``ground_truth`` is omitted, labels carried in the outputs
    (``truth``) are used.
    """
    if not isinstance(logs, Mapping):
        logs = {lg.strategy: lg for lg in logs}
    if not logs:
        raise ValueError("no run logs given")
    schedules = {_schedule(lg) for lg in logs.values()}
    if len(schedules) > 1:
        raise ValueError(f"run logs disagree on the item schedule: {sorted(map(str, schedules))}")
    kind = next(iter(logs.values())).workload
    ref_log = logs.get(reference)
    ref_out = {o["item"]: o["result"] for o in ref_log.outputs()} if ref_log else None
    ref_count = len(ref_out) if ref_out is not None else None

    result: dict[str, StrategyMetrics] = {}
    for name, lg in logs.items():
        outs = lg.outputs()
        seen = Counter(o["item"] for o in outs)
        if seen and max(seen.values()) > 1:
            raise ValueError(f"{name}: an item was emitted more than once")
        truth = []
        for o in outs:
            label = ground_truth.get(o["item"]) if ground_truth is not None else o.get("truth")
            if label is not None:
                truth.append(o["result"] == label)
        coherence = None
        shared = 0
        if ref_out is not None:
            matches = [same_output(kind, ref_out[o["item"]], o["result"])
                       for o in outs if o["item"] in ref_out]
            shared = len(matches)
            coherence = sum(matches) / shared if shared else None
        latency = Counter(o["cycle_emitted"] - o["cycle_started"] for o in outs)
        ledger = lg.energy
        energy = {k: (ledger.consumed.get(k, 0.0) if ledger else 0.0) for k in ENERGY_CATEGORIES}
        result[name] = StrategyMetrics(
            strategy=name,
            items_offered=int(lg.meta["items"]),
            outputs_emitted=len(outs),
            dropped=dict(sorted(Counter(e["reason"] for e in lg.of("item_dropped")).items())),
            accuracy=sum(truth) / len(truth) if truth else None,
            coherence=coherence,
            coherence_items=shared,
            throughput_norm=len(outs) / ref_count if ref_count else None,
            mean_knob=sum(o["knob"] for o in outs) / len(outs) if outs else None,
            latency_hist=dict(sorted(latency.items())),
            energy=energy,
            harvested=ledger.delivered if ledger else 0.0,
            conserves=ledger.conserves() if ledger else True,
        )
    cfg = {str(k): str(v) for k, v in (config or {}).items()}
    return SimReport(reference, result, cfg)
