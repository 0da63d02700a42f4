"""INI configuration: one section per component, every default overridable.

Example::

    [capacitor]
    capacitance = 0.00147

    [checkpoint]
    interval = 20

Unknown sections or keys are rejected so typos do not silently fall back
to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .corners import CornerCosts, DetectorParams
from .energy import DEFAULT_EFFICIENCY, DEFAULT_IDLE_UW, CapacitorState
from .runtime import RuntimeConfig, StrategyConfig
from .train import ModelRecipe, TrainConfig


@dataclass(frozen=True)
class DeviceSection:
    efficiency: float = DEFAULT_EFFICIENCY
    idle_uw: float = DEFAULT_IDLE_UW
    svm_period_s: float = 60.0
    corner_period_s: float = 30.0


@dataclass(frozen=True)
class CheckpointSection:
    interval: int = 10
    bytes: int = 2048
    write_uj_per_byte: float = 0.01
    read_uj_per_byte: float = 0.005


@dataclass(frozen=True)
class SvmCosts:
    overhead_uj: float = 200.0
    output_uj: float = 50.0


SECTIONS = {
    "capacitor": CapacitorState,
    "device": DeviceSection,
    "checkpoint": CheckpointSection,
    "svm": SvmCosts,
    "model": ModelRecipe,
    "train": TrainConfig,
    "corners": CornerCosts,
    "detector": DetectorParams,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    capacitor: CapacitorState = CapacitorState()
    device: DeviceSection = DeviceSection()
    checkpoint: CheckpointSection = CheckpointSection()
    svm: SvmCosts = SvmCosts()
    model: ModelRecipe = ModelRecipe()
    train: TrainConfig = TrainConfig()
    corners: CornerCosts = CornerCosts()
    detector: DetectorParams = DetectorParams()
    source: str = field(default="defaults", compare=False)

    def runtime(self, workload: str) -> RuntimeConfig:
        period = self.device.svm_period_s if workload == "svm" else self.device.corner_period_s
        return RuntimeConfig(self.capacitor, self.device.efficiency, self.device.idle_uw, period)

    def strategy(self, text: str) -> StrategyConfig:
        ck = self.checkpoint
        return StrategyConfig.parse(text, interval=ck.interval, checkpoint_bytes=ck.bytes,
                                    write_uj_per_byte=ck.write_uj_per_byte,
                                    read_uj_per_byte=ck.read_uj_per_byte)

    def effective(self) -> dict[str, str]:
        """Flat ``section.key -> value`` view, echoed into reports."""
        out = {}
        for name in SECTIONS:
            for f in fields(getattr(self, name)):
                out[f"{name}.{f.name}"] = repr(getattr(getattr(self, name), f.name))
        return out


def _convert(text: str, default, where: str):
    try:
        if isinstance(default, bool):
            lowered = text.strip().lower()
            if lowered not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return lowered in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text.strip()
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"{where}: expected {kind}, got {text!r}") from None


def load_settings(path: str | Path | None = None, text: str | None = None) -> Settings:
    """Read an INI file (or string) on top of the built-in defaults."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    source = "defaults"
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        parser.read(p, encoding="utf-8")
        source = str(p)
    elif text is not None:
        parser.read_string(text)
        source = "<string>"
    settings = Settings(source=source)
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]; valid: {', '.join(SECTIONS)}")
        current = getattr(settings, section)
        known = {f.name: f for f in fields(current)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]; valid: {', '.join(known)}")
            updates[key] = _convert(raw, getattr(current, key), f"[{section}] {key}")
        try:
            settings = replace(settings, **{section: replace(current, **updates)})
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return settings


def dump_settings(settings: Settings) -> str:
    """INI text of ``settings``; round-trips through :func:`load_settings`."""
    parser = configparser.ConfigParser(interpolation=None)
    for name in SECTIONS:
        obj = getattr(settings, name)
        parser[name] = {f.name: str(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
