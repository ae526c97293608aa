"""Latency, peak tensor memory, and energy/carbon accounting.

Timing uses the monotonic wall clock. Memory is tracked by an instrumented
allocator: every tensor payload registers its byte size on creation and
deregisters when the tensor is garbage collected, so the tracker's tally is
a VRAM proxy counting tensor payload bytes only (kernel scratch buffers are
not tensors and do not count). Timed and tracked sections are serialized by
module-level locks; results are only meaningful when the measured action
runs exclusively.

Energy follows the usual meter model: kWh = watts * seconds / 3.6e6, and
carbon is kWh times grid intensity. The defaults (15 W device draw, 0.475
kg CO2e per kWh world-average grid mix) can be overridden by a config file
or by the GREENLITE_POWER_W / GREENLITE_INTENSITY environment variables,
with the environment taking precedence.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .errors import ContractViolation

DEFAULT_POWER_WATTS = 15.0
WORLD_AVG_INTENSITY = 0.475  # kg CO2e / kWh, world average grid mix
JOULES_PER_KWH = 3.6e6

ENV_POWER = "GREENLITE_POWER_W"
ENV_INTENSITY = "GREENLITE_INTENSITY"

STAGES = ("load", "calibrate", "quantize", "inference", "evaluate")

_timing_lock = threading.Lock()
_tracking_lock = threading.Lock()


class MemoryTracker:
    """Shared atomic tally of live tensor payload bytes."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._current = 0
        self._total_allocs = 0
        self._window_peak = 0
        self.enabled = True

    def register(self, nbytes: int) -> None:
        with self._lock:
            self._current += nbytes
            self._total_allocs += 1
            if self._current > self._window_peak:
                self._window_peak = self._current

    def unregister(self, nbytes: int) -> None:
        with self._lock:
            self._current -= nbytes

    @property
    def current_bytes(self) -> int:
        with self._lock:
            return self._current

    def _begin_window(self) -> int:
        with self._lock:
            self._window_peak = self._current
            return self._total_allocs

    def _end_window(self, allocs_before: int) -> "MemoryStats":
        with self._lock:
            return MemoryStats(
                peak_live_tensor_bytes=self._window_peak,
                current_live_tensor_bytes=self._current,
                allocation_count=self._total_allocs - allocs_before,
            )


#: Global allocator instance every tensor payload registers with.
TRACKER = MemoryTracker()


@dataclass(frozen=True)
class MemoryStats:
    peak_live_tensor_bytes: int
    current_live_tensor_bytes: int
    allocation_count: int


@dataclass(frozen=True)
class LatencyStats:
    warmup_count: int
    sample_count: int
    mean_s: float
    p50_s: float
    p95_s: float
    min_s: float
    max_s: float

    @classmethod
    def from_samples(cls, samples: Iterable[float], warmup_count: int = 0) -> "LatencyStats":
        xs = sorted(float(s) for s in samples)
        if not xs:
            raise ContractViolation("latency stats need at least one sample")
        n = len(xs)
        # Nearest-rank percentiles: p50 == p95 == mean for constant samples.
        p50 = xs[math.ceil(0.50 * n) - 1]
        p95 = xs[math.ceil(0.95 * n) - 1]
        return cls(warmup_count, n, math.fsum(xs) / n, p50, p95, xs[0], xs[-1])


def time_stage(action: Callable[[], object], warmup: int = 1, iterations: int = 5) -> LatencyStats:
    """Run action warmup times untimed, then time it for the given iterations.

    Iterations must be >= 1. The timed section holds a module lock so
    concurrent timing attempts serialize instead of interleaving.
    """
    if iterations < 1:
        raise ContractViolation(f"iterations must be >= 1, got {iterations}")
    if warmup < 0:
        raise ContractViolation(f"warmup must be >= 0, got {warmup}")
    with _timing_lock:
        for _ in range(warmup):
            action()
        samples = []
        for _ in range(iterations):
            t0 = time.perf_counter()
            action()
            samples.append(time.perf_counter() - t0)
    return LatencyStats.from_samples(samples, warmup_count=warmup)


def track_memory(action: Callable[[], object]) -> MemoryStats:
    """Measure peak live tensor bytes while action runs.

    Peak is the maximum of the global live tally during the window, so
    tensors allocated before the window (e.g. loaded model weights) count
    toward the peak as long as they stay alive, which is what a VRAM proxy
    should report.
    """
    if not TRACKER.enabled:
        raise ContractViolation("instrumented allocator is not installed")
    with _tracking_lock:
        allocs_before = TRACKER._begin_window()
        action()
        return TRACKER._end_window(allocs_before)


def estimate_energy(power_watts: float, duration_s: float) -> float:
    """kWh consumed by a constant power draw over a duration."""
    if not (math.isfinite(power_watts) and power_watts >= 0.0):
        raise ContractViolation(f"power must be finite and >= 0, got {power_watts}")
    if not (math.isfinite(duration_s) and duration_s >= 0.0):
        raise ContractViolation(f"duration must be finite and >= 0, got {duration_s}")
    return power_watts * duration_s / JOULES_PER_KWH


def emissions(energy_kwh: float, intensity_kg_per_kwh: float) -> float:
    """kg CO2e for the given energy at the given grid intensity."""
    if not (math.isfinite(energy_kwh) and energy_kwh >= 0.0):
        raise ContractViolation(f"energy must be finite and >= 0, got {energy_kwh}")
    if not (math.isfinite(intensity_kg_per_kwh) and intensity_kg_per_kwh >= 0.0):
        raise ContractViolation(f"intensity must be finite and >= 0, got {intensity_kg_per_kwh}")
    return energy_kwh * intensity_kg_per_kwh


@dataclass(frozen=True)
class EmissionRecord:
    stage: str
    duration_s: float
    energy_kwh: float
    carbon_kg: float
    power_watts_assumed: float = DEFAULT_POWER_WATTS
    intensity_kg_per_kwh: float = WORLD_AVG_INTENSITY

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ContractViolation(f"unknown stage {self.stage!r}, expected one of {STAGES}")
        for name in ("duration_s", "energy_kwh", "carbon_kg", "power_watts_assumed", "intensity_kg_per_kwh"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ContractViolation(f"{name} must be finite and >= 0, got {v}")
        # The record must be arithmetically self-consistent, bit for bit.
        if self.energy_kwh != estimate_energy(self.power_watts_assumed, self.duration_s):
            raise ContractViolation("energy_kwh does not equal watts * seconds / 3.6e6")
        if self.carbon_kg != emissions(self.energy_kwh, self.intensity_kg_per_kwh):
            raise ContractViolation("carbon_kg does not equal energy_kwh * intensity")

    @classmethod
    def measure(
        cls,
        stage: str,
        duration_s: float,
        power_watts: float = DEFAULT_POWER_WATTS,
        intensity_kg_per_kwh: float = WORLD_AVG_INTENSITY,
    ) -> "EmissionRecord":
        """Build a record whose energy and carbon follow exactly from the inputs."""
        energy = estimate_energy(power_watts, duration_s)
        carbon = emissions(energy, intensity_kg_per_kwh)
        return cls(stage, duration_s, energy, carbon, power_watts, intensity_kg_per_kwh)


EMISSIONS_CSV_HEADER = "stage,duration_s,energy_kwh,carbon_kg"


@dataclass(frozen=True)
class StageReport:
    """Per-stage emission totals plus a grand total, in canonical stage order."""

    stages: tuple[tuple[str, float, float, float], ...]
    total_duration_s: float
    total_energy_kwh: float
    total_carbon_kg: float

    def to_csv(self) -> str:
        lines = [EMISSIONS_CSV_HEADER]
        for stage, dur, kwh, kg in self.stages:
            lines.append(f"{stage},{dur:.6f},{kwh:.6f},{kg:.6f}")
        lines.append(
            f"total,{self.total_duration_s:.6f},{self.total_energy_kwh:.6f},{self.total_carbon_kg:.6f}"
        )
        return "\n".join(lines) + "\n"


def stage_report(records: Iterable[EmissionRecord]) -> StageReport:
    """Aggregate records per stage; totals are exact sums of the parts."""
    records = list(records)
    by_stage: dict[str, list[EmissionRecord]] = {}
    for rec in records:
        by_stage.setdefault(rec.stage, []).append(rec)
    rows = []
    for stage in STAGES:
        if stage not in by_stage:
            continue
        group = by_stage[stage]
        rows.append(
            (
                stage,
                math.fsum(r.duration_s for r in group),
                math.fsum(r.energy_kwh for r in group),
                math.fsum(r.carbon_kg for r in group),
            )
        )
    return StageReport(
        stages=tuple(rows),
        total_duration_s=math.fsum(r[1] for r in rows),
        total_energy_kwh=math.fsum(r[2] for r in rows),
        total_carbon_kg=math.fsum(r[3] for r in rows),
    )


def parse_stage_report(text: str) -> StageReport:
    """Parse a stage report CSV back into its (6-decimal quantized) values."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != EMISSIONS_CSV_HEADER:
        raise ContractViolation("bad emissions CSV header")
    rows: list[tuple[str, float, float, float]] = []
    total = (0.0, 0.0, 0.0)
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ContractViolation(f"bad emissions CSV row: {ln!r}")
        stage, dur, kwh, kg = parts[0], float(parts[1]), float(parts[2]), float(parts[3])
        if stage == "total":
            total = (dur, kwh, kg)
        else:
            rows.append((stage, dur, kwh, kg))
    return StageReport(tuple(rows), *total)


def load_config(path: str) -> dict[str, str]:
    """Read a key=value config file; blank lines and # comments are ignored."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ContractViolation(f"config line {i}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def save_config(path: str, values: Mapping[str, object]) -> None:
    """Write key=value lines; floats are fixed to 6 decimals."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            if isinstance(value, float):
                fh.write(f"{key}={value:.6f}\n")
            else:
                fh.write(f"{key}={value}\n")


def resolve_energy_settings(config: Mapping[str, str] | None = None) -> tuple[float, float]:
    """(power_watts, intensity) with env vars > config file > defaults."""
    config = config or {}
    power = float(config.get("power", DEFAULT_POWER_WATTS))
    intensity = float(config.get("intensity", WORLD_AVG_INTENSITY))
    if ENV_POWER in os.environ:
        power = float(os.environ[ENV_POWER])
    if ENV_INTENSITY in os.environ:
        intensity = float(os.environ[ENV_INTENSITY])
    if power < 0 or intensity < 0:
        raise ContractViolation("power and intensity must be >= 0")
    return power, intensity
