"""Per-device linear power models fitted from performance counters.

Node power is modelled as ``P = W . X + B`` where ``X`` sums the four
counters over every observed process.  Process power is ``W . X_i``
(no share of the idle term); a proportional correction rescales the
process estimates so they add up to what the meter actually read.
Task energy is the integral of the worker process's corrected power.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AttributionUndefinedError,
    ContractViolation,
    DegenerateFitError,
    InsufficientDataError,
    NoDataError,
    ParseError,
    ValidationError,
)

log = logging.getLogger(__name__)

COUNTERS = ("llc_misses", "instructions_retired", "cpu_cycles", "ref_cycles")
COUNTER_HEADER = ("timestamp_s", "process_id") + COUNTERS
POWER_HEADER = ("timestamp_s", "device_id", "power_w")
MIN_INTERVALS = 5
DEFAULT_PERIOD_S = 1.0


@dataclass(frozen=True)
class CounterSample:
    timestamp_s: float
    process_id: int
    llc_misses: float = 0
    instructions_retired: float = 0
    cpu_cycles: float = 0
    ref_cycles: float = 0

    def __post_init__(self):
        if min(self.counts) < 0:
            raise ValidationError(f"negative counter at t={self.timestamp_s} pid={self.process_id}")

    @property
    def counts(self) -> tuple[float, float, float, float]:
        return (self.llc_misses, self.instructions_retired, self.cpu_cycles, self.ref_cycles)


@dataclass(frozen=True)
class PowerSample:
    timestamp_s: float
    device_id: str
    power_w: float

    def __post_init__(self):
        if self.power_w < 0:
            raise ValidationError(f"negative power at t={self.timestamp_s} on {self.device_id}")


@dataclass(frozen=True)
class FitReport:
    intervals_used: int
    dropped_counter_samples: int
    dropped_power_samples: int
    intercept_clamped: bool = False


@dataclass(frozen=True)
class PowerModel:
    device_id: str
    weights: tuple[float, float, float, float]
    intercept_w: float
    r_squared: float
    report: FitReport | None = field(default=None, compare=False)

    def predict_node(self, counts: Sequence[float]) -> float:
        return float(np.dot(self.weights, counts)) + self.intercept_w

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "weights": list(self.weights),
            "intercept_w": self.intercept_w,
            "r_squared": self.r_squared,
        }

    @classmethod
    def from_dict(cls, doc) -> "PowerModel":
        try:
            weights = tuple(float(w) for w in doc["weights"])
            model = cls(str(doc["device_id"]), weights, float(doc["intercept_w"]), float(doc["r_squared"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed power model: {exc!r}", "model") from exc
        if len(weights) != len(COUNTERS):
            raise ParseError(f"expected {len(COUNTERS)} weights", "model.weights")
        return model


@dataclass
class ProcessPowerSeries:
    process_id: int
    samples: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        for (t0, _), (t1, _) in zip(self.samples, self.samples[1:]):
            if t1 <= t0:
                raise ValidationError(f"process {self.process_id}: timestamps not strictly increasing")
        if any(p < 0 for _, p in self.samples):
            raise ValidationError(f"process {self.process_id}: negative power")


def align_samples(counter_samples, power_samples, device_id=None, period_s=DEFAULT_PERIOD_S):
    """Match each counter sample to the nearest power sample within half a period.

    Returns ``(matches, dropped_counters, dropped_power)`` where ``matches``
    is a list of ``(power_sample, [counter_samples...])`` in time order.
    Power samples that no counter sample lands on are dropped.
    """
    power = sorted(
        (p for p in power_samples if device_id is None or p.device_id == device_id),
        key=lambda p: p.timestamp_s,
    )
    times = [p.timestamp_s for p in power]
    half = period_s / 2.0
    buckets = defaultdict(list)
    dropped_counters = 0
    for c in counter_samples:
        i = bisect.bisect_left(times, c.timestamp_s)
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(times):
                dt = abs(times[j] - c.timestamp_s)
                if dt <= half and (best is None or dt < best[0]):
                    best = (dt, j)
        if best is None:
            dropped_counters += 1
        else:
            buckets[best[1]].append(c)
    matches = [(power[j], buckets[j]) for j in sorted(buckets)]
    return matches, dropped_counters, len(power) - len(matches)


def _collinear_columns(design: np.ndarray, names: Sequence[str]) -> list[str]:
    full = np.linalg.matrix_rank(design)
    out = []
    for j, name in enumerate(names):
        if not np.any(design[:, j]):
            out.append(name)
            continue
        rest = np.delete(design, j, axis=1)
        if np.linalg.matrix_rank(rest) == full:
            out.append(name)
    return out


def least_squares(design: np.ndarray, target: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """OLS with column equilibration; raises DegenerateFitError on a singular design."""
    norms = np.linalg.norm(design, axis=0)
    zero = [names[j] for j in range(design.shape[1]) if norms[j] == 0]
    if zero:
        raise DegenerateFitError(f"degenerate fit: all-zero columns {', '.join(zero)}", zero)
    scaled = design / norms
    if np.linalg.matrix_rank(scaled) < design.shape[1]:
        cols = _collinear_columns(scaled, names)
        raise DegenerateFitError(f"degenerate fit: collinear columns {', '.join(cols)}", cols)
    coef, *_ = np.linalg.lstsq(scaled, target, rcond=None)
    return coef / norms


def r_squared(target: np.ndarray, fitted: np.ndarray) -> float:
    ss_res = float(np.sum((target - fitted) ** 2))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res <= 1e-12 * max(1.0, float(np.sum(target**2))) else 0.0
    return min(1.0, max(0.0, 1.0 - ss_res / ss_tot))


def fit_power_model(counter_samples, power_samples, device_id, period_s=DEFAULT_PERIOD_S) -> PowerModel:
    matches, drop_c, drop_p = align_samples(counter_samples, power_samples, device_id, period_s)
    if len(matches) < MIN_INTERVALS:
        raise InsufficientDataError(
            f"need at least {MIN_INTERVALS} aligned intervals for {device_id!r}, got {len(matches)}"
        )
    X = np.array([np.sum([c.counts for c in cs], axis=0) for _, cs in matches], dtype=float)
    y = np.array([p.power_w for p, _ in matches], dtype=float)
    design = np.column_stack([X, np.ones(len(y))])
    coef = least_squares(design, y, COUNTERS + ("intercept",))
    fitted = design @ coef
    weights = tuple(float(w) for w in coef[:4])
    intercept = float(coef[4])
    clamped = intercept < 0
    if clamped:
        log.warning("fitted intercept %.3f W for %s is negative; clamping idle power to 0", intercept, device_id)
        intercept = 0.0
    report = FitReport(len(matches), drop_c, drop_p, clamped)
    return PowerModel(device_id, weights, intercept, r_squared(y, fitted), report)


def fit_constant_model(power_samples, device_id) -> PowerModel:
    """Idle-only model: zero weights, intercept = mean measured power."""
    ys = [p.power_w for p in power_samples if p.device_id == device_id]
    if not ys:
        raise InsufficientDataError(f"no power samples for {device_id!r}")
    y = np.array(ys)
    return PowerModel(device_id, (0.0, 0.0, 0.0, 0.0), float(y.mean()), r_squared(y, np.full_like(y, y.mean())))


def estimate_process_power(model: PowerModel, counter_sample: CounterSample) -> float:
    return math.fsum(w * x for w, x in zip(model.weights, counter_sample.counts))


def correct_attribution(measured_power_w: float, raw_process_powers: Mapping, idle_w: float = 0.0) -> dict:
    """Split measured power across processes in proportion to their model estimates.

    ``idle_w`` is subtracted from the measurement first (dynamic-only mode).
    """
    if any(p < 0 for p in raw_process_powers.values()):
        raise ContractViolation("raw process powers must be >= 0")
    total = math.fsum(raw_process_powers.values())
    if total <= 0:
        raise AttributionUndefinedError("all raw process powers are zero")
    budget = max(measured_power_w - idle_w, 0.0)
    return {pid: budget * p / total for pid, p in raw_process_powers.items()}


def process_power_series(
    model: PowerModel,
    counter_samples: Iterable[CounterSample],
    power_samples: Iterable[PowerSample],
    period_s: float = DEFAULT_PERIOD_S,
    attribute_dynamic_only: bool = False,
) -> dict[int, ProcessPowerSeries]:
    """Corrected per-process power over time, one point per aligned power sample."""
    matches, _, _ = align_samples(counter_samples, power_samples, model.device_id, period_s)
    idle = model.intercept_w if attribute_dynamic_only else 0.0
    series: dict[int, list] = defaultdict(list)
    for p, cs in matches:
        raw: dict[int, float] = defaultdict(float)
        for c in cs:
            # negative weights can push an estimate below zero
            raw[c.process_id] += max(estimate_process_power(model, c), 0.0)
        try:
            corrected = correct_attribution(p.power_w, raw, idle)
        except AttributionUndefinedError:
            corrected = {pid: 0.0 for pid in raw}
        for pid, watts in corrected.items():
            series[pid].append((p.timestamp_s, watts))
    return {pid: ProcessPowerSeries(pid, pts) for pid, pts in sorted(series.items())}


def attribute_task_energy(process_series, start_s: float, end_s: float) -> float:
    """Trapezoidal integral of piecewise-linear power over ``[start_s, end_s]``.

    Outside the sampled span the nearest sample's power is held constant.
    """
    samples = process_series.samples if isinstance(process_series, ProcessPowerSeries) else process_series
    if end_s < start_s:
        raise ContractViolation(f"end_s {end_s} < start_s {start_s}")
    if not samples:
        raise NoDataError("empty power series")
    ts = np.array([t for t, _ in samples], dtype=float)
    ps = np.array([p for _, p in samples], dtype=float)
    inner = ts[(ts > start_s) & (ts < end_s)]
    knots = np.concatenate([[start_s], inner, [end_s]])
    values = np.interp(knots, ts, ps)
    return float(np.sum((values[1:] + values[:-1]) * np.diff(knots)) / 2.0)


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        if tuple(reader.fieldnames) != header:
            raise ParseError(f"expected header {','.join(header)}", str(path))
        return list(enumerate(reader, 2))


def read_counters(path) -> list[CounterSample]:
    out = []
    for lineno, row in _read_rows(path, COUNTER_HEADER):
        try:
            out.append(
                CounterSample(
                    float(row["timestamp_s"]),
                    int(row["process_id"]),
                    *(float(row[c]) for c in COUNTERS),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), f"{path}:{lineno}") from exc
    return out


def read_power(path) -> list[PowerSample]:
    out = []
    for lineno, row in _read_rows(path, POWER_HEADER):
        try:
            out.append(PowerSample(float(row["timestamp_s"]), row["device_id"], float(row["power_w"])))
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), f"{path}:{lineno}") from exc
    return out


def write_counters(samples: Iterable[CounterSample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNTER_HEADER)
        for s in samples:
            w.writerow([repr(s.timestamp_s), s.process_id, *(repr(float(x)) for x in s.counts)])


def write_power(samples: Iterable[PowerSample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POWER_HEADER)
        for s in samples:
            w.writerow([repr(s.timestamp_s), s.device_id, repr(s.power_w)])


def read_model(path) -> PowerModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", str(path)) from exc
    return PowerModel.from_dict(doc)


def write_model(model: PowerModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")
