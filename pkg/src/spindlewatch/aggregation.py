"""Level-2 processing: tool usage periods, exceedance operators, smart data.

The two aggregation operators work on a criterion series x(k) sampled every
dt = 0.1 s against a critical threshold T:

    CO = sum of (x(k) - T) * dt over samples where x(k) > T
    T_op = dt * count of samples where x(k) > T

Exceedance is strict; x(k) == T does not count. Sums use math.fsum so the
result is the correctly rounded value of the underlying real sum and agrees
exactly with a per-sample enumeration.

Critical thresholds are learned without labels by a deterministic 1-D
two-means split of the pooled criterion values (centroids seeded at the 10th
and 90th percentiles, threshold at the midpoint of the converged centroids),
falling back to the 99.9th percentile when the data shows no usable second
mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import OperatorError, ThresholdLearningError
from .models import (
    CRITERION_DT,
    IDLE_TOOL,
    N_CHANNELS,
    SCALAR_CRITERIA,
    VIBRATION_CRITERIA,
    CriterionSeries,
    MonitoringRecord,
    SmartDatum,
    Threshold,
    ToolUsagePeriod,
)


@dataclass(frozen=True)
class SegmentationSettings:
    max_idle_gap_s: float = 5.0     # longer idle gaps split a tool run


@dataclass(frozen=True)
class CutSettings:
    """A sample counts as cutting when mean_power > idle_power * (1 + margin_ratio)."""

    idle_power_w: float = 500.0
    margin_ratio: float = 2.0

    @property
    def cut_power_threshold_w(self) -> float:
        return self.idle_power_w * (1.0 + self.margin_ratio)


@dataclass(frozen=True)
class MetricDef:
    """One smart-data metric: source criterion, operator and selection rule."""

    metric_id: str
    source: str                     # vrms | nh | unbalance | bearing | power | spindle_temperature | feedrate
    operator: str                   # CO | T | mean | max | min | sum
    threshold_ref: Optional[str] = None
    cuts_only: bool = False


OPERATORS = ("CO", "T", "mean", "max", "min", "sum")


def quadratic_mean(values) -> float:
    """Root mean square across the four accelerometer channels."""
    arr = np.asarray(values, dtype=float)
    if arr.shape[-1] != N_CHANNELS:
        raise OperatorError(f"expected {N_CHANNELS} channel values, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise OperatorError("non-finite channel value")
    return float(np.sqrt(np.mean(arr**2, axis=-1)))


def _window_indices(series: CriterionSeries, t_i: float, t_f: float) -> tuple[int, int]:
    if t_f < t_i:
        raise OperatorError(f"window [{t_i}, {t_f}] is reversed")
    eps = series.dt * 1e-6
    last = series.start_time + (len(series.values) - 1) * series.dt
    if t_i < series.start_time - eps or t_f > last + eps:
        raise OperatorError(
            f"window [{t_i}, {t_f}] outside series extent [{series.start_time}, {last}]")
    k0 = math.ceil((t_i - series.start_time) / series.dt - 1e-6)
    k1 = math.floor((t_f - series.start_time) / series.dt + 1e-6)
    return max(k0, 0), min(k1, len(series.values) - 1)


def _check_threshold(series: CriterionSeries, threshold: Threshold) -> float:
    if threshold.criterion_id != series.criterion_id:
        raise OperatorError(
            f"threshold for '{threshold.criterion_id}' applied to series '{series.criterion_id}'")
    return threshold.value


def exceedance_integral(values: Sequence[float], threshold_value: float,
                        dt: float = CRITERION_DT) -> float:
    """Correctly rounded sum of (x - T) * dt over strictly exceeding samples."""
    arr = np.asarray(values, dtype=float)
    terms = (arr[arr > threshold_value] - threshold_value) * dt
    return math.fsum(terms)


def exceedance_time(values: Sequence[float], threshold_value: float,
                    dt: float = CRITERION_DT) -> float:
    """Total time spent strictly above the threshold."""
    arr = np.asarray(values, dtype=float)
    return int((arr > threshold_value).sum()) * dt


def co_operator(series: CriterionSeries, threshold: Threshold, t_i: float, t_f: float) -> float:
    """Criticality: integral of the exceedance magnitude over [t_i, t_f]."""
    value = _check_threshold(series, threshold)
    k0, k1 = _window_indices(series, t_i, t_f)
    return exceedance_integral(series.values[k0:k1 + 1], value, series.dt)


def t_operator(series: CriterionSeries, threshold: Threshold, t_i: float, t_f: float) -> float:
    """Time the criterion spends above the threshold over [t_i, t_f]."""
    value = _check_threshold(series, threshold)
    k0, k1 = _window_indices(series, t_i, t_f)
    return exceedance_time(series.values[k0:k1 + 1], value, series.dt)


# --- tool usage periods ----------------------------------------------------

def segment_periods(records: Iterable[MonitoringRecord], machine_id: str = "M1",
                    settings: SegmentationSettings = SegmentationSettings()) -> list[ToolUsagePeriod]:
    """Split a time-ordered record stream into maximal tool usage periods.

    A period is a run of records sharing one tool id. Idle records inside a
    run are tolerated up to max_idle_gap_s; a longer gap, or a different
    tool, closes the period at the last active record.
    """
    periods: list[ToolUsagePeriod] = []
    tool = None
    t_start = last_active = None
    programs: set[str] = set()
    workpieces: set[str] = set()
    prev_time = None

    def close():
        nonlocal tool
        if tool is None:
            return
        t_f = last_active if last_active > t_start else t_start + CRITERION_DT
        periods.append(ToolUsagePeriod(
            period_id=f"{machine_id}-P{len(periods):05d}",
            machine_id=machine_id, tool_id=tool, t_i=t_start, t_f=t_f,
            programs=tuple(sorted(programs)), workpieces=tuple(sorted(workpieces)),
        ))
        tool = None

    for rec in records:
        if prev_time is not None and rec.time < prev_time:
            raise OperatorError(
                f"records out of order: {rec.time:g} s after {prev_time:g} s")
        prev_time = rec.time

        if rec.tool_id == IDLE_TOOL:
            if tool is not None and rec.time - last_active > settings.max_idle_gap_s:
                close()
                programs, workpieces = set(), set()
            continue

        if tool is None:
            tool, t_start, last_active = rec.tool_id, rec.time, rec.time
            programs, workpieces = set(), set()
        elif rec.tool_id != tool or rec.time - last_active > settings.max_idle_gap_s:
            close()
            tool, t_start = rec.tool_id, rec.time
            programs, workpieces = set(), set()
        last_active = rec.time
        if rec.program_name:
            programs.add(rec.program_name)
        if rec.workpiece_id:
            workpieces.add(rec.workpiece_id)

    close()
    return periods


# --- threshold learning ----------------------------------------------------

MIN_LEARNING_SAMPLES = 1000


def learn_threshold(values: Sequence[float], criterion_id: str,
                    min_samples: int = MIN_LEARNING_SAMPLES) -> Threshold:
    """Learn a critical threshold from pooled, unlabeled criterion samples."""
    arr = np.asarray(values, dtype=float)
    if arr.size < min_samples:
        raise ThresholdLearningError(
            f"{criterion_id}: need at least {min_samples} samples, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ThresholdLearningError(f"{criterion_id}: non-finite samples in pool")

    spread = float(arr.max() - arr.min())
    c_low = float(np.percentile(arr, 10.0))
    c_high = float(np.percentile(arr, 90.0))

    method = "two-means"
    if spread == 0.0 or c_high - c_low == 0.0:
        threshold = float(np.quantile(arr, 0.999))
        method = "p99.9 fallback (degenerate spread)"
    else:
        for _ in range(200):
            boundary = 0.5 * (c_low + c_high)
            low = arr[arr <= boundary]
            high = arr[arr > boundary]
            if low.size == 0 or high.size == 0:
                break
            new_low, new_high = float(low.mean()), float(high.mean())
            if new_low == c_low and new_high == c_high:
                break
            c_low, c_high = new_low, new_high
        if (c_high - c_low) < 0.01 * spread:
            threshold = float(np.quantile(arr, 0.999))
            method = "p99.9 fallback (no separable modes)"
        else:
            threshold = 0.5 * (c_low + c_high)

    if threshold <= 0.0:
        raise ThresholdLearningError(
            f"{criterion_id}: learned threshold {threshold:g} is not positive")
    return Threshold(criterion_id=criterion_id, value=threshold, provenance="learned",
                     learned_from=f"{arr.size} samples, {method}")


# --- smart data ------------------------------------------------------------

def fuse_records(records: Sequence[MonitoringRecord], criterion_id: str) -> np.ndarray:
    """Per-record criterion values; vibration criteria fused by quadratic mean."""
    if criterion_id in VIBRATION_CRITERIA:
        chans = np.asarray([getattr(r, criterion_id) for r in records], dtype=float)
        if chans.size == 0:
            return np.zeros(0)
        return np.sqrt(np.mean(chans**2, axis=-1))
    if criterion_id == "power":
        return np.asarray([r.mean_power for r in records], dtype=float)
    if criterion_id in SCALAR_CRITERIA:
        return np.asarray([getattr(r, criterion_id) for r in records], dtype=float)
    raise OperatorError(f"unknown criterion '{criterion_id}'")


def criterion_series(records: Sequence[MonitoringRecord], criterion_id: str) -> CriterionSeries:
    values = fuse_records(records, criterion_id)
    start = records[0].time if records else 0.0
    return CriterionSeries(criterion_id=criterion_id, start_time=start, values=values)


def compute_smart_data(period: ToolUsagePeriod, records: Sequence[MonitoringRecord],
                       thresholds: dict[str, Threshold], metric_defs: Sequence[MetricDef],
                       cuts: CutSettings = CutSettings()) -> list[SmartDatum]:
    """Evaluate every metric definition over one period's record slice.

    Records are restricted to [t_i, t_f]; metrics flagged cuts_only see only
    samples whose mean power clears the cut threshold. An empty selection
    yields 0 for CO/T metrics and omits mean/max/min metrics entirely.
    """
    in_period = [r for r in records if period.t_i - 1e-9 <= r.time <= period.t_f + 1e-9]
    cutting = [r for r in in_period if r.mean_power > cuts.cut_power_threshold_w]

    data: list[SmartDatum] = []
    for mdef in metric_defs:
        if mdef.operator not in OPERATORS:
            raise OperatorError(f"metric '{mdef.metric_id}': unknown operator '{mdef.operator}'")
        selected = cutting if mdef.cuts_only else in_period
        values = fuse_records(selected, mdef.source)

        if mdef.operator in ("CO", "T"):
            ref = mdef.threshold_ref or mdef.source
            if ref not in thresholds:
                raise OperatorError(
                    f"metric '{mdef.metric_id}': no threshold available for '{ref}'")
            threshold = thresholds[ref]
            if mdef.operator == "CO":
                value = exceedance_integral(values, threshold.value)
            else:
                value = exceedance_time(values, threshold.value)
            data.append(SmartDatum(period=period, metric_id=mdef.metric_id, value=value,
                                   operator=mdef.operator, threshold_used=threshold))
            continue

        if values.size == 0:
            continue        # mean/max/min/sum are absent without samples
        if mdef.operator == "mean":
            value = math.fsum(values) / values.size
        elif mdef.operator == "max":
            value = float(values.max())
        elif mdef.operator == "min":
            value = float(values.min())
        else:
            value = math.fsum(values)
        data.append(SmartDatum(period=period, metric_id=mdef.metric_id, value=value,
                               operator=mdef.operator))
    return data
