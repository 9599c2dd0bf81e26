"""Domain types shared by all processing stages.

Stages (signal generation, monitoring, aggregation, KPI evaluation) exchange
only these types plus plain numbers; they never import each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SAMPLE_RATE = 25_000
BLOCK_SECONDS = 0.1
BLOCK_SAMPLES = 2500            # SAMPLE_RATE * BLOCK_SECONDS
CONTEXT_RATE = 10               # context samples per second
CRITERION_DT = 0.1              # spacing of monitoring records, seconds
N_CHANNELS = 4                  # accelerometers on the spindle
IDLE_TOOL = "idle"              # sentinel tool id outside scheduled cuts

VIBRATION_CRITERIA = ("vrms", "nh", "unbalance", "bearing")
SCALAR_CRITERIA = ("power", "spindle_temperature", "feedrate")


@dataclass
class SignalBlock:
    """One 0.1 s slab of raw telemetry: 4 vibration channels plus power."""

    block_index: int
    start_time: float
    channels: np.ndarray        # shape (4, 2500), m/s^2
    power: np.ndarray           # shape (2500,), W
    sample_rate: int = SAMPLE_RATE


@dataclass
class ContextSample:
    """CNC operational context emitted at 10 Hz."""

    time: float
    axis_position: tuple[float, float, float]   # mm
    feedrate: float                             # mm/min
    spindle_speed: float                        # rev/min
    tool_id: str
    program_name: str
    workpiece_id: str
    spindle_temperature: float                  # degC


@dataclass
class MonitoringRecord:
    """Per-0.1 s monitoring criteria joined with the synchronous context."""

    time: float
    vrms: tuple[float, float, float, float]
    nh: tuple[float, float, float, float]
    unbalance: tuple[float, float, float, float]
    bearing: tuple[float, float, float, float]
    mean_power: float
    tool_id: str
    program_name: str
    workpiece_id: str
    spindle_speed: float
    feedrate: float
    spindle_temperature: float


@dataclass
class SpectralWindow:
    """One-sided amplitude spectrum of a signal block."""

    bin_magnitudes: np.ndarray  # m/s^2, calibrated so a sinusoid of amplitude A reads A
    bin_width: float            # Hz
    window_kind: str


@dataclass(frozen=True)
class ToolUsagePeriod:
    """Contiguous interval during which one cutting tool is active."""

    period_id: str
    machine_id: str
    tool_id: str
    t_i: float
    t_f: float
    programs: tuple[str, ...]
    workpieces: tuple[str, ...]


@dataclass
class CriterionSeries:
    """Uniformly sampled values of one monitoring criterion."""

    criterion_id: str
    start_time: float
    values: np.ndarray
    dt: float = CRITERION_DT


@dataclass(frozen=True)
class Threshold:
    """Critical level for one criterion, learned or configured."""

    criterion_id: str
    value: float
    provenance: str             # "learned" | "configured"
    learned_from: str = ""


@dataclass(frozen=True)
class SmartDatum:
    """One aggregated metric for one tool usage period."""

    period: ToolUsagePeriod
    metric_id: str
    value: float
    operator: str               # CO | T | mean | max | min | sum
    threshold_used: Optional[Threshold] = None


@dataclass(frozen=True)
class ScopeFilter:
    """Entity and time-range selection over smart data.

    A period matches a time range when its start t_i lies in
    [time_start, time_end); this assigns each period to exactly one cell of
    any partition of the range.
    """

    machine: Optional[str] = None
    tool: Optional[str] = None
    program: Optional[str] = None
    workpiece: Optional[str] = None
    time_start: Optional[float] = None
    time_end: Optional[float] = None


@dataclass(frozen=True)
class BaselineSpec:
    """Reference value for baseline_comparison KPIs.

    kind "fixed" compares against `value`; kind "window" compares against the
    mean of the same KPI over [time_start, time_end).
    """

    kind: str
    value: Optional[float] = None
    time_start: Optional[float] = None
    time_end: Optional[float] = None


@dataclass(frozen=True)
class KpiModel:
    kpi_id: str
    aggregation: str            # sum | mean | weighted_sum | weighted_mean | baseline_comparison
    source_metric: str
    group_by: str               # tool | program | workpiece | machine
    weights: Optional[dict[str, float]] = None
    baseline: Optional[BaselineSpec] = None


@dataclass(frozen=True)
class ModeSpec:
    """Instantiation mode: periodic, on_demand or on_event."""

    kind: str
    period_s: Optional[float] = None
    event_metric: Optional[str] = None
    event_threshold: Optional[float] = None


@dataclass(frozen=True)
class InstantiationContext:
    objective: str
    decider: str
    scope: ScopeFilter
    mode: ModeSpec


@dataclass(frozen=True)
class DecisionAidIndicator:
    """Contextual instantiation of a set of KPI models over smart data."""

    indicator_id: str
    context: InstantiationContext
    kpi_results: dict[str, dict[str, float]]    # kpi_id -> entity -> value
    computed_at: float                          # scenario-clock seconds
    inputs_digest: str


@dataclass
class AgentMessage:
    msg_id: int
    from_agent: str
    to_agent: str
    kind: str                   # request | result | event
    payload: dict
    correlation_id: Optional[int] = None


@dataclass(frozen=True)
class ReportSpec:
    context: InstantiationContext
    models: tuple[str, ...]     # kpi ids to render
    output_dir: str
    formats: tuple[str, ...] = ("json", "svg", "text")


@dataclass
class ReportSection:
    kpi_id: str
    group_by: str
    table: list[tuple[str, float]]      # sorted by value, descending
    pie: list[tuple[str, float]]        # entity -> share of total, "other"-grouped
    total: float


@dataclass
class Report:
    indicator: DecisionAidIndicator
    header: dict[str, str]
    sections: list[ReportSection]
    empty: bool = False


@dataclass
class RunSummary:
    """Outcome of one pipeline run; deterministic for a fixed config and seed."""

    seed: int
    blocks: int
    context_samples: int
    periods: int
    indicators: int
    stream_rows: dict[str, int] = field(default_factory=dict)
    stream_bytes: dict[str, int] = field(default_factory=dict)
    report_paths: list[str] = field(default_factory=list)
    outbox_paths: list[str] = field(default_factory=list)
