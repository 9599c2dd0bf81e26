"""Pipeline configuration: one YAML document wiring all stages together.

The document names the scenario (inline mapping or a path), the monitor
settings, the smart-data metric definitions, the threshold mode (learn or
fixed), the KPI models and the report spec. `default_metrics` and
`default_kpis` apply when the respective sections are omitted. The packaged
demo configuration is addressable by the literal name "demo".
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .aggregation import OPERATORS, CutSettings, MetricDef, SegmentationSettings
from .errors import ConfigError
from .kpi import AGGREGATIONS, GROUP_KINDS, MODE_KINDS, validate_context
from .models import (
    SCALAR_CRITERIA,
    VIBRATION_CRITERIA,
    BaselineSpec,
    InstantiationContext,
    KpiModel,
    ModeSpec,
    ScopeFilter,
)
from .monitoring import WINDOW_KINDS, MonitorSettings
from .scenario import ScenarioScript, read_scenario, script_from_mapping

CRITERIA = VIBRATION_CRITERIA + SCALAR_CRITERIA
REPORT_FORMATS = ("json", "svg", "text")
LEARNABLE_CRITERIA = ("vrms", "nh", "unbalance", "bearing")


@dataclass(frozen=True)
class ThresholdSettings:
    mode: str = "fixed"                         # fixed | learn
    fixed: dict = field(default_factory=dict)   # criterion_id -> value
    learn_criteria: tuple[str, ...] = LEARNABLE_CRITERIA
    min_samples: int = 1000


@dataclass(frozen=True)
class ReportSettings:
    context: InstantiationContext
    models: tuple[str, ...]
    formats: tuple[str, ...] = REPORT_FORMATS


@dataclass
class PipelineConfig:
    scenario: ScenarioScript
    machine_id: str = "M1"
    monitor: MonitorSettings = field(default_factory=MonitorSettings)
    segmentation: SegmentationSettings = field(default_factory=SegmentationSettings)
    cuts: CutSettings = field(default_factory=CutSettings)
    thresholds: ThresholdSettings = field(default_factory=ThresholdSettings)
    metrics: tuple[MetricDef, ...] = ()
    kpis: tuple[KpiModel, ...] = ()
    report: Optional[ReportSettings] = None
    chunk_blocks: int = 64
    raw_dump: bool = False


def default_metrics() -> tuple[MetricDef, ...]:
    return (
        MetricDef("chatter_duration", source="nh", operator="T", threshold_ref="nh"),
        MetricDef("critical_vibration", source="vrms", operator="CO", threshold_ref="vrms"),
        MetricDef("mean_cutting_power", source="power", operator="mean", cuts_only=True),
        MetricDef("max_spindle_temperature", source="spindle_temperature", operator="max"),
        MetricDef("mean_feedrate", source="feedrate", operator="mean", cuts_only=True),
    )


def default_kpis() -> tuple[KpiModel, ...]:
    return (
        KpiModel("chatter_by_tool", aggregation="sum",
                 source_metric="chatter_duration", group_by="tool"),
        KpiModel("chatter_by_program", aggregation="sum",
                 source_metric="chatter_duration", group_by="program"),
    )


def _expect_mapping(doc, where: str) -> dict:
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a mapping")
    return doc


def _parse_monitor(doc: dict) -> MonitorSettings:
    window = doc.get("window", "rect")
    if window not in WINDOW_KINDS:
        raise ConfigError(f"monitor.window: unknown window kind '{window}'")
    return MonitorSettings(
        window=window,
        bandwidth_hz=float(doc.get("bandwidth_hz", 10_000.0)),
        bandwidth_overrides={str(k): float(v)
                             for k, v in _expect_mapping(doc.get("bandwidth_overrides"),
                                                         "monitor.bandwidth_overrides").items()},
        tooth_counts={str(k): int(v)
                      for k, v in _expect_mapping(doc.get("tooth_counts"),
                                                  "monitor.tooth_counts").items()},
        default_tooth_count=int(doc.get("default_tooth_count", 2)),
        defect_orders={str(k): float(v)
                       for k, v in _expect_mapping(doc.get("defect_orders"),
                                                   "monitor.defect_orders").items()},
        default_defect_order=float(doc.get("default_defect_order", 4.9)),
    )


def _parse_metrics(raw) -> tuple[MetricDef, ...]:
    if raw is None:
        return default_metrics()
    metrics = []
    for i, doc in enumerate(raw):
        where = f"metrics[{i}]"
        if "id" not in doc:
            raise ConfigError(f"{where}: missing required field 'id'")
        source = doc.get("source")
        if source not in CRITERIA:
            raise ConfigError(f"{where}: unknown source criterion '{source}'")
        operator = doc.get("operator")
        if operator not in OPERATORS:
            raise ConfigError(f"{where}: unknown operator '{operator}'")
        metrics.append(MetricDef(
            metric_id=str(doc["id"]), source=source, operator=operator,
            threshold_ref=doc.get("threshold"), cuts_only=bool(doc.get("cuts_only", False)),
        ))
    return tuple(metrics)


def _parse_kpis(raw) -> tuple[KpiModel, ...]:
    if raw is None:
        return default_kpis()
    kpis = []
    for i, doc in enumerate(raw):
        where = f"kpis[{i}]"
        if "id" not in doc:
            raise ConfigError(f"{where}: missing required field 'id'")
        aggregation = doc.get("aggregation")
        if aggregation not in AGGREGATIONS:
            raise ConfigError(f"{where}: unknown aggregation '{aggregation}'")
        group_by = doc.get("group_by")
        if group_by not in GROUP_KINDS:
            raise ConfigError(f"{where}: unknown group_by '{group_by}'")
        if "source_metric" not in doc:
            raise ConfigError(f"{where}: missing required field 'source_metric'")
        baseline = None
        if doc.get("baseline") is not None:
            b = doc["baseline"]
            baseline = BaselineSpec(kind=str(b.get("kind", "fixed")),
                                    value=b.get("value"),
                                    time_start=b.get("time_start"),
                                    time_end=b.get("time_end"))
        weights = doc.get("weights")
        kpis.append(KpiModel(
            kpi_id=str(doc["id"]), aggregation=aggregation,
            source_metric=str(doc["source_metric"]), group_by=group_by,
            weights=None if weights is None else {str(k): float(v) for k, v in weights.items()},
            baseline=baseline,
        ))
    return tuple(kpis)


def _parse_scope(doc: dict) -> ScopeFilter:
    known = {"machine", "tool", "program", "workpiece", "time_start", "time_end"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"report.scope: unknown field '{key}'")
    return ScopeFilter(**{k: doc[k] for k in doc})


def _parse_report(doc, kpis: tuple[KpiModel, ...]) -> ReportSettings:
    doc = _expect_mapping(doc, "report")
    mode_doc = _expect_mapping(doc.get("mode"), "report.mode") or {"kind": "on_demand"}
    kind = mode_doc.get("kind", "on_demand")
    if kind not in MODE_KINDS:
        raise ConfigError(f"report.mode: unknown kind '{kind}'")
    mode = ModeSpec(kind=kind,
                    period_s=mode_doc.get("period_s"),
                    event_metric=mode_doc.get("event_metric"),
                    event_threshold=mode_doc.get("event_threshold"))
    context = InstantiationContext(
        objective=str(doc.get("objective", "production review")),
        decider=str(doc.get("decider", "manufacturing_department")),
        scope=_parse_scope(_expect_mapping(doc.get("scope"), "report.scope")),
        mode=mode,
    )
    try:
        validate_context(context)
    except Exception as exc:
        raise ConfigError(f"report: {exc}") from exc

    formats = tuple(doc.get("formats", REPORT_FORMATS))
    if not formats:
        raise ConfigError("report.formats: at least one format is required")
    for fmt in formats:
        if fmt not in REPORT_FORMATS:
            raise ConfigError(f"report.formats: unknown format '{fmt}'")

    known_models = {k.kpi_id for k in kpis}
    models = tuple(doc.get("models", sorted(known_models)))
    for model in models:
        if model not in known_models:
            raise ConfigError(f"report.models: unknown KPI '{model}'")
    return ReportSettings(context=context, models=models, formats=formats)


def pipeline_config_from_mapping(doc: dict, base_dir: Optional[Path] = None) -> PipelineConfig:
    doc = _expect_mapping(doc, "pipeline config")
    raw_scenario = doc.get("scenario")
    if raw_scenario is None:
        raise ConfigError("missing required field 'scenario'")
    if isinstance(raw_scenario, str):
        path = Path(raw_scenario)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        scenario = read_scenario(path)
    else:
        scenario = script_from_mapping(_expect_mapping(raw_scenario, "scenario"))

    thr = _expect_mapping(doc.get("thresholds"), "thresholds")
    mode = thr.get("mode", "fixed")
    if mode not in ("fixed", "learn"):
        raise ConfigError(f"thresholds.mode: unknown mode '{mode}'")
    thresholds = ThresholdSettings(
        mode=mode,
        fixed={str(k): float(v) for k, v in _expect_mapping(thr.get("fixed"),
                                                            "thresholds.fixed").items()},
        learn_criteria=tuple(thr.get("learn_criteria", LEARNABLE_CRITERIA)),
        min_samples=int(thr.get("min_samples", 1000)),
    )

    kpis = _parse_kpis(doc.get("kpis"))
    seg = _expect_mapping(doc.get("segmentation"), "segmentation")
    cuts = _expect_mapping(doc.get("cuts"), "cuts")
    return PipelineConfig(
        scenario=scenario,
        machine_id=str(doc.get("machine_id", "M1")),
        monitor=_parse_monitor(_expect_mapping(doc.get("monitor"), "monitor")),
        segmentation=SegmentationSettings(max_idle_gap_s=float(seg.get("max_idle_gap_s", 5.0))),
        cuts=CutSettings(idle_power_w=float(cuts.get("idle_power_w", 500.0)),
                         margin_ratio=float(cuts.get("margin_ratio", 2.0))),
        thresholds=thresholds,
        metrics=_parse_metrics(doc.get("metrics")),
        kpis=kpis,
        report=_parse_report(doc.get("report"), kpis),
        chunk_blocks=int(doc.get("chunk_blocks", 64)),
        raw_dump=bool(doc.get("raw_dump", False)),
    )


def demo_config_mapping() -> dict:
    text = importlib.resources.files("spindlewatch.data").joinpath("demo_pipeline.yaml").read_text()
    return yaml.safe_load(text)


def load_pipeline_config(source) -> PipelineConfig:
    """Load a config from a path, from the literal name "demo", or a mapping."""
    if isinstance(source, dict):
        return pipeline_config_from_mapping(source)
    if str(source) == "demo":
        return pipeline_config_from_mapping(demo_config_mapping())
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"config file '{source}' does not exist")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"cannot parse config file{loc}: {exc}") from exc
    return pipeline_config_from_mapping(doc, base_dir=path.parent)
