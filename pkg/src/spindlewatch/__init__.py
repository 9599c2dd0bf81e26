"""spindlewatch: multi-level aggregation for machine-tool spindle telemetry.

Synthetic 25 kHz spindle signals are reduced to 0.1 s monitoring criteria
(order-tracked spectra, vibration levels), aggregated per tool usage period
into smart data via threshold-exceedance operators, and rolled up into KPIs
and decision-aid reports.
"""

from .models import (
    ContextSample,
    CriterionSeries,
    DecisionAidIndicator,
    InstantiationContext,
    KpiModel,
    MonitoringRecord,
    ScopeFilter,
    SignalBlock,
    SmartDatum,
    Threshold,
    ToolUsagePeriod,
)

__version__ = "0.1.0"

__all__ = [
    "ContextSample",
    "CriterionSeries",
    "DecisionAidIndicator",
    "InstantiationContext",
    "KpiModel",
    "MonitoringRecord",
    "ScopeFilter",
    "SignalBlock",
    "SmartDatum",
    "Threshold",
    "ToolUsagePeriod",
    "__version__",
]
