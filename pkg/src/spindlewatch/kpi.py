"""Level-3 processing: KPI models over smart data, decision-aid indicators.

A decision-aid indicator is the instantiation of a set of KPI models under
four context parameters: the objective of the decision, the decider role that
consumes it, the scope (entities and time range) and the instantiation mode
(periodic, on demand or on event).

A period that spans several programs or workpieces contributes its full
smart-data values to every one of them; there is no proration.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Iterable, Sequence

from .errors import KpiError, ScopeError
from .models import (
    BaselineSpec,
    DecisionAidIndicator,
    InstantiationContext,
    KpiModel,
    ModeSpec,
    ScopeFilter,
    SmartDatum,
)

AGGREGATIONS = ("sum", "mean", "weighted_sum", "weighted_mean", "baseline_comparison")
GROUP_KINDS = ("tool", "program", "workpiece", "machine")
MODE_KINDS = ("periodic", "on_demand", "on_event")


def validate_context(context: InstantiationContext) -> None:
    mode = context.mode
    if mode.kind not in MODE_KINDS:
        raise ScopeError(f"unknown instantiation mode '{mode.kind}'")
    if mode.kind == "periodic" and (mode.period_s is None or mode.period_s <= 0):
        raise ScopeError("periodic mode requires a positive period_s")
    if mode.kind == "on_event" and (mode.event_metric is None or mode.event_threshold is None):
        raise ScopeError("on_event mode requires event_metric and event_threshold")
    _check_scope(context.scope)


def _check_scope(scope: ScopeFilter) -> None:
    if (scope.time_start is not None and scope.time_end is not None
            and scope.time_end <= scope.time_start):
        raise ScopeError(
            f"empty time range [{scope.time_start}, {scope.time_end})")


def matches_scope(datum: SmartDatum, scope: ScopeFilter) -> bool:
    p = datum.period
    if scope.machine is not None and p.machine_id != scope.machine:
        return False
    if scope.tool is not None and p.tool_id != scope.tool:
        return False
    if scope.program is not None and scope.program not in p.programs:
        return False
    if scope.workpiece is not None and scope.workpiece not in p.workpieces:
        return False
    if scope.time_start is not None and p.t_i < scope.time_start:
        return False
    if scope.time_end is not None and p.t_i >= scope.time_end:
        return False
    return True


def select_scope(data: Iterable[SmartDatum], scope: ScopeFilter) -> list[SmartDatum]:
    """Smart data whose period matches every filter dimension."""
    _check_scope(scope)
    return [d for d in data if matches_scope(d, scope)]


def _entities(datum: SmartDatum, group_by: str) -> tuple[str, ...]:
    p = datum.period
    if group_by == "tool":
        return (p.tool_id,)
    if group_by == "machine":
        return (p.machine_id,)
    if group_by == "program":
        return p.programs
    if group_by == "workpiece":
        return p.workpieces
    raise KpiError(f"unknown group_by '{group_by}'")


def _group(data: Sequence[SmartDatum], metric_id: str, group_by: str) -> dict[str, list[float]]:
    groups: dict[str, list[float]] = {}
    for d in data:
        if d.metric_id != metric_id:
            continue
        for entity in _entities(d, group_by):
            groups.setdefault(entity, []).append(d.value)
    return groups


def _aggregate_groups(groups: dict[str, list[float]], aggregation: str,
                      weights) -> dict[str, float]:
    result: dict[str, float] = {}
    for entity in sorted(groups):
        values = groups[entity]
        if aggregation in ("weighted_sum", "weighted_mean"):
            if weights is None or entity not in weights:
                raise KpiError(f"missing weight for entity '{entity}'")
        if aggregation == "sum":
            result[entity] = math.fsum(values)
        elif aggregation == "mean":
            result[entity] = math.fsum(values) / len(values)
        elif aggregation == "weighted_sum":
            result[entity] = weights[entity] * math.fsum(values)
        elif aggregation == "weighted_mean":
            result[entity] = weights[entity] * (math.fsum(values) / len(values))
    return result


def evaluate_kpi(model: KpiModel, data: Sequence[SmartDatum]) -> dict[str, float]:
    """Group scope-filtered smart data by entity and aggregate per group."""
    if model.aggregation not in AGGREGATIONS:
        raise KpiError(f"kpi '{model.kpi_id}': unknown aggregation '{model.aggregation}'")
    groups = _group(data, model.source_metric, model.group_by)

    if model.aggregation != "baseline_comparison":
        return _aggregate_groups(groups, model.aggregation, model.weights)

    if model.baseline is None:
        raise KpiError(f"kpi '{model.kpi_id}': baseline_comparison requires a baseline")
    current = _aggregate_groups(groups, "mean", None)
    baseline = _baseline_values(model, data, current)
    result = {}
    for entity, value in current.items():
        ref = baseline.get(entity)
        if ref is None or ref == 0.0:
            continue        # no usual value to compare against
        result[entity] = value / ref
    return result


def _baseline_values(model: KpiModel, data: Sequence[SmartDatum],
                     current: dict[str, float]) -> dict[str, float]:
    spec: BaselineSpec = model.baseline
    if spec.kind == "fixed":
        if spec.value is None:
            raise KpiError(f"kpi '{model.kpi_id}': fixed baseline requires a value")
        return {entity: spec.value for entity in current}
    if spec.kind == "window":
        window = ScopeFilter(time_start=spec.time_start, time_end=spec.time_end)
        past = [d for d in data if matches_scope(d, window)]
        return _aggregate_groups(_group(past, model.source_metric, model.group_by), "mean", None)
    raise KpiError(f"kpi '{model.kpi_id}': unknown baseline kind '{spec.kind}'")


def _digest(data: Sequence[SmartDatum]) -> str:
    rows = sorted(
        (d.period.period_id, d.metric_id, d.operator, repr(d.value)) for d in data)
    blob = json.dumps(rows, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def instantiate(context: InstantiationContext, models: Sequence[KpiModel],
                data: Iterable[SmartDatum]) -> DecisionAidIndicator:
    """Evaluate every model over the scoped smart data and assemble the indicator.

    The result is fully determined by (data, models, context); computed_at is
    a scenario-clock timestamp, not wall time.
    """
    if not models:
        raise KpiError("instantiate requires at least one KPI model")
    validate_context(context)

    selected = select_scope(data, context.scope)
    results: dict[str, dict[str, float]] = {}
    for model in models:
        try:
            results[model.kpi_id] = evaluate_kpi(model, selected)
        except KpiError:
            raise
        except Exception as exc:
            raise KpiError(f"kpi '{model.kpi_id}': {exc}") from exc
    for kpi_id, mapping in results.items():
        for entity, value in mapping.items():
            if not math.isfinite(value):
                raise KpiError(f"kpi '{kpi_id}': non-finite value for entity '{entity}'")

    digest = _digest(selected)
    if context.scope.time_end is not None:
        computed_at = float(context.scope.time_end)
    else:
        computed_at = max((d.period.t_f for d in selected), default=0.0)
    return DecisionAidIndicator(
        indicator_id=f"ind-{digest[:12]}",
        context=context,
        kpi_results=results,
        computed_at=computed_at,
        inputs_digest=digest,
    )


def schedule_triggers(mode: ModeSpec, horizon: tuple[float, float] = (0.0, 0.0),
                      requests: Sequence[float] = (),
                      events: Iterable[SmartDatum] = ()) -> list[float]:
    """Instantiation trigger times for a mode over a scenario clock horizon.

    periodic   fires at whole multiples of the period inside the horizon
    on_demand  fires once per explicit request
    on_event   fires when a newly written smart datum crosses the configured
               threshold (at the datum's period end)
    """
    if mode.kind == "periodic":
        if mode.period_s is None or mode.period_s <= 0:
            raise ScopeError("periodic mode requires a positive period_s")
        t0, t1 = horizon
        triggers = []
        k = 1
        while t0 + k * mode.period_s <= t1 + 1e-9:
            triggers.append(t0 + k * mode.period_s)
            k += 1
        return triggers
    if mode.kind == "on_demand":
        return [float(t) for t in requests]
    if mode.kind == "on_event":
        if mode.event_metric is None or mode.event_threshold is None:
            raise ScopeError("on_event mode requires event_metric and event_threshold")
        return [d.period.t_f for d in events
                if d.metric_id == mode.event_metric and d.value > mode.event_threshold]
    raise ScopeError(f"unknown instantiation mode '{mode.kind}'")
