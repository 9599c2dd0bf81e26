"""Agent-style pipeline: generator -> monitor -> aggregate -> KPI -> report.

Four logical agents mirror the roles of the demonstrator architecture:

  hmi           drives a run from the configuration (the caller's thread)
  traceability  owns the record store; all reads and writes go through it
  computing     signal generation, monitoring, aggregation and KPI evaluation
  reporting     report rendering and outbox dispatch

Workers communicate exclusively through bounded message queues; stage
implementations never call each other directly, and every request receives
exactly one result message carrying its correlation id (errors travel as
results with an "error" payload). Message ids are sequential, so a run is
deterministic for a fixed configuration and seed.
"""

from __future__ import annotations

import itertools
import queue
import threading
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .aggregation import compute_smart_data, learn_threshold, segment_periods
from .config import PipelineConfig
from .errors import PipelineError, SpindlewatchError, ThresholdLearningError
from .kpi import instantiate
from .models import (
    AgentMessage,
    MonitoringRecord,
    ReportSpec,
    RunSummary,
    SignalBlock,
    Threshold,
)
from .monitoring import MonitorSettings, process_chunk
from .report import build_report, dispatch_report
from .scenario import ScenarioScript, resolve_script
from .signals import _generate_chunk, iter_context
from .store import RecordStore, RowFilter

AGENT_NAMES = ("hmi", "traceability", "computing", "reporting")
_STOP = object()


class Workspace:
    """Directory layout for one deployment: store, reports and outbox."""

    def __init__(self, root):
        self.root = Path(root)
        self.store_dir = self.root / "store"
        self.reports_dir = self.root / "reports"
        self.outbox_dir = self.root / "outbox"

    def ensure(self) -> "Workspace":
        self.root.mkdir(parents=True, exist_ok=True)
        return self


class MessageBus:
    def __init__(self, maxsize: int = 16, keep_trace: bool = False):
        self.queues: dict[str, queue.Queue] = {name: queue.Queue(maxsize=maxsize)
                                               for name in AGENT_NAMES}
        self._counter = itertools.count(1)
        self._lock = threading.Lock()
        self.trace: Optional[list[AgentMessage]] = [] if keep_trace else None

    def post(self, from_agent: str, to_agent: str, kind: str, payload: dict,
             correlation_id: Optional[int] = None) -> AgentMessage:
        with self._lock:
            msg = AgentMessage(msg_id=next(self._counter), from_agent=from_agent,
                               to_agent=to_agent, kind=kind, payload=payload,
                               correlation_id=correlation_id)
            if self.trace is not None:
                self.trace.append(msg)
        self.queues[to_agent].put(msg)
        return msg

    def request(self, from_agent: str, to_agent: str, payload: dict) -> dict:
        """Send a request and block until its result message arrives."""
        sent = self.post(from_agent, to_agent, "request", payload)
        while True:
            msg = self.queues[from_agent].get()
            if msg is _STOP:
                raise PipelineError(f"agent '{from_agent}' stopped while awaiting a result")
            if msg.kind == "result" and msg.correlation_id == sent.msg_id:
                if "error" in msg.payload:
                    raise PipelineError(
                        f"stage '{payload.get('op')}' failed in agent '{to_agent}': "
                        f"{msg.payload['error']}")
                return msg.payload
            # Events are informational; anything else here is a wiring bug.
            if msg.kind != "event":
                raise PipelineError(
                    f"agent '{from_agent}' received unexpected {msg.kind} message")


class Agent(threading.Thread):
    """Worker owning its state, reachable only through its inbox queue."""

    name_label = "agent"

    def __init__(self, bus: MessageBus):
        super().__init__(name=f"{self.name_label}-agent", daemon=True)
        self.bus = bus

    def run(self) -> None:
        inbox = self.bus.queues[self.name_label]
        while True:
            msg = inbox.get()
            if msg is _STOP:
                break
            if msg.kind != "request":
                continue
            op = msg.payload.get("op", "?")
            try:
                result = self.handle(op, msg.payload)
                payload = {"op": op, **(result or {})}
            except Exception as exc:
                detail = f"{type(exc).__name__}: {exc}"
                if not isinstance(exc, SpindlewatchError):
                    detail += "\n" + traceback.format_exc()
                payload = {"op": op, "error": detail}
            self.bus.post(self.name_label, msg.from_agent, "result", payload,
                          correlation_id=msg.msg_id)

    def handle(self, op: str, payload: dict) -> dict:
        raise NotImplementedError

    def stop(self) -> None:
        self.bus.queues[self.name_label].put(_STOP)
        self.join(timeout=60)


class TraceabilityAgent(Agent):
    """Manages the connection to the record store; its sole owner."""

    name_label = "traceability"

    def __init__(self, bus: MessageBus, store: RecordStore):
        super().__init__(bus)
        self.store = store

    def handle(self, op: str, payload: dict) -> dict:
        if op == "append":
            written = self.store.append(payload["stream"], payload["rows"])
            return {"written": written}
        if op == "snapshot":
            snap = self.store.snapshot(payload["stream"], payload.get("where"))
            return {"snapshot": snap}
        if op == "stats":
            stats = self.store.all_stats()
            return {"rows": {s: st.rows for s, st in stats.items()},
                    "bytes": {s: st.bytes for s, st in stats.items()}}
        raise PipelineError(f"traceability: unknown op '{op}'")


class ComputingAgent(Agent):
    """Runs the numeric stages; persists results via the traceability agent."""

    name_label = "computing"

    def _append(self, stream: str, rows) -> int:
        result = self.bus.request(self.name_label, "traceability",
                                  {"op": "append", "stream": stream, "rows": rows})
        return result["written"]

    def _snapshot(self, stream: str, where=None):
        result = self.bus.request(self.name_label, "traceability",
                                  {"op": "snapshot", "stream": stream, "where": where})
        return result["snapshot"]

    def handle(self, op: str, payload: dict) -> dict:
        if op == "monitor_scenario":
            return self._monitor_scenario(**{k: payload[k] for k in
                                             ("scenario", "settings", "chunk_blocks", "raw_dump")})
        if op == "learn_thresholds":
            thresholds = learn_thresholds_from_snapshot(
                self._snapshot("monitoring"), payload["criteria"], payload["min_samples"])
            self._append("thresholds", thresholds)
            return {"thresholds": thresholds}
        if op == "store_thresholds":
            self._append("thresholds", payload["thresholds"])
            return {"thresholds": payload["thresholds"]}
        if op == "aggregate":
            return self._aggregate(payload)
        if op == "evaluate_kpis":
            data = list(self._snapshot("smart_data"))
            indicator = instantiate(payload["context"], payload["models"], data)
            self._append("indicators", [indicator])
            return {"indicator": indicator}
        raise PipelineError(f"computing: unknown op '{op}'")

    def _monitor_scenario(self, scenario: ScenarioScript, settings: MonitorSettings,
                          chunk_blocks: int, raw_dump: bool) -> dict:
        scenario = resolve_script(scenario)
        n = scenario.n_blocks
        contexts = iter_context(scenario)
        records_written = 0
        for b0 in range(0, n, chunk_blocks):
            b1 = min(b0 + chunk_blocks, n)
            channels, power = _generate_chunk(scenario, b0, b1)
            times = [b * 0.1 for b in range(b0, b1)]
            ctxs = [next(contexts) for _ in range(b1 - b0)]
            records = process_chunk(channels, power, times, ctxs, settings)
            records_written += self._append("monitoring", records)
            if raw_dump:
                raw_rows = [SignalBlock(block_index=b, start_time=b * 0.1,
                                        channels=channels[i], power=power[i])
                            for i, b in enumerate(range(b0, b1))]
                self._append("signal_debug", raw_rows)
        return {"blocks": n, "records": records_written, "context_samples": n}

    def _aggregate(self, payload: dict) -> dict:
        machine_id = payload["machine_id"]
        segmentation = payload["segmentation"]
        cuts = payload["cuts"]
        metrics = payload["metrics"]
        thresholds = payload["thresholds"]

        periods = segment_periods(self._snapshot("monitoring"), machine_id, segmentation)
        smart_rows = 0
        # Stream the records once more, slicing out each period's window.
        snapshot = self._snapshot("monitoring")
        record_iter = iter(snapshot)
        buffered: list[MonitoringRecord] = []
        exhausted = False
        for period in periods:
            while not exhausted and (not buffered or buffered[-1].time < period.t_f - 1e-9):
                try:
                    buffered.append(next(record_iter))
                except StopIteration:
                    exhausted = True
            in_window = [r for r in buffered if period.t_i - 1e-9 <= r.time <= period.t_f + 1e-9]
            data = compute_smart_data(period, in_window, thresholds, metrics, cuts)
            if data:
                smart_rows += self._append("smart_data", data)
            buffered = [r for r in buffered if r.time > period.t_f + 1e-9]
        return {"periods": len(periods), "smart_rows": smart_rows,
                "period_list": periods}


class ReportingAgent(Agent):
    """Defines and shares reports according to the instantiation parameters."""

    name_label = "reporting"

    def handle(self, op: str, payload: dict) -> dict:
        if op == "build_report":
            report, paths = build_report(payload["spec"], payload["indicator"],
                                         payload.get("kpi_group_by"))
            return {"report": report, "paths": paths}
        if op == "dispatch":
            path = dispatch_report(payload["paths"], payload["decider"],
                                   payload["outbox_dir"], payload["subject"])
            return {"outbox_path": path}
        raise PipelineError(f"reporting: unknown op '{op}'")


def learn_thresholds_from_snapshot(snapshot, criteria, min_samples: int) -> list[Threshold]:
    """Pool the fused criterion series over all records and learn each threshold."""
    from .aggregation import fuse_records

    records = list(snapshot)
    if not records:
        raise ThresholdLearningError("no monitoring data to learn thresholds from")
    thresholds = []
    for criterion in criteria:
        values = fuse_records(records, criterion)
        thresholds.append(learn_threshold(values, criterion, min_samples))
    return thresholds


def configured_thresholds(fixed: dict) -> list[Threshold]:
    return [Threshold(criterion_id=k, value=float(v), provenance="configured",
                      learned_from="pipeline config")
            for k, v in sorted(fixed.items())]


def run_pipeline(config: PipelineConfig, workspace, seed: Optional[int] = None,
                 keep_trace: bool = False) -> RunSummary:
    """Execute all stages to completion; deterministic for a fixed config and seed.

    A stage failure aborts the run with the failing agent named; whatever was
    appended before the failure remains valid in the store.
    """
    ws = workspace if isinstance(workspace, Workspace) else Workspace(workspace)
    ws.ensure()
    scenario = config.scenario if seed is None else replace(config.scenario, seed=seed)

    bus = MessageBus(keep_trace=keep_trace)
    store = RecordStore(ws.store_dir)
    traceability = TraceabilityAgent(bus, store)
    computing = ComputingAgent(bus)
    reporting = ReportingAgent(bus)
    for agent in (traceability, computing, reporting):
        agent.start()

    summary = RunSummary(seed=scenario.seed, blocks=0, context_samples=0,
                         periods=0, indicators=0)
    try:
        monitored = bus.request("hmi", "computing", {
            "op": "monitor_scenario", "scenario": scenario, "settings": config.monitor,
            "chunk_blocks": config.chunk_blocks, "raw_dump": config.raw_dump,
        })
        summary.blocks = monitored["blocks"]
        summary.context_samples = monitored["context_samples"]

        if monitored["records"] > 0:
            if config.thresholds.mode == "learn":
                learned = bus.request("hmi", "computing", {
                    "op": "learn_thresholds", "criteria": config.thresholds.learn_criteria,
                    "min_samples": config.thresholds.min_samples,
                })
                thresholds = {t.criterion_id: t for t in learned["thresholds"]}
            else:
                rows = configured_thresholds(config.thresholds.fixed)
                stored = bus.request("hmi", "computing",
                                     {"op": "store_thresholds", "thresholds": rows})
                thresholds = {t.criterion_id: t for t in stored["thresholds"]}

            aggregated = bus.request("hmi", "computing", {
                "op": "aggregate", "machine_id": config.machine_id,
                "segmentation": config.segmentation, "cuts": config.cuts,
                "metrics": config.metrics, "thresholds": thresholds,
            })
            summary.periods = aggregated["periods"]

            if config.report is not None and config.kpis:
                evaluated = bus.request("hmi", "computing", {
                    "op": "evaluate_kpis", "context": config.report.context,
                    "models": list(config.kpis),
                })
                indicator = evaluated["indicator"]
                summary.indicators = 1

                spec = ReportSpec(
                    context=config.report.context, models=config.report.models,
                    output_dir=str(ws.reports_dir / indicator.indicator_id),
                    formats=config.report.formats,
                )
                built = bus.request("hmi", "reporting", {
                    "op": "build_report", "spec": spec, "indicator": indicator,
                    "kpi_group_by": {k.kpi_id: k.group_by for k in config.kpis},
                })
                summary.report_paths = built["paths"]
                dispatched = bus.request("hmi", "reporting", {
                    "op": "dispatch", "paths": built["paths"],
                    "decider": config.report.context.decider,
                    "outbox_dir": ws.outbox_dir,
                    "subject": f"decision-aid report: {config.report.context.objective}",
                })
                summary.outbox_paths = [dispatched["outbox_path"]]

        stats = bus.request("hmi", "traceability", {"op": "stats"})
        summary.stream_rows = stats["rows"]
        summary.stream_bytes = stats["bytes"]
    finally:
        # Producers drain before the store owner so nobody awaits a dead agent.
        for agent in (computing, reporting, traceability):
            agent.stop()
        store.close()

    if keep_trace:
        summary.trace = bus.trace       # inspection hook, not part of the summary
    return summary


def generate_only(scenario: ScenarioScript, workspace, raw_dump: bool = False,
                  chunk_blocks: int = 64) -> dict:
    """Run only the generator, persisting the context stream (and optionally
    the raw signal dump) to the store; returns row counts."""
    ws = workspace if isinstance(workspace, Workspace) else Workspace(workspace)
    ws.ensure()
    scenario = resolve_script(scenario)
    with RecordStore(ws.store_dir) as store:
        contexts = list(iter_context(scenario))
        store.append("context", contexts)
        blocks = 0
        if raw_dump:
            n = scenario.n_blocks
            for b0 in range(0, n, chunk_blocks):
                b1 = min(b0 + chunk_blocks, n)
                channels, power = _generate_chunk(scenario, b0, b1)
                rows = [SignalBlock(block_index=b, start_time=b * 0.1,
                                    channels=channels[i], power=power[i])
                        for i, b in enumerate(range(b0, b1))]
                blocks += store.append("signal_debug", rows)
        else:
            blocks = scenario.n_blocks
        return {"blocks": blocks, "context_samples": len(contexts),
                "raw_rows": store.stats("signal_debug").rows}
