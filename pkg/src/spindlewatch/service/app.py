"""FastAPI service wrapping the aggregation engine.

The service is bound to one workspace directory (store, reports, outbox).
Endpoints accept pipeline configurations inline, as the packaged "demo", or
as server-side paths; the CLI is a thin client of this API.
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException

from ..config import LEARNABLE_CRITERIA, PipelineConfig, load_pipeline_config
from ..errors import (
    ConfigError,
    KpiError,
    OperatorError,
    ScenarioError,
    SchemaError,
    ScopeError,
    SpindlewatchError,
    ThresholdLearningError,
    UnknownStreamError,
)
from ..kpi import instantiate
from ..models import ReportSpec
from ..pipeline import Workspace, generate_only, learn_thresholds_from_snapshot, run_pipeline
from ..report import build_report, dispatch_report
from ..scenario import read_scenario, script_from_mapping
from ..store import STREAMS, RecordStore
from . import schemas

_BAD_REQUEST = (ConfigError, ScenarioError, SchemaError, ScopeError, KpiError, OperatorError)

DEFAULT_WORKSPACE = "spindlewatch_out"


def _load_config(config: dict | None, config_name: str | None) -> PipelineConfig:
    if config is None and config_name is None:
        raise ConfigError("provide either an inline config or a config name")
    return load_pipeline_config(config if config is not None else config_name)


def create_app(workspace=None) -> FastAPI:
    ws = Workspace(workspace or os.environ.get("SPINDLEWATCH_WORKSPACE", DEFAULT_WORKSPACE))
    app = FastAPI(title="spindlewatch",
                  description="Multi-level aggregation engine for machining telemetry")
    app.state.workspace = ws

    @app.exception_handler(SpindlewatchError)
    async def _domain_error(request, exc: SpindlewatchError):
        from fastapi.responses import JSONResponse

        status = 400 if isinstance(exc, _BAD_REQUEST) else 500
        if isinstance(exc, UnknownStreamError):
            status = 404
        return JSONResponse(status_code=status,
                            content={"detail": f"{type(exc).__name__}: {exc}"})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", workspace=str(ws.root))

    @app.post("/scenario/validate", response_model=schemas.ScenarioValidateResponse)
    def validate_scenario(req: schemas.ScenarioValidateRequest):
        script = script_from_mapping(req.scenario)
        return schemas.ScenarioValidateResponse(valid=True, blocks=script.n_blocks,
                                                context_samples=script.n_blocks,
                                                anomalies=len(script.anomalies))

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        if req.scenario is not None:
            script = script_from_mapping(req.scenario)
        elif req.scenario_path is not None:
            script = read_scenario(req.scenario_path)
        else:
            raise ConfigError("provide a scenario or a scenario_path")
        if req.seed is not None:
            from dataclasses import replace

            script = replace(script, seed=req.seed)
        counts = generate_only(script, ws, raw_dump=req.raw_dump)
        return schemas.GenerateResponse(blocks=counts["blocks"],
                                        context_samples=counts["context_samples"],
                                        raw_rows=counts["raw_rows"])

    @app.post("/run", response_model=schemas.RunSummaryResponse)
    def run(req: schemas.RunRequest):
        config = _load_config(req.config, req.config_name)
        summary = run_pipeline(config, ws, seed=req.seed)
        return schemas.RunSummaryResponse(
            seed=summary.seed, blocks=summary.blocks,
            context_samples=summary.context_samples, periods=summary.periods,
            indicators=summary.indicators, stream_rows=summary.stream_rows,
            stream_bytes=summary.stream_bytes, report_paths=summary.report_paths,
            outbox_paths=summary.outbox_paths)

    @app.get("/stats", response_model=schemas.StatsResponse)
    def stats():
        with RecordStore(ws.store_dir) as store:
            return schemas.StatsResponse(streams={
                s: schemas.StreamStatsModel(rows=st.rows, bytes=st.bytes)
                for s, st in store.all_stats().items()})

    @app.get("/stats/{stream}", response_model=schemas.StreamStatsModel)
    def stream_stats(stream: str):
        if stream not in STREAMS:
            raise HTTPException(status_code=404, detail=f"unknown stream '{stream}'")
        with RecordStore(ws.store_dir) as store:
            st = store.stats(stream)
            return schemas.StreamStatsModel(rows=st.rows, bytes=st.bytes)

    @app.post("/thresholds/learn", response_model=schemas.LearnThresholdsResponse)
    def learn_thresholds(req: schemas.LearnThresholdsRequest):
        criteria = req.criteria or list(LEARNABLE_CRITERIA)
        with RecordStore(ws.store_dir) as store:
            if store.stats("monitoring").rows == 0:
                raise HTTPException(status_code=409,
                                    detail="no monitoring data in store; run or generate first")
            try:
                thresholds = learn_thresholds_from_snapshot(
                    store.snapshot("monitoring"), criteria, req.min_samples)
            except ThresholdLearningError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
            store.append("thresholds", thresholds)
        return schemas.LearnThresholdsResponse(thresholds=[
            schemas.ThresholdModel(criterion_id=t.criterion_id, value=t.value,
                                   provenance=t.provenance, learned_from=t.learned_from)
            for t in thresholds])

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest):
        config = _load_config(req.config, req.config_name)
        if config.report is None or not config.kpis:
            raise ConfigError("config declares no KPI models or report section")
        with RecordStore(ws.store_dir) as store:
            if store.stats("smart_data").rows == 0:
                raise HTTPException(status_code=409,
                                    detail="no smart data in store; run the pipeline first")
            data = store.snapshot("smart_data").rows()
            indicator = instantiate(config.report.context, list(config.kpis), data)
            store.append("indicators", [indicator])
        spec = ReportSpec(context=config.report.context, models=config.report.models,
                          output_dir=str(ws.reports_dir / indicator.indicator_id),
                          formats=config.report.formats)
        _, paths = build_report(spec, indicator,
                                {k.kpi_id: k.group_by for k in config.kpis})
        outbox_path = dispatch_report(paths, config.report.context.decider, ws.outbox_dir,
                                      subject=f"decision-aid report: {config.report.context.objective}")
        return schemas.ReportResponse(indicator_id=indicator.indicator_id,
                                      kpi_results=indicator.kpi_results,
                                      report_paths=paths, outbox_path=outbox_path)

    return app


app = create_app()
