"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    workspace: str


class ScenarioValidateRequest(BaseModel):
    scenario: dict


class ScenarioValidateResponse(BaseModel):
    valid: bool
    blocks: int
    context_samples: int
    anomalies: int


class GenerateRequest(BaseModel):
    scenario: Optional[dict] = None
    scenario_path: Optional[str] = None
    seed: Optional[int] = None
    raw_dump: bool = False


class GenerateResponse(BaseModel):
    blocks: int
    context_samples: int
    raw_rows: int


class RunRequest(BaseModel):
    config: Optional[dict] = None
    config_name: Optional[str] = None       # "demo" or a server-side path
    seed: Optional[int] = None


class RunSummaryResponse(BaseModel):
    seed: int
    blocks: int
    context_samples: int
    periods: int
    indicators: int
    stream_rows: dict[str, int]
    stream_bytes: dict[str, int]
    report_paths: list[str] = Field(default_factory=list)
    outbox_paths: list[str] = Field(default_factory=list)


class StreamStatsModel(BaseModel):
    rows: int
    bytes: int


class StatsResponse(BaseModel):
    streams: dict[str, StreamStatsModel]


class LearnThresholdsRequest(BaseModel):
    criteria: Optional[list[str]] = None
    min_samples: int = 1000


class ThresholdModel(BaseModel):
    criterion_id: str
    value: float
    provenance: str
    learned_from: str


class LearnThresholdsResponse(BaseModel):
    thresholds: list[ThresholdModel]


class ReportRequest(BaseModel):
    config: Optional[dict] = None
    config_name: Optional[str] = None


class ReportResponse(BaseModel):
    indicator_id: str
    kpi_results: dict[str, dict[str, float]]
    report_paths: list[str]
    outbox_path: str
