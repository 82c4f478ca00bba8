"""Request/response bodies for the experiment service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class ExperimentRequest(BaseModel):
    config_text: str = Field(description="full config file contents")
    seed: Optional[int] = None
    steps: Optional[int] = Field(default=None, ge=0)
    out: Optional[str] = Field(default=None, description="output dir override")


class ExperimentCreated(BaseModel):
    id: str
    status: str
    out_dir: str


class ExperimentStatus(BaseModel):
    id: str
    status: Literal["queued", "running", "done", "failed"]
    step: int
    total_steps: int
    out_dir: str
    error: Optional[str] = None


class ReportResponse(BaseModel):
    id: str
    payload: dict


class CompareRequest(BaseModel):
    reports: list[dict] = Field(description="parsed report.json payloads")
    format: Literal["markdown", "csv"] = "markdown"


class CompareResponse(BaseModel):
    table: str
    warnings: list[str]


class HealthResponse(BaseModel):
    status: Literal["ok"]
    version: str
