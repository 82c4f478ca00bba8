"""FastAPI app exposing experiment submission, polling, and comparison."""

from __future__ import annotations

import os

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import apply_overrides, parse_config
from ..errors import ValidationError
from ..experiment import compare_payloads
from .jobs import JobManager
from .schemas import (CompareRequest, CompareResponse, ExperimentCreated,
                      ExperimentRequest, ExperimentStatus, HealthResponse,
                      ReportResponse)

OUT_ROOT_ENV = "CDGAN_OUT_ROOT"


def create_app(manager: JobManager | None = None) -> FastAPI:
    app = FastAPI(title="cdgan-lab", version=__version__)
    jobs = manager if manager is not None else JobManager()
    app.state.jobs = jobs

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/experiments", response_model=ExperimentCreated, status_code=202)
    def create_experiment(req: ExperimentRequest) -> ExperimentCreated:
        try:
            cfg = parse_config(req.config_text, where="<request>")
            cfg = apply_overrides(cfg, seed=req.seed, steps=req.steps,
                                  out=req.out, out_root=os.environ.get(OUT_ROOT_ENV))
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        job = jobs.submit(cfg)
        return ExperimentCreated(id=job.id, status=job.status,
                                 out_dir=cfg.out_dir)

    @app.get("/experiments/{job_id}", response_model=ExperimentStatus)
    def experiment_status(job_id: str) -> ExperimentStatus:
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no such experiment: {job_id}")
        return ExperimentStatus(**job.snapshot())

    @app.get("/experiments/{job_id}/report", response_model=ReportResponse)
    def experiment_report(job_id: str) -> ReportResponse:
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no such experiment: {job_id}")
        snap = job.snapshot()
        if snap["status"] == "failed":
            raise HTTPException(status_code=409,
                                detail=f"experiment failed: {snap['error']}")
        if snap["status"] != "done":
            raise HTTPException(status_code=409,
                                detail=f"experiment still {snap['status']}")
        return ReportResponse(id=job.id, payload=job.payload)

    @app.post("/compare", response_model=CompareResponse)
    def compare_reports(req: CompareRequest) -> CompareResponse:
        try:
            table, warnings = compare_payloads(req.reports, fmt=req.format)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return CompareResponse(table=table, warnings=warnings)

    return app
