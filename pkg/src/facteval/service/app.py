"""FastAPI application wrapping the evaluation engine.

The service is stateless: run state lives in the run directory on disk,
so any instance (or the in-process CLI client) can submit, resume, and
render runs interchangeably.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import (
    CorruptArtifactError,
    FactEvalError,
    FatalConfigError,
    InputRecordError,
    SourceUnavailableError,
)
from ..metrics import BudgetRecallRow
from ..model import RunReport
from ..reporting import emit_report_files, report_markdown
from ..runner import BUDGET_JSON, REPORT_JSON, PipelineEngine, RunConfig, Stage
from .schemas import (
    HealthResponse,
    ReportResponse,
    ResumeRequest,
    RunResponse,
    StageResponse,
)

logger = logging.getLogger(__name__)

# CLI subcommand spelling -> pipeline stage.
STAGE_ROUTES = {
    "generate": Stage.GENERATE,
    "retrieve": Stage.RETRIEVE,
    "build-refs": Stage.BUILD_REFS,
    "extract-claims": Stage.EXTRACT_CLAIMS,
    "judge": Stage.JUDGE,
    "score": Stage.SCORE,
}


def _http_error(exc: FactEvalError) -> HTTPException:
    if isinstance(exc, CorruptArtifactError):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, (FatalConfigError, InputRecordError, SourceUnavailableError)):
        return HTTPException(status_code=400, detail=str(exc))
    return HTTPException(status_code=422, detail=str(exc))


def create_app() -> FastAPI:
    app = FastAPI(title="facteval", version=__version__)

    @app.get("/healthz", response_model=HealthResponse)
    def healthz() -> HealthResponse:
        return HealthResponse(version=__version__)

    @app.post("/runs", response_model=RunResponse)
    def submit_run(config: RunConfig) -> RunResponse:
        try:
            engine = PipelineEngine(config)
            outcome = engine.run()
            files = emit_report_files(outcome.report, list(outcome.budget_rows),
                                      engine.run_dir)
        except FactEvalError as exc:
            raise _http_error(exc) from exc
        return RunResponse(
            run_id=outcome.run_id,
            run_dir=outcome.run_dir,
            status=outcome.status,
            failed_prompts=outcome.failed_prompts,
            report=outcome.report,
            budget_rows=list(outcome.budget_rows),
            files=files,
        )

    @app.post("/runs/resume", response_model=RunResponse)
    def resume_run(body: ResumeRequest) -> RunResponse:
        try:
            engine = PipelineEngine.resume(body.run_dir)
            outcome = engine.run()
            files = emit_report_files(outcome.report, list(outcome.budget_rows),
                                      engine.run_dir)
        except FactEvalError as exc:
            raise _http_error(exc) from exc
        return RunResponse(
            run_id=outcome.run_id,
            run_dir=outcome.run_dir,
            status=outcome.status,
            failed_prompts=outcome.failed_prompts,
            report=outcome.report,
            budget_rows=list(outcome.budget_rows),
            files=files,
        )

    @app.post("/runs/report", response_model=ReportResponse)
    def render_report(body: ResumeRequest) -> ReportResponse:
        run_dir = Path(body.run_dir)
        report_path = run_dir / REPORT_JSON
        if not report_path.exists():
            raise HTTPException(status_code=400,
                                detail=f"no {REPORT_JSON} under {run_dir}; run `score` first")
        report = RunReport.model_validate(json.loads(report_path.read_text(encoding="utf-8")))
        budget_path = run_dir / BUDGET_JSON
        rows = []
        if budget_path.exists():
            rows = [BudgetRecallRow.model_validate(r)
                    for r in json.loads(budget_path.read_text(encoding="utf-8"))]
        files = emit_report_files(report, rows, run_dir)
        return ReportResponse(
            run_dir=str(run_dir),
            files=files,
            markdown=report_markdown(report, rows),
            report=report,
        )

    @app.post("/stages/{stage_name}", response_model=StageResponse)
    def run_stage(stage_name: str, config: RunConfig) -> StageResponse:
        stage = STAGE_ROUTES.get(stage_name)
        if stage is None:
            raise HTTPException(status_code=404, detail=f"unknown stage '{stage_name}'")
        try:
            engine = PipelineEngine(config)
            engine.run_until(stage)
            if stage is Stage.SCORE:
                outcome = engine.finalize()
                emit_report_files(outcome.report, list(outcome.budget_rows), engine.run_dir)
            states = engine.states()
        except FactEvalError as exc:
            raise _http_error(exc) from exc
        return StageResponse(
            run_id=config.run_id,
            run_dir=str(engine.run_dir),
            stage=stage_name,
            status="partial" if engine.failed else "ok",
            failed_prompts=dict(engine.failed),
            states=states,
        )

    return app
