"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel

from ..metrics import BudgetRecallRow
from ..model import RunReport
from ..runner import PromptState


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class RunResponse(BaseModel):
    run_id: str
    run_dir: str
    status: str  # "ok" | "partial"
    failed_prompts: dict[str, str] = {}
    report: RunReport
    budget_rows: list[BudgetRecallRow] = []
    files: list[str] = []


class StageRequestPath(BaseModel):
    run_dir: str


class StageResponse(BaseModel):
    run_id: str
    run_dir: str
    stage: str
    status: str  # "ok" | "partial"
    failed_prompts: dict[str, str] = {}
    states: list[PromptState] = []


class ResumeRequest(BaseModel):
    run_dir: str


class ReportResponse(BaseModel):
    run_dir: str
    files: list[str]
    markdown: str
    status: str = "ok"
    report: Optional[RunReport] = None
