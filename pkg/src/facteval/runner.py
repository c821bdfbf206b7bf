"""Pipeline orchestration: run configuration, stage execution, resume.

Every stage persists one JSON line per prompt into its artifact file
under {output_dir}/{run_id}/. Stage files are append-only; a prompt
whose line already exists is never recomputed, which makes `run` on a
populated directory equivalent to `resume`. Failures are isolated per
prompt: the prompt drops out of later stages and is reported, while the
rest of the run completes.
"""

from __future__ import annotations

import enum
import json
import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator

from . import claims as claims_mod
from . import judge as judge_mod
from . import metrics as metrics_mod
from . import prompts as prompts_mod
from . import reference as reference_mod
from .errors import CorruptArtifactError, EmptyResponseError, FatalConfigError
from .gateway import (
    ChatRequest,
    LLMGateway,
    MockBackend,
    OpenAICompatBackend,
    RequestTag,
    ResponseCache,
    RetryPolicy,
)
from .model import (
    AtomicClaim,
    AtomicFact,
    ClaimVerdict,
    EvalPrompt,
    EvidenceDoc,
    EvidenceSet,
    FactCoverage,
    FrozenModel,
    ImportanceConfig,
    PromptMetrics,
    ReferenceSet,
    RunReport,
    SelectionRule,
    append_jsonl,
    canonical_dumps,
    load_prompts,
    read_jsonl,
)
from .reference import DedupConfig
from .retrieval import KnowledgeSource, KnowledgeSourceConfig, chunk_documents

logger = logging.getLogger(__name__)


class GatewayConfig(BaseModel):
    """Backend and model selection; mock_script activates the scripted mock."""

    generator_model: str = "generator"
    extractor_model: str = "extractor"
    judge_model: str = "judge"
    embedding_model: str = "embedder"
    base_url: Optional[str] = None
    mock_script: Optional[str] = None
    generate_temperature: float = Field(default=0.7, ge=0.0)
    generate_max_tokens: int = Field(default=2048, gt=0)
    extract_max_tokens: int = Field(default=1024, gt=0)
    judge_max_tokens: int = Field(default=512, gt=0)
    importance_max_tokens: int = Field(default=2048, gt=0)
    retry_attempts: int = Field(default=3, ge=1)
    retry_base_delay: float = Field(default=0.5, ge=0.0)
    retry_max_delay: float = Field(default=8.0, ge=0.0)
    retry_jitter: float = Field(default=0.1, ge=0.0)
    max_in_flight: int = Field(default=4, ge=1)
    timeout: float = Field(default=60.0, gt=0.0)


class CacheConfig(BaseModel):
    root: str = ".facteval_cache"
    namespace: Optional[str] = None
    shared: bool = False


class RunConfig(BaseModel):
    """Full effective configuration for one evaluation run."""

    run_id: str
    prompts_path: str
    output_dir: str
    knowledge: KnowledgeSourceConfig
    importance: ImportanceConfig = ImportanceConfig()
    selection: SelectionRule = SelectionRule()
    dedup: DedupConfig = DedupConfig()
    gateway: GatewayConfig = GatewayConfig()
    cache: CacheConfig = CacheConfig()
    concurrency: int = Field(default=4, ge=1)
    importance_batch_size: int = Field(default=40, ge=1)
    claim_window_before: int = Field(default=1, ge=0)
    claim_window_after: int = Field(default=1, ge=0)
    evidence_char_budget: int = Field(default=24000, gt=0)
    generate_missing_responses: bool = True

    @field_validator("run_id")
    @classmethod
    def _fs_safe(cls, value: str) -> str:
        if not value or any(c in value for c in "/\\\0 \t\n") or value in (".", ".."):
            raise ValueError("run_id must be a non-empty filesystem-safe name")
        return value

    def cache_namespace(self) -> str:
        if self.cache.namespace:
            return self.cache.namespace
        return "shared" if self.cache.shared else self.run_id


class Stage(str, enum.Enum):
    GENERATE = "generate"
    RETRIEVE = "retrieve"
    BUILD_REFS = "build_refs"
    EXTRACT_CLAIMS = "extract_claims"
    JUDGE = "judge"
    SCORE = "score"


STAGE_ORDER = tuple(Stage)

STAGE_FILES = {
    Stage.GENERATE: "responses.jsonl",
    Stage.RETRIEVE: "evidence.jsonl",
    Stage.BUILD_REFS: "facts.jsonl",
    Stage.EXTRACT_CLAIMS: "claims.jsonl",
    Stage.JUDGE: "verdicts.jsonl",  # plus coverage.jsonl, written together
    Stage.SCORE: "metrics.jsonl",
}

REPORT_JSON = "report.json"
BUDGET_JSON = "budget_recall.json"
STATE_FILE = "state.jsonl"

# Schema checks applied when loading stage artifacts, so resume surfaces a
# precise CorruptArtifact instead of judging garbage downstream.
_RECORD_CHECKS: dict[str, Callable[[dict], object]] = {
    "responses.jsonl": lambda rec: rec["response"] + "",
    "evidence.jsonl": lambda rec: [EvidenceDoc(**d) for d in rec["docs"]],
    "facts.jsonl": lambda rec: [AtomicFact(**f) for f in rec["facts"]],
    "claims.jsonl": lambda rec: [AtomicClaim(**c) for c in rec["claims"]],
    "verdicts.jsonl": lambda rec: [ClaimVerdict(**v) for v in rec["verdicts"]],
    "coverage.jsonl": lambda rec: [FactCoverage(**c) for c in rec["coverage"]],
    "metrics.jsonl": lambda rec: PromptMetrics(**rec),
}


class PromptStage(str, enum.Enum):
    PENDING = "Pending"
    RETRIEVED = "Retrieved"
    FACTS_BUILT = "FactsBuilt"
    CLAIMS_BUILT = "ClaimsBuilt"
    JUDGED = "Judged"
    SCORED = "Scored"
    FAILED = "Failed"


class PromptState(FrozenModel):
    prompt_id: str
    stage: PromptStage
    failure_reason: Optional[str] = None


class RunOutcome(BaseModel):
    run_id: str
    run_dir: str
    report: RunReport
    budget_rows: tuple[metrics_mod.BudgetRecallRow, ...] = ()
    failed_prompts: dict[str, str] = {}

    @property
    def status(self) -> str:
        return "partial" if self.failed_prompts else "ok"

    @property
    def exit_code(self) -> int:
        return 2 if self.failed_prompts else 0


def build_gateway(config: RunConfig) -> LLMGateway:
    g = config.gateway
    if g.mock_script:
        script_path = Path(g.mock_script)
        if not script_path.exists():
            raise FatalConfigError(f"mock script not found: {script_path}")
        backend = MockBackend.from_file(script_path)
    else:
        backend = OpenAICompatBackend(base_url=g.base_url, timeout=g.timeout)
    cache = ResponseCache(Path(config.cache.root), config.cache_namespace())
    retry = RetryPolicy(attempts=g.retry_attempts, base_delay=g.retry_base_delay,
                        max_delay=g.retry_max_delay, jitter=g.retry_jitter)
    return LLMGateway(backend, cache, max_in_flight=g.max_in_flight, retry=retry)


class PipelineEngine:
    """Executes pipeline stages for one run directory."""

    def __init__(self, config: RunConfig):
        self.config = config
        prompts_path = Path(config.prompts_path)
        if not prompts_path.exists():
            raise FatalConfigError(f"prompts file not found: {prompts_path}")
        self.run_dir = Path(config.output_dir) / config.run_id
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._persist_config()
        self.prompts: list[EvalPrompt] = load_prompts(prompts_path)
        self.gateway = build_gateway(config)
        self.failed: dict[str, str] = {}
        self._source: Optional[KnowledgeSource] = None
        self._records: dict[str, dict[str, dict[str, Any]]] = {}

    # -- configuration ---------------------------------------------------

    def _persist_config(self) -> None:
        path = self.run_dir / "config.json"
        snapshot = canonical_dumps(self.config.model_dump(mode="json"))
        if path.exists():
            if path.read_text(encoding="utf-8").strip() != snapshot:
                raise FatalConfigError(
                    f"run dir {self.run_dir} was created with a different configuration; "
                    "use a new run_id or resume with the stored config"
                )
            return
        path.write_text(snapshot + "\n", encoding="utf-8")

    @classmethod
    def resume(cls, run_dir: Path | str) -> "PipelineEngine":
        """Rebuild an engine from a run directory's stored configuration."""
        path = Path(run_dir) / "config.json"
        if not path.exists():
            raise FatalConfigError(f"no config.json under {run_dir}")
        try:
            config = RunConfig.model_validate(json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise FatalConfigError(f"unusable config.json under {run_dir}: {exc}") from exc
        return cls(config)

    # -- artifact access -------------------------------------------------

    def _artifact_path(self, name: str) -> Path:
        return self.run_dir / name

    def _load_records(self, name: str) -> dict[str, dict[str, Any]]:
        if name in self._records:
            return self._records[name]
        records: dict[str, dict[str, Any]] = {}
        path = self._artifact_path(name)
        check = _RECORD_CHECKS.get(name)
        if path.exists():
            for line_no, rec in read_jsonl(path):
                pid = rec.get("prompt_id")
                if not pid:
                    raise CorruptArtifactError(str(path), line_no, "record lacks prompt_id")
                if check is not None:
                    try:
                        check(rec)
                    except Exception as exc:
                        raise CorruptArtifactError(str(path), line_no, str(exc)) from exc
                records[pid] = rec
        self._records[name] = records
        return records

    def _append_record(self, name: str, record: dict[str, Any]) -> None:
        append_jsonl(self._artifact_path(name), record)
        self._load_records(name)[record["prompt_id"]] = record

    def _mark_failed(self, prompt_id: str, stage: Stage, reason: str) -> None:
        logger.error("prompt %s failed at %s: %s", prompt_id, stage.value, reason)
        self.failed[prompt_id] = reason
        append_jsonl(self._artifact_path(STATE_FILE), {
            "prompt_id": prompt_id, "stage": stage.value,
            "status": "failed", "reason": reason,
        })

    # -- execution -------------------------------------------------------

    def run_until(self, last: Stage) -> None:
        for stage in STAGE_ORDER:
            self._run_stage(stage)
            if stage is last:
                break

    def run(self) -> RunOutcome:
        """Execute all stages and emit the report files."""
        self.run_until(Stage.SCORE)
        return self.finalize()

    def _run_stage(self, stage: Stage) -> None:
        if stage is Stage.SCORE:
            self._stage_score()
            return
        handler: Callable[[EvalPrompt], dict[str, Any] | list[dict[str, Any]]] = {
            Stage.GENERATE: self._do_generate,
            Stage.RETRIEVE: self._do_retrieve,
            Stage.BUILD_REFS: self._do_build_refs,
            Stage.EXTRACT_CLAIMS: self._do_extract_claims,
            Stage.JUDGE: self._do_judge,
        }[stage]
        done = set(self._load_records(STAGE_FILES[stage]))
        if stage is Stage.JUDGE:
            done &= set(self._load_records("coverage.jsonl"))
        todo = [p for p in self.prompts
                if p.prompt_id not in done and p.prompt_id not in self.failed]
        if not todo:
            return
        results: dict[str, Any] = {}
        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            futures = {p.prompt_id: pool.submit(self._guarded, handler, p) for p in todo}
        for p in todo:
            results[p.prompt_id] = futures[p.prompt_id].result()
        # Persist in input order so artifact files are deterministic.
        for p in self.prompts:
            outcome = results.get(p.prompt_id)
            if outcome is None:
                continue
            if isinstance(outcome, _Failure):
                self._mark_failed(p.prompt_id, stage, outcome.reason)
            elif stage is Stage.JUDGE:
                verdict_rec, coverage_rec = outcome
                self._append_record("verdicts.jsonl", verdict_rec)
                self._append_record("coverage.jsonl", coverage_rec)
            else:
                self._append_record(STAGE_FILES[stage], outcome)

    def _guarded(self, handler: Callable, prompt: EvalPrompt):
        try:
            return handler(prompt)
        except Exception as exc:  # per-prompt isolation: the run must finish
            logger.debug("prompt %s stage error:\n%s", prompt.prompt_id, traceback.format_exc())
            return _Failure(f"{type(exc).__name__}: {exc}")

    # -- stage bodies ----------------------------------------------------

    def _do_generate(self, prompt: EvalPrompt) -> dict[str, Any]:
        if prompt.response and prompt.response.strip():
            return {"prompt_id": prompt.prompt_id, "response": prompt.response,
                    "generated": False}
        if not self.config.generate_missing_responses:
            raise EmptyResponseError("response missing and generation disabled")
        g = self.config.gateway
        reply = self.gateway.chat(ChatRequest(
            model_name=g.generator_model,
            user_text=prompt.query,
            temperature=g.generate_temperature,
            max_tokens=g.generate_max_tokens,
            request_tag=RequestTag.GENERATE,
        ))
        return {"prompt_id": prompt.prompt_id, "response": reply.text, "generated": True}

    def _source_or_init(self) -> KnowledgeSource:
        if self._source is None:
            self._source = KnowledgeSource(self.config.knowledge)
        return self._source

    def _do_retrieve(self, prompt: EvalPrompt) -> dict[str, Any]:
        evidence = self._source_or_init().retrieve(prompt.prompt_id, prompt.query)
        return {"prompt_id": prompt.prompt_id,
                "docs": [d.model_dump(mode="json") for d in evidence.docs]}

    def _evidence_for(self, prompt_id: str) -> EvidenceSet:
        rec = self._load_records("evidence.jsonl")[prompt_id]
        return EvidenceSet(prompt_id=prompt_id,
                           docs=tuple(EvidenceDoc(**d) for d in rec["docs"]))

    def _response_for(self, prompt_id: str) -> str:
        return self._load_records("responses.jsonl")[prompt_id]["response"]

    def _do_build_refs(self, prompt: EvalPrompt) -> dict[str, Any]:
        cfg = self.config
        evidence = self._evidence_for(prompt.prompt_id)
        chunks = chunk_documents(evidence, cfg.knowledge.chunk_chars)
        raw_facts: list[AtomicFact] = []
        for chunk in chunks:
            raw_facts.extend(reference_mod.extract_facts(
                prompt.prompt_id, chunk, self.gateway, cfg.gateway.extractor_model,
                max_tokens=cfg.gateway.extract_max_tokens,
            ))
        raw_facts = [
            fact.model_copy(update={"fact_id": f"{prompt.prompt_id}:fact:{i:04d}"})
            for i, fact in enumerate(raw_facts, start=1)
        ]
        if raw_facts:
            deduped = reference_mod.dedup_facts(
                raw_facts, cfg.dedup, self.gateway, cfg.gateway.embedding_model)
            scored = reference_mod.score_importance(
                deduped, prompt.query, cfg.importance, self.gateway,
                cfg.gateway.judge_model, batch_size=cfg.importance_batch_size,
                max_tokens=cfg.gateway.importance_max_tokens,
            )
            reference = reference_mod.form_reference_set(prompt.prompt_id, scored, cfg.selection)
        else:
            logger.warning("no facts extracted for prompt %s", prompt.prompt_id)
            reference = ReferenceSet(prompt_id=prompt.prompt_id, budget=cfg.selection)
        return {
            "prompt_id": prompt.prompt_id,
            "selection": cfg.selection.model_dump(mode="json"),
            "facts": [f.model_dump(mode="json") for f in reference.facts],
        }

    def _facts_for(self, prompt_id: str) -> list[AtomicFact]:
        rec = self._load_records("facts.jsonl")[prompt_id]
        return [AtomicFact(**f) for f in rec["facts"]]

    def _do_extract_claims(self, prompt: EvalPrompt) -> dict[str, Any]:
        cfg = self.config
        response = self._response_for(prompt.prompt_id)
        claim_list = claims_mod.extract_claims(
            prompt.prompt_id, response, self.gateway, cfg.gateway.extractor_model,
            window_before=cfg.claim_window_before, window_after=cfg.claim_window_after,
            max_tokens=cfg.gateway.extract_max_tokens,
        )
        return {"prompt_id": prompt.prompt_id,
                "claims": [c.model_dump(mode="json") for c in claim_list]}

    def _claims_for(self, prompt_id: str) -> list[AtomicClaim]:
        rec = self._load_records("claims.jsonl")[prompt_id]
        return [AtomicClaim(**c) for c in rec["claims"]]

    def _do_judge(self, prompt: EvalPrompt) -> tuple[dict[str, Any], dict[str, Any]]:
        cfg = self.config
        evidence = self._evidence_for(prompt.prompt_id)
        facts = self._facts_for(prompt.prompt_id)
        claim_list = self._claims_for(prompt.prompt_id)
        verdicts = [
            judge_mod.verify_claim(claim, evidence, self.gateway, cfg.gateway.judge_model,
                                   char_budget=cfg.evidence_char_budget,
                                   max_tokens=cfg.gateway.judge_max_tokens)
            for claim in claim_list
        ]
        coverage = [
            judge_mod.check_coverage(fact, claim_list, self.gateway, cfg.gateway.judge_model,
                                     max_tokens=cfg.gateway.judge_max_tokens)
            for fact in facts
        ]
        meta = {"judge_model": cfg.gateway.judge_model,
                "template_version": prompts_mod.TEMPLATE_VERSION}
        verdict_rec = {"prompt_id": prompt.prompt_id, **meta,
                       "verdicts": [v.model_dump(mode="json") for v in verdicts]}
        coverage_rec = {"prompt_id": prompt.prompt_id, **meta,
                        "coverage": [c.model_dump(mode="json") for c in coverage]}
        return verdict_rec, coverage_rec

    def _stage_score(self) -> None:
        done = self._load_records(STAGE_FILES[Stage.SCORE])
        verdict_recs = self._load_records("verdicts.jsonl")
        coverage_recs = self._load_records("coverage.jsonl")
        for prompt in self.prompts:
            pid = prompt.prompt_id
            if pid in done or pid in self.failed:
                continue
            if pid not in verdict_recs or pid not in coverage_recs:
                self._mark_failed(pid, Stage.SCORE, "missing judge artifacts")
                continue
            verdicts = [ClaimVerdict(**v) for v in verdict_recs[pid]["verdicts"]]
            coverage = [FactCoverage(**c) for c in coverage_recs[pid]["coverage"]]
            facts = self._facts_for(pid)
            m = metrics_mod.compute_prompt_metrics(pid, verdicts, coverage, facts)
            self._append_record(STAGE_FILES[Stage.SCORE], m.model_dump(mode="json"))

    def finalize(self) -> RunOutcome:
        """Aggregate persisted metrics, write report.json and the budget table."""
        metric_recs = self._load_records(STAGE_FILES[Stage.SCORE])
        per_prompt = [PromptMetrics(**metric_recs[p.prompt_id])
                      for p in self.prompts if p.prompt_id in metric_recs]
        report = metrics_mod.macro_aggregate(
            self.config.run_id, per_prompt,
            config_snapshot=self.config.model_dump(mode="json"),
            failed_prompts=[p.prompt_id for p in self.prompts if p.prompt_id in self.failed],
        )
        instances = []
        coverage_recs = self._load_records("coverage.jsonl")
        for p in self.prompts:
            pid = p.prompt_id
            if pid in metric_recs and pid in coverage_recs:
                instances.append((
                    self._facts_for(pid),
                    [FactCoverage(**c) for c in coverage_recs[pid]["coverage"]],
                ))
        budget_rows = metrics_mod.recall_at_budgets(instances)
        (self.run_dir / REPORT_JSON).write_text(
            canonical_dumps(report.model_dump(mode="json")) + "\n", encoding="utf-8")
        (self.run_dir / BUDGET_JSON).write_text(
            canonical_dumps([r.model_dump(mode="json") for r in budget_rows]) + "\n",
            encoding="utf-8")
        return RunOutcome(
            run_id=self.config.run_id,
            run_dir=str(self.run_dir),
            report=report,
            budget_rows=tuple(budget_rows),
            failed_prompts=dict(self.failed),
        )

    def states(self) -> list[PromptState]:
        """Current stage per prompt, derived from persisted artifacts."""
        reached = {
            Stage.RETRIEVE: (PromptStage.RETRIEVED, "evidence.jsonl"),
            Stage.BUILD_REFS: (PromptStage.FACTS_BUILT, "facts.jsonl"),
            Stage.EXTRACT_CLAIMS: (PromptStage.CLAIMS_BUILT, "claims.jsonl"),
            Stage.JUDGE: (PromptStage.JUDGED, "verdicts.jsonl"),
            Stage.SCORE: (PromptStage.SCORED, "metrics.jsonl"),
        }
        out = []
        for p in self.prompts:
            if p.prompt_id in self.failed:
                out.append(PromptState(prompt_id=p.prompt_id, stage=PromptStage.FAILED,
                                       failure_reason=self.failed[p.prompt_id]))
                continue
            state = PromptStage.PENDING
            for stage in STAGE_ORDER[1:]:
                label, name = reached[stage]
                if p.prompt_id in self._load_records(name):
                    state = label
            out.append(PromptState(prompt_id=p.prompt_id, stage=state))
        return out


class _Failure:
    def __init__(self, reason: str):
        self.reason = reason


def run_pipeline(config: RunConfig) -> RunOutcome:
    """Convenience wrapper: build an engine, run every stage, emit reports."""
    engine = PipelineEngine(config)
    outcome = engine.run()
    from .reporting import emit_report_files

    emit_report_files(outcome.report, list(outcome.budget_rows), engine.run_dir)
    return outcome


def resume_pipeline(run_dir: Path | str) -> RunOutcome:
    engine = PipelineEngine.resume(run_dir)
    outcome = engine.run()
    from .reporting import emit_report_files

    emit_report_files(outcome.report, list(outcome.budget_rows), engine.run_dir)
    return outcome
