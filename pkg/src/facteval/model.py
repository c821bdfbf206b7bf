"""Shared domain types and their JSON Lines serialization contracts.

Every type is immutable after construction and safe to share across
concurrent pipeline stages. Serialization is canonical (sorted keys,
fixed separators) so that serialize -> parse -> serialize round-trips
byte-identically.
"""

from __future__ import annotations

import enum
import json
from pathlib import Path
from typing import Any, Iterator, Optional

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, model_validator

from .errors import (
    CorruptArtifactError,
    DuplicatePromptIdError,
    EmptyQueryError,
    MissingFieldError,
)

_TOL = 1e-12


def canonical_dumps(obj: Any) -> str:
    """Canonical JSON used for all artifacts: stable key order, UTF-8 text."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def model_to_json(model: BaseModel) -> str:
    return canonical_dumps(model.model_dump(mode="json"))


def write_jsonl(path: Path, records: list[dict[str, Any]]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_dumps(rec) + "\n")


def append_jsonl(path: Path, record: dict[str, Any]) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(canonical_dumps(record) + "\n")


def read_jsonl(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (line_no, record); raise CorruptArtifactError on bad lines."""
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptArtifactError(str(path), line_no, exc.msg) from exc


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True)


class EvalPrompt(FrozenModel):
    """An input query plus the long-form response under evaluation."""

    prompt_id: str = Field(validation_alias=AliasChoices("prompt_id", "id"))
    query: str
    response: Optional[str] = None
    domain_tag: Optional[str] = None


class EvidenceDoc(FrozenModel):
    """One retrieved document grounding fact extraction and verification."""

    doc_id: str
    source_name: str
    text: str
    rank: int = Field(ge=1)
    score: Optional[float] = None

    @model_validator(mode="after")
    def _check_text(self) -> "EvidenceDoc":
        if not self.text:
            raise ValueError("evidence doc text must be non-empty")
        return self


class EvidenceSet(FrozenModel):
    prompt_id: str
    docs: tuple[EvidenceDoc, ...] = ()

    @model_validator(mode="after")
    def _check_ranks(self) -> "EvidenceSet":
        ranks = [d.rank for d in self.docs]
        if sorted(ranks) != ranks:
            raise ValueError("evidence docs must be sorted by ascending rank")
        if len(set(ranks)) != len(ranks):
            raise ValueError("evidence ranks must be unique")
        return self


class AtomicFact(FrozenModel):
    """A reference fact; scoring fields stay unset until the judge assigns them."""

    fact_id: str
    text: str
    source_doc_ids: tuple[str, ...] = ()
    relevance_raw: Optional[int] = Field(default=None, ge=1, le=5)
    salience_raw: Optional[int] = Field(default=None, ge=1, le=5)
    relevance_norm: Optional[float] = None
    salience_norm: Optional[float] = None
    importance: Optional[float] = None
    cluster_id: Optional[int] = None
    score_defaulted: bool = False

    @model_validator(mode="after")
    def _check_norms(self) -> "AtomicFact":
        if self.relevance_raw is not None and self.relevance_norm is not None:
            if abs(self.relevance_norm - (self.relevance_raw - 1) / 4) > _TOL:
                raise ValueError("relevance_norm must equal (relevance_raw - 1) / 4")
        if self.salience_raw is not None and self.salience_norm is not None:
            if abs(self.salience_norm - (self.salience_raw - 1) / 4) > _TOL:
                raise ValueError("salience_norm must equal (salience_raw - 1) / 4")
        return self

    def with_scores(self, relevance: int, salience: int, alpha: float, beta: float,
                    defaulted: bool = False) -> "AtomicFact":
        r_norm = (relevance - 1) / 4
        s_norm = (salience - 1) / 4
        return self.model_copy(update={
            "relevance_raw": relevance,
            "salience_raw": salience,
            "relevance_norm": r_norm,
            "salience_norm": s_norm,
            "importance": alpha * r_norm + beta * s_norm,
            "score_defaulted": defaulted,
        })


class SelectionMode(str, enum.Enum):
    TOP_K = "top_k"
    THRESHOLD = "threshold"
    ALL = "all"


class SelectionRule(FrozenModel):
    """How the ranked fact list is pruned into the reference set."""

    mode: SelectionMode = SelectionMode.ALL
    k_star: Optional[int] = Field(default=None, ge=1)
    min_importance: Optional[float] = None

    @model_validator(mode="after")
    def _check_mode(self) -> "SelectionRule":
        if self.mode is SelectionMode.TOP_K and self.k_star is None:
            raise ValueError("top_k selection requires k_star")
        if self.mode is SelectionMode.THRESHOLD and self.min_importance is None:
            raise ValueError("threshold selection requires min_importance")
        return self


class ReferenceSet(FrozenModel):
    """Ranked should-include facts for one prompt, highest importance first."""

    prompt_id: str
    facts: tuple[AtomicFact, ...] = ()
    budget: SelectionRule = SelectionRule()

    @model_validator(mode="after")
    def _check_order(self) -> "ReferenceSet":
        keys = [(-(f.importance if f.importance is not None else 0.0), f.fact_id)
                for f in self.facts]
        if keys != sorted(keys):
            raise ValueError("facts must be sorted by importance desc, fact_id asc")
        return self


class AtomicClaim(FrozenModel):
    claim_id: str
    index: int = Field(ge=1)
    text: str


class VerdictLabel(str, enum.Enum):
    SUPPORTED = "Supported"
    CONTRADICTED = "Contradicted"
    NOT_SUPPORTED = "NotSupported"


class ClaimVerdict(FrozenModel):
    claim_id: str
    label: VerdictLabel
    rationale: Optional[str] = None
    judge_failed: bool = False


class CoverageLabel(str, enum.Enum):
    COVERED = "Covered"
    NOT_COVERED = "NotCovered"


class FactCoverage(FrozenModel):
    fact_id: str
    label: CoverageLabel
    evidence_claim_indices: tuple[int, ...] = ()
    judge_failed: bool = False

    @model_validator(mode="after")
    def _check_evidence(self) -> "FactCoverage":
        covered = self.label is CoverageLabel.COVERED
        if covered and not self.evidence_claim_indices:
            raise ValueError("Covered requires at least one evidence claim index")
        if not covered and self.evidence_claim_indices:
            raise ValueError("NotCovered must carry no evidence claim indices")
        return self


class ImportanceConfig(FrozenModel):
    """Weights for composing normalized relevance and salience into importance."""

    alpha: float = Field(default=1.0, ge=0.0)
    beta: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def _check_positive(self) -> "ImportanceConfig":
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive")
        return self


class PromptMetrics(FrozenModel):
    """Per-prompt scores; None marks a metric undefined for this prompt."""

    prompt_id: str
    n_claims: int = Field(ge=0)
    n_facts: int = Field(ge=0)
    n_supported: int = Field(ge=0)
    n_contradicted: int = Field(ge=0)
    n_not_supported: int = Field(ge=0)
    n_covered: int = Field(ge=0)
    prec: Optional[float] = None
    rec: Optional[float] = None
    rec_weighted: Optional[float] = None
    f1: Optional[float] = None
    c_rate: Optional[float] = None
    ns_rate: Optional[float] = None

    @model_validator(mode="after")
    def _check_counts(self) -> "PromptMetrics":
        if self.n_supported + self.n_contradicted + self.n_not_supported != self.n_claims:
            raise ValueError("verdict label counts must sum to n_claims")
        if self.n_claims > 0:
            if self.prec is None or abs(self.prec - self.n_supported / self.n_claims) > _TOL:
                raise ValueError("prec must equal n_supported / n_claims")
            assert self.c_rate is not None and self.ns_rate is not None
            if abs(self.prec + self.c_rate + self.ns_rate - 1.0) > _TOL:
                raise ValueError("prec + c_rate + ns_rate must equal 1")
        if self.n_facts > 0:
            if self.rec is None or abs(self.rec - self.n_covered / self.n_facts) > _TOL:
                raise ValueError("rec must equal n_covered / n_facts")
        return self


class RunReport(FrozenModel):
    """Macro-averaged run results plus the effective configuration snapshot."""

    run_id: str
    per_prompt: tuple[PromptMetrics, ...] = ()
    macro_prec: Optional[float] = None
    macro_rec: Optional[float] = None
    macro_rec_weighted: Optional[float] = None
    macro_f1: Optional[float] = None
    macro_c_rate: Optional[float] = None
    macro_ns_rate: Optional[float] = None
    avg_claims: float = 0.0
    avg_facts: float = 0.0
    rho: Optional[float] = None
    excluded: dict[str, int] = {}
    failed_prompts: tuple[str, ...] = ()
    config_snapshot: dict[str, Any] = {}

    @model_validator(mode="after")
    def _check_macros(self) -> "RunReport":
        for name in ("prec", "rec", "rec_weighted", "f1", "c_rate", "ns_rate"):
            values = [v for m in self.per_prompt if (v := getattr(m, name)) is not None]
            macro = getattr(self, f"macro_{name}")
            if values:
                if macro is None or abs(macro - sum(values) / len(values)) > _TOL:
                    raise ValueError(f"macro_{name} must be the mean of defined per-prompt values")
            elif macro is not None:
                raise ValueError(f"macro_{name} must be None when no prompt defines {name}")
        if self.avg_facts > 0:
            if self.rho is None or abs(self.rho - self.avg_claims / self.avg_facts) > _TOL:
                raise ValueError("rho must equal avg_claims / avg_facts")
        return self


def validate_prompt_record(record: dict[str, Any]) -> EvalPrompt:
    """Validate one parsed input record into an EvalPrompt.

    Accepts ``id`` as an alias for ``prompt_id``. Raises a structured
    error rather than a bare pydantic failure so callers can report the
    offending record precisely.
    """
    if not isinstance(record, dict):
        raise MissingFieldError("prompt_id", record_hint=repr(record))
    pid = record.get("prompt_id", record.get("id"))
    if pid is None or str(pid) == "":
        raise MissingFieldError("prompt_id")
    if "query" not in record:
        raise MissingFieldError("query", record_hint=f"prompt '{pid}'")
    query = record["query"]
    if not isinstance(query, str) or not query.strip():
        raise EmptyQueryError(str(pid))
    return EvalPrompt(
        prompt_id=str(pid),
        query=query,
        response=record.get("response"),
        domain_tag=record.get("domain_tag"),
    )


def load_prompts(path: Path) -> list[EvalPrompt]:
    """Load and validate a prompts JSONL file; prompt ids must be unique."""
    prompts: list[EvalPrompt] = []
    seen: set[str] = set()
    for _line_no, record in read_jsonl(path):
        prompt = validate_prompt_record(record)
        if prompt.prompt_id in seen:
            raise DuplicatePromptIdError(prompt.prompt_id)
        seen.add(prompt.prompt_id)
        prompts.append(prompt)
    return prompts
