from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from facteval.gateway import LLMGateway, MockBackend, ResponseCache, RetryPolicy
from facteval.model import (
    AtomicClaim,
    AtomicFact,
    ClaimVerdict,
    CoverageLabel,
    FactCoverage,
    VerdictLabel,
)

FIXTURES = Path(__file__).parent / "fixtures"

LABEL_BY_CODE = {"S": VerdictLabel.SUPPORTED, "C": VerdictLabel.CONTRADICTED,
                 "NS": VerdictLabel.NOT_SUPPORTED}


def make_verdicts(codes: list[str]) -> list[ClaimVerdict]:
    return [ClaimVerdict(claim_id=f"p:claim:{i:04d}", label=LABEL_BY_CODE[c])
            for i, c in enumerate(codes, start=1)]


def make_coverage(flags: list[bool], prefix: str = "p:fact") -> list[FactCoverage]:
    return [
        FactCoverage(
            fact_id=f"{prefix}:{i:04d}",
            label=CoverageLabel.COVERED if f else CoverageLabel.NOT_COVERED,
            evidence_claim_indices=(1,) if f else (),
        )
        for i, f in enumerate(flags, start=1)
    ]


def make_fact(i: int, importance: float | None = None, r: int | None = None,
              s: int | None = None, prefix: str = "p:fact", text: str = "",
              alpha: float = 1.0, beta: float = 1.0) -> AtomicFact:
    fact = AtomicFact(fact_id=f"{prefix}:{i:04d}", text=text or f"fact {i}")
    if r is not None and s is not None:
        return fact.with_scores(r, s, alpha, beta)
    if importance is not None:
        return fact.model_copy(update={"importance": importance})
    return fact


def make_claims(texts: list[str], prefix: str = "p") -> list[AtomicClaim]:
    return [AtomicClaim(claim_id=f"{prefix}:claim:{i:04d}", index=i, text=t)
            for i, t in enumerate(texts, start=1)]


GOLDEN = FIXTURES / "golden"


def golden_config(tmp_path: Path, run_id: str = "golden", *,
                  prompts_file: str | None = None, mock_script: str | None = None):
    """RunConfig for the bundled two-prompt fixture, output under tmp_path."""
    from facteval.runner import CacheConfig, GatewayConfig, RunConfig
    from facteval.retrieval import KnowledgeSourceConfig

    return RunConfig(
        run_id=run_id,
        prompts_path=prompts_file or str(GOLDEN / "prompts.jsonl"),
        output_dir=str(tmp_path / "out"),
        knowledge=KnowledgeSourceConfig(
            kind="local_corpus", corpus_path=str(GOLDEN / "corpus.jsonl"),
            top_k=1, chunk_chars=3000),
        dedup={"similarity": "jaccard", "tau": 0.85, "canonical": "longest_text"},
        gateway=GatewayConfig(
            mock_script=mock_script or str(GOLDEN / "mock_script.json"),
            retry_base_delay=0.0, retry_jitter=0.0, retry_max_delay=0.0),
        cache=CacheConfig(root=str(tmp_path / "cache"), namespace="golden"),
        concurrency=2,
    )


def load_golden_oracle():
    import importlib.util

    spec = importlib.util.spec_from_file_location("golden_oracle", GOLDEN / "oracle.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture
def mock_gateway(tmp_path):
    """Gateway over an empty-script mock with a fresh cache; fast retries."""
    def _build(script: dict | None = None, max_in_flight: int = 4):
        backend = MockBackend(script or {})
        cache = ResponseCache(tmp_path / "cache", "test")
        retry = RetryPolicy(attempts=3, base_delay=0.0, max_delay=0.0, jitter=0.0)
        return LLMGateway(backend, cache, max_in_flight=max_in_flight, retry=retry), backend

    return _build
