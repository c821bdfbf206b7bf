"""LLM-as-judge labeling: claim verification and fact coverage.

Both judges demand strict JSON output. An invalid reply earns one
retry with a terser instruction appended; a second failure degrades to
the conservative label (NotSupported / NotCovered) with judge_failed
set, so no claim or fact is ever silently dropped.
"""

from __future__ import annotations

import json
import logging
from typing import Optional

from . import prompts
from .gateway import ChatRequest, LLMGateway, RequestTag
from .model import (
    AtomicClaim,
    AtomicFact,
    ClaimVerdict,
    CoverageLabel,
    EvidenceSet,
    FactCoverage,
    VerdictLabel,
)

logger = logging.getLogger(__name__)

_VERDICT_FROM_WIRE = {
    "SUPPORTED": VerdictLabel.SUPPORTED,
    "CONTRADICTED": VerdictLabel.CONTRADICTED,
    "NOT_SUPPORTED": VerdictLabel.NOT_SUPPORTED,
}

_RETRY_SUFFIX = "\n\nOutput only the JSON object, with no text before or after it."


def render_evidence_block(evidence: EvidenceSet, char_budget: int) -> str:
    """Docs in rank order until the character budget is exhausted."""
    parts: list[str] = []
    used = 0
    for doc in evidence.docs:
        head = f"[Document {doc.rank} | {doc.source_name} | {doc.doc_id}]\n"
        remaining = char_budget - used - len(head)
        if remaining <= 0:
            logger.warning("evidence truncated at rank %d (budget %d chars)", doc.rank, char_budget)
            break
        body = doc.text
        if len(body) > remaining:
            body = body[:remaining]
            logger.warning("evidence doc %s truncated to fit budget", doc.doc_id)
        parts.append(head + body)
        used += len(head) + len(body)
    return "\n\n".join(parts)


def extract_json_object(text: str) -> Optional[dict]:
    start = text.find("{")
    if start < 0:
        return None
    try:
        value, _ = json.JSONDecoder().raw_decode(text[start:])
    except json.JSONDecodeError:
        return None
    return value if isinstance(value, dict) else None


def verify_claim(claim: AtomicClaim, evidence: EvidenceSet, gateway: LLMGateway,
                 model_name: str, char_budget: int = 24000,
                 max_tokens: int = 512) -> ClaimVerdict:
    """Three-way verification of one claim against the retrieved evidence.

    Empty evidence short-circuits to NotSupported without a judge call.
    """
    if not evidence.docs:
        return ClaimVerdict(claim_id=claim.claim_id, label=VerdictLabel.NOT_SUPPORTED,
                            rationale="no evidence retrieved")
    user_text = prompts.render(
        prompts.CLAIM_VERIFICATION,
        claim=claim.text,
        evidence_block=render_evidence_block(evidence, char_budget),
    )
    for suffix in ("", _RETRY_SUFFIX):
        reply = gateway.chat(ChatRequest(
            model_name=model_name, user_text=user_text + suffix, temperature=0.0,
            max_tokens=max_tokens, request_tag=RequestTag.PRECISION_JUDGE,
        ))
        parsed = _parse_verdict(reply.text)
        if parsed is not None:
            label, rationale = parsed
            return ClaimVerdict(claim_id=claim.claim_id, label=label, rationale=rationale)
    logger.warning("verification judge invalid twice for claim %s; labeled NotSupported",
                   claim.claim_id)
    return ClaimVerdict(claim_id=claim.claim_id, label=VerdictLabel.NOT_SUPPORTED,
                        rationale="judge reply unparseable", judge_failed=True)


def _parse_verdict(reply: str) -> Optional[tuple[VerdictLabel, Optional[str]]]:
    obj = extract_json_object(reply)
    if obj is None:
        return None
    label = obj.get("label")
    if label not in _VERDICT_FROM_WIRE:
        return None
    rationale = obj.get("rationale")
    if rationale is not None and not isinstance(rationale, str):
        return None
    return _VERDICT_FROM_WIRE[label], rationale


def check_coverage(fact: AtomicFact, claims: list[AtomicClaim], gateway: LLMGateway,
                   model_name: str, max_tokens: int = 512) -> FactCoverage:
    """Binary coverage of one reference fact by the numbered claim list.

    Enforces the wire schema exactly: keys {label, evidence_claim_ids},
    NOT_COVERED with a non-empty id list is coerced to an empty list with
    a warning, and ids outside 1..len(claims) are dropped. An empty claim
    list short-circuits to NotCovered without a judge call.
    """
    if not claims:
        return FactCoverage(fact_id=fact.fact_id, label=CoverageLabel.NOT_COVERED)
    claims_block = prompts.numbered_block([c.text for c in claims])
    user_text = prompts.render(prompts.COVERAGE_VERIFICATION,
                               fact=fact.text, claims_block=claims_block)
    for suffix in ("", _RETRY_SUFFIX):
        reply = gateway.chat(ChatRequest(
            model_name=model_name, user_text=user_text + suffix, temperature=0.0,
            max_tokens=max_tokens, request_tag=RequestTag.COVERAGE_JUDGE,
        ))
        parsed = parse_coverage_reply(reply.text, n_claims=len(claims))
        if parsed is not None:
            label, indices = parsed
            return FactCoverage(fact_id=fact.fact_id, label=label,
                                evidence_claim_indices=tuple(indices))
    logger.warning("coverage judge invalid twice for fact %s; labeled NotCovered", fact.fact_id)
    return FactCoverage(fact_id=fact.fact_id, label=CoverageLabel.NOT_COVERED,
                        judge_failed=True)


def parse_coverage_reply(reply: str, n_claims: int) -> Optional[tuple[CoverageLabel, list[int]]]:
    """Parse one coverage reply; None means invalid (caller may retry)."""
    obj = extract_json_object(reply)
    if obj is None:
        return None
    if set(obj.keys()) != {"label", "evidence_claim_ids"}:
        return None
    label = obj.get("label")
    ids = obj.get("evidence_claim_ids")
    if label not in ("COVERED", "NOT_COVERED") or not isinstance(ids, list):
        return None
    if not all(isinstance(i, int) and not isinstance(i, bool) for i in ids):
        return None
    if label == "NOT_COVERED":
        if ids:
            logger.warning("NOT_COVERED carried evidence ids %s; coerced to empty", ids)
        return CoverageLabel.NOT_COVERED, []
    in_range = [i for i in ids if 1 <= i <= n_claims]
    dropped = [i for i in ids if i not in in_range]
    if dropped:
        logger.warning("evidence claim ids out of range dropped: %s", dropped)
    if not in_range:
        # COVERED without any valid supporting index violates the schema.
        return None
    deduped = sorted(set(in_range))
    return CoverageLabel.COVERED, deduped
