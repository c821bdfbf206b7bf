"""Builds the ranked, importance-scored reference fact set for a prompt.

Stages: extract atomic facts from each evidence chunk, merge, collapse
near-duplicates with average-linkage agglomerative clustering, score
relevance/salience with a judge, and select the should-include set.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from typing import Callable, Optional, Sequence

from pydantic import Field, model_validator

from . import prompts
from .errors import GatewayError
from .gateway import ChatRequest, LLMGateway, RequestTag
from .model import AtomicFact, FrozenModel, ImportanceConfig, ReferenceSet, SelectionMode, SelectionRule
from .retrieval import PassageChunk

logger = logging.getLogger(__name__)

_BULLET = re.compile(r"^\s*[-*•]\s+(.*\S)\s*$")


def parse_bullets(reply: str, header: str) -> Optional[list[str]]:
    """Parse a bullet-list reply; None means the reply is unparseable.

    A reply parses when it carries the expected header (e.g. "Facts:")
    or at least one bullet line; a bare header with no bullets is a
    valid empty list.
    """
    bullets = [m.group(1) for line in reply.splitlines() if (m := _BULLET.match(line))]
    if bullets:
        return bullets
    if header.lower() in reply.lower():
        return []
    return None


def extract_facts(prompt_id: str, chunk: PassageChunk, gateway: LLMGateway,
                  model_name: str, max_tokens: int = 1024) -> list[AtomicFact]:
    """Extract unscored atomic facts from one evidence chunk.

    One re-ask is attempted on an unparseable reply; after that the chunk
    is skipped with a warning (never a crash).
    """
    if not chunk.text.strip():
        return []
    user_text = prompts.render(prompts.FACT_GENERATION, context=chunk.text)
    bullets = ask_for_bullets(gateway, model_name, user_text, RequestTag.FACT_EXTRACT,
                               header="Facts:", max_tokens=max_tokens)
    if bullets is None:
        logger.warning("fact extraction unparseable for %s chunk %s:%d; chunk skipped",
                       prompt_id, chunk.doc_id, chunk.ordinal)
        return []
    if not bullets:
        logger.warning("fact extraction returned no facts for %s chunk %s:%d",
                       prompt_id, chunk.doc_id, chunk.ordinal)
    return [
        AtomicFact(fact_id="", text=text, source_doc_ids=(chunk.doc_id,))
        for text in bullets
    ]


def ask_for_bullets(gateway: LLMGateway, model_name: str, user_text: str,
                     tag: RequestTag, header: str, max_tokens: int) -> Optional[list[str]]:
    reply = gateway.chat(ChatRequest(
        model_name=model_name, user_text=user_text, temperature=0.0,
        max_tokens=max_tokens, request_tag=tag,
    ))
    bullets = parse_bullets(reply.text, header)
    if bullets is not None:
        return bullets
    retry = gateway.chat(ChatRequest(
        model_name=model_name,
        user_text=user_text + "\n\nOutput only the bullet list.",
        temperature=0.0, max_tokens=max_tokens, request_tag=tag,
    ))
    return parse_bullets(retry.text, header)


class SimilarityKind(str, enum.Enum):
    EMBEDDING = "embedding"
    JACCARD = "jaccard"


class CanonicalRule(str, enum.Enum):
    LONGEST_TEXT = "longest_text"
    HIGHEST_SPECIFICITY = "highest_specificity"


class DedupConfig(FrozenModel):
    similarity: SimilarityKind = SimilarityKind.EMBEDDING
    linkage: str = "average"
    tau: float = Field(default=0.85, gt=0.0, lt=1.0)
    canonical: CanonicalRule = CanonicalRule.LONGEST_TEXT

    @model_validator(mode="after")
    def _check_linkage(self) -> "DedupConfig":
        if self.linkage != "average":
            raise ValueError("only average linkage is supported")
        return self


def jaccard_trigram_similarity(a: str, b: str) -> float:
    ga, gb = _char_trigrams(a), _char_trigrams(b)
    if not ga and not gb:
        return 1.0
    union = len(ga | gb)
    return len(ga & gb) / union if union else 0.0


def _char_trigrams(text: str) -> set[str]:
    t = text.lower()
    if len(t) < 3:
        return {t} if t else set()
    return {t[i:i + 3] for i in range(len(t) - 2)}


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = sum(x * x for x in a) ** 0.5
    nb = sum(y * y for y in b) ** 0.5
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def cluster_average_linkage(sim: list[list[float]], tau: float) -> list[list[int]]:
    """Agglomerative clustering over a symmetric similarity matrix.

    Merges the most similar pair of clusters while the average pairwise
    member similarity is >= tau. Deterministic: ties pick the pair whose
    (smallest member, second smallest member) indices come first. The
    returned clusters are ordered by their earliest member, members
    ascending.
    """
    n = len(sim)
    clusters: list[list[int]] = [[i] for i in range(n)]
    while len(clusters) > 1:
        best_avg = float("-inf")
        best_pair = (0, 1)
        best_key = (n, n)
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                avg = _avg_similarity(sim, clusters[i], clusters[j])
                pair_key = (clusters[i][0], clusters[j][0])
                if avg > best_avg or (avg == best_avg and pair_key < best_key):
                    best_avg, best_pair, best_key = avg, (i, j), pair_key
        if best_avg < tau:
            break
        i, j = best_pair
        merged = sorted(clusters[i] + clusters[j])
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
        clusters.append(merged)
        clusters.sort(key=lambda c: c[0])
    return clusters


def _avg_similarity(sim: list[list[float]], a: list[int], b: list[int]) -> float:
    total = sum(sim[i][j] for i in a for j in b)
    return total / (len(a) * len(b))


def _specificity(text: str) -> int:
    # Digits, capitalized interior words and 4-digit years signal concrete detail.
    tokens = text.split()
    score = sum(1 for t in tokens if any(ch.isdigit() for ch in t))
    score += sum(1 for t in tokens[1:] if t[:1].isupper())
    return score


def pick_canonical(members: list[AtomicFact], rule: CanonicalRule) -> AtomicFact:
    if rule is CanonicalRule.HIGHEST_SPECIFICITY:
        return min(members, key=lambda f: (-_specificity(f.text), -len(f.text.split()), f.fact_id))
    return min(members, key=lambda f: (-len(f.text.split()), f.fact_id))


def dedup_facts(facts: list[AtomicFact], cfg: DedupConfig, gateway: LLMGateway,
                embedding_model: str = "") -> list[AtomicFact]:
    """Collapse near-duplicate facts into one canonical fact per cluster.

    Embedding failures fall back to Jaccard similarity over character
    trigrams so the pipeline stays offline-capable.
    """
    if not facts:
        raise ValueError("dedup_facts requires a non-empty fact list")
    texts = [f.text for f in facts]
    sim_fn: Callable[[int, int], float]
    if cfg.similarity is SimilarityKind.EMBEDDING:
        try:
            vectors = gateway.embed(texts, embedding_model)
            sim_fn = lambda i, j: cosine(vectors[i].values, vectors[j].values)  # noqa: E731
        except GatewayError as exc:
            logger.warning("embedding unavailable (%s); falling back to Jaccard similarity", exc)
            sim_fn = lambda i, j: jaccard_trigram_similarity(texts[i], texts[j])  # noqa: E731
    else:
        sim_fn = lambda i, j: jaccard_trigram_similarity(texts[i], texts[j])  # noqa: E731

    n = len(facts)
    sim = [[1.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            # Byte-identical texts always collapse regardless of the measure.
            s = 1.0 if texts[i] == texts[j] else sim_fn(i, j)
            sim[i][j] = sim[j][i] = s

    clusters = cluster_average_linkage(sim, cfg.tau)
    out: list[AtomicFact] = []
    for cluster_id, member_idx in enumerate(clusters):
        members = [facts[i] for i in member_idx]
        canonical = pick_canonical(members, cfg.canonical)
        doc_ids: list[str] = []
        for m in members:
            for d in m.source_doc_ids:
                if d not in doc_ids:
                    doc_ids.append(d)
        out.append(canonical.model_copy(update={
            "source_doc_ids": tuple(doc_ids),
            "cluster_id": cluster_id,
        }))
    return out


def score_importance(facts: list[AtomicFact], query: str, cfg: ImportanceConfig,
                     gateway: LLMGateway, model_name: str, batch_size: int = 40,
                     max_tokens: int = 2048) -> list[AtomicFact]:
    """Assign relevance/salience ratings and the composite importance score.

    Facts are scored in batches through one judge call each. A batch whose
    reply stays invalid after one retry falls back to neutral (3, 3)
    ratings with the fact flagged as defaulted; out-of-range ratings are
    clamped to [1, 5] with a warning.
    """
    if not facts:
        raise ValueError("score_importance requires a non-empty fact list")
    scored: list[AtomicFact] = []
    for start in range(0, len(facts), batch_size):
        batch = facts[start:start + batch_size]
        ratings = _score_batch(batch, query, gateway, model_name, max_tokens)
        for i, fact in enumerate(batch):
            entry = ratings.get(i + 1)
            if entry is None:
                logger.warning("no rating for fact %s; defaulting to (3, 3)", fact.fact_id)
                scored.append(fact.with_scores(3, 3, cfg.alpha, cfg.beta, defaulted=True))
                continue
            r, s = entry
            r_c, s_c = _clamp_rating(r, fact.fact_id, "relevance"), _clamp_rating(s, fact.fact_id, "salience")
            scored.append(fact.with_scores(r_c, s_c, cfg.alpha, cfg.beta))
    return scored


def _clamp_rating(value: int, fact_id: str, which: str) -> int:
    if value < 1 or value > 5:
        logger.warning("%s rating %d out of range for %s; clamped", which, value, fact_id)
    return min(5, max(1, value))


def _score_batch(batch: list[AtomicFact], query: str, gateway: LLMGateway,
                 model_name: str, max_tokens: int) -> dict[int, tuple[int, int]]:
    user_text = prompts.render(
        prompts.RELEVANCE_SALIENCE,
        query=query,
        sentence_list=prompts.numbered_block([f.text for f in batch]),
    )
    for suffix in ("", "\n\nOutput only the JSON array, with no text before or after it."):
        reply = gateway.chat(ChatRequest(
            model_name=model_name, user_text=user_text + suffix, temperature=0.0,
            max_tokens=max_tokens, request_tag=RequestTag.IMPORTANCE_JUDGE,
        ))
        ratings = _parse_ratings(reply.text, len(batch))
        if ratings is not None:
            return ratings
    logger.warning("importance judge reply invalid after retry; batch of %d defaulted", len(batch))
    return {}


def _parse_ratings(reply: str, n: int) -> Optional[dict[int, tuple[int, int]]]:
    payload = extract_json_array(reply)
    if payload is None:
        return None
    ratings: dict[int, tuple[int, int]] = {}
    for entry in payload:
        if not isinstance(entry, dict):
            return None
        try:
            idx = int(entry["id"])
            r = int(entry["relevance"])
            s = int(entry["salience"])
        except (KeyError, TypeError, ValueError):
            return None
        if 1 <= idx <= n:
            ratings[idx] = (r, s)
    return ratings if ratings else None


def extract_json_array(text: str) -> Optional[list]:
    """First balanced top-level JSON array in the text, parsed; else None."""
    start = text.find("[")
    if start < 0:
        return None
    decoder = json.JSONDecoder()
    try:
        value, _ = decoder.raw_decode(text[start:])
    except json.JSONDecodeError:
        return None
    return value if isinstance(value, list) else None


def form_reference_set(prompt_id: str, facts: list[AtomicFact],
                       rule: SelectionRule) -> ReferenceSet:
    """Rank scored facts and apply the selection rule.

    Ordering is importance descending with ascending fact_id as the
    deterministic tie-break. An empty result is a valid (flagged)
    outcome: recall is undefined for the prompt.
    """
    ranked = sorted(facts, key=lambda f: (-(f.importance or 0.0), f.fact_id))
    if rule.mode is SelectionMode.TOP_K:
        kept = ranked[: rule.k_star]
    elif rule.mode is SelectionMode.THRESHOLD:
        kept = [f for f in ranked if (f.importance or 0.0) >= rule.min_importance]
    else:
        kept = ranked
    if not kept:
        logger.warning("reference set empty for prompt %s; recall undefined", prompt_id)
    return ReferenceSet(prompt_id=prompt_id, facts=tuple(kept), budget=rule)
