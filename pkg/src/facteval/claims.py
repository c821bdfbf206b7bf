"""Decomposes a model response into an ordered set of atomic claims."""

from __future__ import annotations

import logging
import re

from . import prompts
from .errors import EmptyResponseError
from .gateway import LLMGateway, RequestTag
from .model import AtomicClaim
from .reference import ask_for_bullets

logger = logging.getLogger(__name__)

_SENTENCE = re.compile(r"[^.!?\n]+(?:[.!?]+|\n|$)")


def split_sentences(text: str) -> list[str]:
    """Lightweight sentence segmentation; trims whitespace, drops empties."""
    return [s.strip() for s in _SENTENCE.findall(text) if s.strip()]


def extract_claims(prompt_id: str, response: str, gateway: LLMGateway, model_name: str,
                   window_before: int = 1, window_after: int = 1,
                   max_tokens: int = 1024) -> list[AtomicClaim]:
    """Extract atomic claims from a response, one judge call per sentence.

    Each sentence is presented with its context window; the replies are
    concatenated in document order, exact-duplicate claim texts are
    dropped keeping the first occurrence, and the survivors are indexed
    1..L. A window whose reply stays unparseable after one re-ask is
    skipped with a warning.
    """
    if not response or not response.strip():
        raise EmptyResponseError(f"prompt {prompt_id} has no response to decompose")
    sentences = split_sentences(response)
    texts: list[str] = []
    for i, sentence in enumerate(sentences):
        before = " ".join(sentences[max(0, i - window_before):i])
        after = " ".join(sentences[i + 1:i + 1 + window_after])
        user_text = prompts.render(
            prompts.CLAIM_EXTRACTION,
            context_before=before, sentence=sentence, context_after=after,
        )
        bullets = ask_for_bullets(gateway, model_name, user_text,
                                   RequestTag.CLAIM_EXTRACT, header="Claims:",
                                   max_tokens=max_tokens)
        if bullets is None:
            logger.warning("claim extraction unparseable for %s sentence %d; window skipped",
                           prompt_id, i + 1)
            continue
        texts.extend(bullets)
    seen: set[str] = set()
    claims: list[AtomicClaim] = []
    for text in texts:
        if text in seen:
            continue
        seen.add(text)
        index = len(claims) + 1
        claims.append(AtomicClaim(
            claim_id=f"{prompt_id}:claim:{index:04d}", index=index, text=text,
        ))
    return claims
