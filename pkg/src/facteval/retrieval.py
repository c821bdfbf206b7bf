"""Evidence retrieval from a pluggable knowledge source.

Three source kinds share one interface: a local JSONL corpus ranked with
BM25, a file of precomputed per-prompt evidence, and a generic HTTP
search adapter. Retrieval is deterministic for a fixed corpus and query;
ties break by ascending doc_id.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
from collections import Counter
from pathlib import Path
from typing import Optional

import httpx
from pydantic import Field, model_validator

from .errors import (
    EmptyCorpusError,
    MalformedCorpusRecordError,
    SourceUnavailableError,
)
from .model import EvidenceDoc, EvidenceSet, FrozenModel

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class SourceKind(str, enum.Enum):
    LOCAL_CORPUS = "local_corpus"
    PRECOMPUTED = "precomputed"
    SEARCH_ADAPTER = "search_adapter"


class KnowledgeSourceConfig(FrozenModel):
    kind: SourceKind = SourceKind.LOCAL_CORPUS
    top_k: int = Field(default=5, ge=1)
    corpus_path: Optional[str] = None
    evidence_path: Optional[str] = None
    endpoint: Optional[str] = None
    chunk_chars: int = Field(default=3000, gt=0)

    @model_validator(mode="after")
    def _check_location(self) -> "KnowledgeSourceConfig":
        if self.kind is SourceKind.LOCAL_CORPUS and not self.corpus_path:
            raise ValueError("local_corpus source requires corpus_path")
        if self.kind is SourceKind.PRECOMPUTED and not self.evidence_path:
            raise ValueError("precomputed source requires evidence_path")
        if self.kind is SourceKind.SEARCH_ADAPTER and not self.endpoint:
            raise ValueError("search_adapter source requires endpoint")
        return self


class Bm25Index:
    """Lexical index over lowercased \\w+ tokens; BM25 with k1=1.2, b=0.75.

    Uses the non-negative idf variant log(1 + (N - df + 0.5) / (df + 0.5)).
    """

    K1 = 1.2
    B = 0.75

    def __init__(self, docs: list[tuple[str, str, str]]):
        # docs: (doc_id, title, text); searchable text is title + body
        self.doc_ids = [d[0] for d in docs]
        self.titles = {d[0]: d[1] for d in docs}
        self.texts = {d[0]: d[2] for d in docs}
        self._tokens = [tokenize(f"{title}\n{text}") for _, title, text in docs]
        self._tf = [Counter(toks) for toks in self._tokens]
        self._lens = [len(toks) for toks in self._tokens]
        n = len(docs)
        self._avg_len = (sum(self._lens) / n) if n else 0.0
        df: Counter = Counter()
        for tf in self._tf:
            df.update(tf.keys())
        self._idf = {t: math.log(1.0 + (n - d + 0.5) / (d + 0.5)) for t, d in df.items()}

    def __len__(self) -> int:
        return len(self.doc_ids)

    def score(self, query: str) -> list[float]:
        q_terms = tokenize(query)
        scores = [0.0] * len(self.doc_ids)
        for i, tf in enumerate(self._tf):
            dl = self._lens[i]
            norm = self.K1 * (1 - self.B + self.B * dl / self._avg_len) if self._avg_len else 0.0
            total = 0.0
            for term in q_terms:
                f = tf.get(term)
                if not f:
                    continue
                total += self._idf[term] * f * (self.K1 + 1) / (f + norm)
            scores[i] = total
        return scores

    def search(self, query: str, top_k: int) -> list[tuple[str, float]]:
        """Top documents with score > 0, by descending score then ascending doc_id."""
        scores = self.score(query)
        ranked = sorted(
            ((doc_id, s) for doc_id, s in zip(self.doc_ids, scores) if s > 0.0),
            key=lambda pair: (-pair[1], pair[0]),
        )
        return ranked[:top_k]


def build_local_index(corpus_path: Path | str) -> Bm25Index:
    """Index a JSONL corpus of {"doc_id", "title", "text"} records."""
    path = Path(corpus_path)
    if not path.exists():
        raise SourceUnavailableError(f"corpus not found: {path}")
    docs: list[tuple[str, str, str]] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedCorpusRecordError(f"invalid JSON: {exc.msg}", line_no) from exc
            doc_id = rec.get("doc_id")
            text = rec.get("text")
            if not doc_id or not isinstance(text, str) or not text:
                raise MalformedCorpusRecordError("record needs non-empty doc_id and text", line_no)
            if doc_id in seen:
                raise MalformedCorpusRecordError(f"duplicate doc_id '{doc_id}'", line_no)
            seen.add(doc_id)
            docs.append((doc_id, rec.get("title", ""), text))
    if not docs:
        raise EmptyCorpusError(f"corpus is empty: {path}")
    return Bm25Index(docs)


class KnowledgeSource:
    """Initialized retrieval source bound to one configuration."""

    def __init__(self, cfg: KnowledgeSourceConfig,
                 http_transport: Optional[httpx.BaseTransport] = None):
        self.cfg = cfg
        self._index: Optional[Bm25Index] = None
        self._precomputed: Optional[dict[str, list[EvidenceDoc]]] = None
        self._http = (httpx.Client(timeout=30.0, transport=http_transport)
                      if cfg.kind is SourceKind.SEARCH_ADAPTER else None)
        if cfg.kind is SourceKind.LOCAL_CORPUS:
            try:
                self._index = build_local_index(cfg.corpus_path)
            except EmptyCorpusError as exc:
                # Warning-level: every retrieval yields an empty evidence set.
                logger.warning("%s; all prompts will be flagged", exc)
        elif cfg.kind is SourceKind.PRECOMPUTED:
            self._precomputed = _load_precomputed(Path(cfg.evidence_path))

    def retrieve(self, prompt_id: str, query: str) -> EvidenceSet:
        cfg = self.cfg
        if cfg.kind is SourceKind.LOCAL_CORPUS:
            if self._index is None:
                return EvidenceSet(prompt_id=prompt_id, docs=())
            hits = self._index.search(query, cfg.top_k)
            if not hits:
                logger.warning("no documents matched query for prompt %s", prompt_id)
            docs = tuple(
                EvidenceDoc(
                    doc_id=doc_id,
                    source_name="local_corpus",
                    text=self._index.texts[doc_id],
                    rank=rank,
                    score=score,
                )
                for rank, (doc_id, score) in enumerate(hits, start=1)
            )
            return EvidenceSet(prompt_id=prompt_id, docs=docs)
        if cfg.kind is SourceKind.PRECOMPUTED:
            assert self._precomputed is not None
            docs = tuple(self._precomputed.get(prompt_id, ())[: cfg.top_k])
            if not docs:
                logger.warning("no precomputed evidence for prompt %s", prompt_id)
            return EvidenceSet(prompt_id=prompt_id, docs=docs)
        return self._retrieve_http(prompt_id, query)

    def _retrieve_http(self, prompt_id: str, query: str) -> EvidenceSet:
        # Adapter contract: POST {endpoint} {"query", "top_k"} ->
        # {"docs": [{"doc_id", "source_name", "text"}...]} in rank order.
        assert self._http is not None
        try:
            resp = self._http.post(self.cfg.endpoint,
                                   json={"query": query, "top_k": self.cfg.top_k})
            resp.raise_for_status()
            payload = resp.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            raise SourceUnavailableError(f"search adapter failed: {exc}") from exc
        docs = tuple(
            EvidenceDoc(
                doc_id=str(rec.get("doc_id", f"{prompt_id}:hit:{i}")),
                source_name=str(rec.get("source_name", "search_adapter")),
                text=rec["text"],
                rank=i,
                score=rec.get("score"),
            )
            for i, rec in enumerate(payload.get("docs", [])[: self.cfg.top_k], start=1)
        )
        return EvidenceSet(prompt_id=prompt_id, docs=docs)


def _load_precomputed(path: Path) -> dict[str, list[EvidenceDoc]]:
    if not path.exists():
        raise SourceUnavailableError(f"evidence file not found: {path}")
    mapping: dict[str, list[EvidenceDoc]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pid = rec["prompt_id"]
                docs = [EvidenceDoc(**d) for d in rec["docs"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedCorpusRecordError(f"invalid evidence record: {exc}", line_no) from exc
            docs.sort(key=lambda d: d.rank)
            # Renumber so ranks are contiguous 1..n whatever the file carried.
            mapping[pid] = [d.model_copy(update={"rank": i})
                            for i, d in enumerate(docs, start=1)]
    return mapping


class PassageChunk(FrozenModel):
    doc_id: str
    ordinal: int
    text: str


def chunk_documents(evidence: EvidenceSet, chunk_chars: int) -> list[PassageChunk]:
    """Split retrieved docs into passages no longer than chunk_chars.

    Paragraph boundaries are preferred split points; a paragraph longer
    than the budget is hard-split. Concatenating a doc's chunk texts
    reproduces the doc text exactly.
    """
    if chunk_chars <= 0:
        raise ValueError("chunk_chars must be positive")
    chunks: list[PassageChunk] = []
    for doc in evidence.docs:
        ordinal = 1
        for piece in _split_text(doc.text, chunk_chars):
            chunks.append(PassageChunk(doc_id=doc.doc_id, ordinal=ordinal, text=piece))
            ordinal += 1
    return chunks


def _split_text(text: str, chunk_chars: int) -> list[str]:
    if len(text) <= chunk_chars:
        return [text]
    # Keep separators attached to the preceding paragraph so the pieces
    # concatenate back to the original text.
    paragraphs = re.split(r"(\n{2,})", text)
    units: list[str] = []
    for i in range(0, len(paragraphs), 2):
        para = paragraphs[i]
        sep = paragraphs[i + 1] if i + 1 < len(paragraphs) else ""
        units.append(para + sep)
    pieces: list[str] = []
    current = ""
    for unit in units:
        if len(current) + len(unit) <= chunk_chars:
            current += unit
            continue
        if current:
            pieces.append(current)
            current = ""
        if len(unit) <= chunk_chars:
            current = unit
        else:
            for start in range(0, len(unit), chunk_chars):
                part = unit[start:start + chunk_chars]
                if len(part) == chunk_chars:
                    pieces.append(part)
                else:
                    current = part
    if current:
        pieces.append(current)
    return [p for p in pieces if p]
