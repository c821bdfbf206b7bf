"""Prompt templates with strict output schemas.

These templates are versioned: judge artifacts record TEMPLATE_VERSION so
any report can be traced back to the exact wording that produced it.
Slots use ``{name}`` markers and are filled by literal replacement, never
str.format, because several templates contain JSON braces.
"""

from __future__ import annotations

import hashlib

FACT_GENERATION = '''You need to extract as many facts from the given "context" as possible. Output each fact in bullet-point format. Each of these facts should be generated directly from the "context", should be objective and factual, so avoid opinion-based sentences. Each fact should add new information and avoid redundancy. Each fact should be self-contained and make sense on its own. Choose facts that provide new insights or something unusual about the topic. Avoid general statements that apply to many things. A good fact should be specific and unique and contribute to the essential understanding of the topic.

Here is an example:

Context: Adam Jared Brody (born December 15, 1979) is an American actor. His breakout role was as Seth Cohen on the Fox television series The O.C. (2003-2007). For his performance as Noah in the Netflix romantic comedy series Nobody Wants This (2024), he earned a nomination for the Golden Globe Award for Best Actor in a Television Series (Musical/Comedy) and won the Critics' Choice Television Award for Best Actor in a Comedy Series.

Output:

Facts:
- Adam Jared Brody was born on December 15, 1979.
- Adam Brody's breakout role was as Seth Cohen on the Fox television series The O.C. (2003-2007).
- He earned a nomination for the Golden Globe Award for Best Actor in a Television Series (Musical/Comedy) for his performance as Noah in the Netflix romantic comedy series Nobody Wants This (2024).
- Brody won the Critics' Choice Television Award for Best Actor in a Comedy Series for his role in Nobody Wants This.

Context: {context}

Output:'''

COVERAGE_VERIFICATION = '''You are checking whether a given fact is COVERED by a set of claim sentences (an answer).

Important:
- The fact is assumed to be TRUE. Do not question or evaluate its truth.
- Decide whether the fact is stated or clearly implied by the claim sentences.

Definitions:
- The fact is COVERED if the claim sentences clearly state or entail the fact. That means: if a careful reader had only these claim sentences and nothing else, they would be confident that the fact is true.
- The fact is NOT_COVERED if the claim sentences do not provide enough information to guarantee the fact. It is NOT_COVERED even if the fact seems plausible based on outside knowledge.

Notes:
- You may use multiple claim sentences together to decide if the fact is covered.
- Do not use any outside knowledge beyond the claim sentences.
- Be strict: if the claim sentences are compatible with the fact but do not actually say or entail it, label it NOT_COVERED.

Fact:

{fact}

Claim sentences (numbered, 1-based indices):

{claims_block}

Your tasks:
- Decide whether the fact is COVERED or NOT_COVERED by the claim sentences above.
- If and only if the fact is COVERED, list all claim IDs (1-based indices) that directly help cover/entail the fact. If NOT_COVERED, use an empty list.

Output strictly as JSON, with no extra text:

{
  "label": "COVERED" | "NOT_COVERED",
  "evidence_claim_ids": [<int>, ...]
}'''

RELEVANCE_SALIENCE = '''You are scoring each statement based on its relevance and salience to the given query.

Task:
Given a query and a list of sentences about that query, assign each sentence:
- a RELEVANCE rating from 1 to 5
- a SALIENCE rating from 1 to 5

Definitions:
- Relevance (1-5): how directly this sentence helps answer the query.
  1 = completely unrelated
  2 = weakly related
  3 = somewhat related
  4 = strongly related
  5 = directly answers the query or is crucial to the answer

- Salience (1-5): how important this sentence is for answering the query among all the sentences provided.
  1 = trivial detail, almost never needed
  2 = minor detail
  3 = useful but not central
  4 = important detail that should usually be included
  5 = essential; leaving it out would seriously harm the answer

Query:
{query}

Sentences:
{sentence_list}

Output strictly as a list of JSON objects with this schema, and do not include any text before or after the JSON.

Output:
[ {
  "id": <sentence_index>,
  "sentence": "<sentence text>",
  "relevance": <int 1-5>,
  "salience": <int 1-5>
}, ... ]'''

# Claim decomposition operates on one focal sentence with a short context
# window; claims must stand alone once extracted.
CLAIM_EXTRACTION = '''You are extracting verifiable atomic claims from the focal sentence of a longer answer.

Context before (may be empty):
{context_before}

Focal sentence:
{sentence}

Context after (may be empty):
{context_after}

Instructions:
- Extract every verifiable, self-contained factual claim expressed by the focal sentence.
- Use the surrounding context only to resolve pronouns and references; do not extract claims that appear only in the context.
- Split compound statements into separate atomic claims whenever possible.
- Preserve factual specificity such as dates, quantities, and named entities.
- Rephrase each claim so it makes sense on its own.
- Do not include opinions, speculation, instructions, or greetings.
- If the focal sentence contains no verifiable factual claim, output "Claims:" with no bullets.

Output each claim in bullet-point format:

Claims:
- <claim 1>
- <claim 2>'''

CLAIM_VERIFICATION = '''You are verifying whether a claim is SUPPORTED, CONTRADICTED, or NOT_SUPPORTED by a set of evidence documents.

Important:
- Judge the claim only against the evidence documents below.
- Do not use any outside knowledge.

Definitions:
- SUPPORTED: the evidence clearly states or entails the claim.
- CONTRADICTED: the evidence clearly states or entails the opposite of the claim, or states a conflicting value for the same attribute.
- NOT_SUPPORTED: the evidence neither supports nor contradicts the claim, or does not provide enough information to decide.

Claim:

{claim}

Evidence documents:

{evidence_block}

Your task:
- Assign exactly one label: SUPPORTED, CONTRADICTED, or NOT_SUPPORTED.
- Give a one-sentence rationale.

Output strictly as JSON, with no extra text:

{
  "label": "SUPPORTED" | "CONTRADICTED" | "NOT_SUPPORTED",
  "rationale": "<one sentence>"
}'''

_ALL = (FACT_GENERATION, COVERAGE_VERIFICATION, RELEVANCE_SALIENCE,
        CLAIM_EXTRACTION, CLAIM_VERIFICATION)

TEMPLATE_VERSION = hashlib.sha256("\n\x00\n".join(_ALL).encode("utf-8")).hexdigest()[:12]


def render(template: str, **slots: str) -> str:
    """Fill ``{name}`` slots by literal replacement."""
    out = template
    for name, value in slots.items():
        marker = "{" + name + "}"
        if marker not in out:
            raise KeyError(f"template has no slot {marker}")
        out = out.replace(marker, value)
    return out


def numbered_block(items: list[str]) -> str:
    """Render items as a 1-based numbered list, one per line."""
    return "\n".join(f"{i}. {text.replace(chr(10), ' ')}" for i, text in enumerate(items, start=1))
