from __future__ import annotations

import json
import math
import random

import oracles
from facteval.model import AtomicFact, ImportanceConfig, SelectionRule
from facteval.reference import (
    DedupConfig,
    cluster_average_linkage,
    cosine,
    dedup_facts,
    extract_facts,
    form_reference_set,
    jaccard_trigram_similarity,
    parse_bullets,
    score_importance,
)
from facteval.retrieval import PassageChunk

BRODY_CONTEXT = (
    "Adam Jared Brody (born December 15, 1979) is an American actor. His breakout "
    "role was as Seth Cohen on the Fox television series The O.C. (2003-2007). For "
    "his performance as Noah in the Netflix romantic comedy series Nobody Wants This "
    "(2024), he earned a nomination for the Golden Globe Award for Best Actor in a "
    "Television Series (Musical/Comedy) and won the Critics' Choice Television Award "
    "for Best Actor in a Comedy Series."
)

BRODY_FACTS_REPLY = """Facts:
- Adam Jared Brody was born on December 15, 1979.
- Adam Brody's breakout role was as Seth Cohen on the Fox television series The O.C. (2003-2007).
- He earned a nomination for the Golden Globe Award for Best Actor in a Television Series (Musical/Comedy) for his performance as Noah in the Netflix romantic comedy series Nobody Wants This (2024).
- Brody won the Critics' Choice Television Award for Best Actor in a Comedy Series for his role in Nobody Wants This.
"""


def fact(i, text):
    return AtomicFact(fact_id=f"p:fact:{i:04d}", text=text, source_doc_ids=(f"d{i}",))


# -- bullet parsing / fact extraction --------------------------------------


def test_parse_bullets_variants():
    assert parse_bullets("Facts:\n- A.\n- B.", "Facts:") == ["A.", "B."]
    assert parse_bullets("Facts:\n", "Facts:") == []
    assert parse_bullets("no structure at all", "Facts:") is None
    assert parse_bullets("* starred\n• dotted", "Facts:") == ["starred", "dotted"]


def test_extract_facts_example_decomposition(mock_gateway):
    gw, _ = mock_gateway({"chat": [
        {"tag": "fact_extract", "contains": "Adam Jared Brody (born December 15, 1979)",
         "reply": BRODY_FACTS_REPLY},
    ]})
    chunk = PassageChunk(doc_id="wiki:brody", ordinal=1, text=BRODY_CONTEXT)
    facts = extract_facts("p1", chunk, gw, "extractor")
    assert len(facts) == 4
    assert facts[0].text == "Adam Jared Brody was born on December 15, 1979."
    assert all(f.source_doc_ids == ("wiki:brody",) for f in facts)


def test_extract_facts_empty_bullets_warns_not_crashes(mock_gateway, caplog):
    gw, _ = mock_gateway({"chat": [{"tag": "fact_extract", "reply": "Facts:\n"}]})
    chunk = PassageChunk(doc_id="d", ordinal=1, text="anything")
    assert extract_facts("p", chunk, gw, "extractor") == []


def test_extract_facts_reask_then_skip(mock_gateway):
    gw, backend = mock_gateway({"chat": [
        {"tag": "fact_extract", "contains": "Output only the bullet list.",
         "reply": "- recovered fact"},
        {"tag": "fact_extract", "reply": "gibberish"},
    ]})
    chunk = PassageChunk(doc_id="d", ordinal=1, text="ctx")
    facts = extract_facts("p", chunk, gw, "extractor")
    assert [f.text for f in facts] == ["recovered fact"]
    assert backend.chat_calls == 2

    gw2, backend2 = mock_gateway({"chat": [{"tag": "fact_extract", "reply": "gibberish"}]})
    other_chunk = PassageChunk(doc_id="d", ordinal=2, text="different ctx")
    assert extract_facts("p", other_chunk, gw2, "extractor") == []
    assert backend2.chat_calls == 2  # original + one re-ask, then skip


def test_duplicate_bullets_kept_at_extraction_stage(mock_gateway):
    gw, _ = mock_gateway({"chat": [{"tag": "fact_extract", "reply": "Facts:\n- A.\n- A."}]})
    chunk = PassageChunk(doc_id="d", ordinal=1, text="ctx")
    facts = extract_facts("p", chunk, gw, "extractor")
    assert [f.text for f in facts] == ["A.", "A."]


# -- dedup clustering -------------------------------------------------------


def test_three_fact_similarity_fixture_clusters():
    sim = [
        [1.0, 0.9, 0.1],
        [0.9, 1.0, 0.1],
        [0.1, 0.1, 1.0],
    ]
    clusters = cluster_average_linkage(sim, tau=0.85)
    assert clusters == [[0, 1], [2]]
    finals = oracles.bf_all_final_partitions(sim, 0.85)
    assert finals == {frozenset({frozenset({0, 1}), frozenset({2})})}


def test_cluster_against_bruteforce_on_random_matrices():
    rng = random.Random(99)
    for _ in range(40):
        n = rng.randint(2, 6)
        sim = [[1.0] * n for _ in range(n)]
        # Distinct off-diagonal values avoid tie-order ambiguity in the oracle.
        values = rng.sample(range(1, 1000), k=n * (n - 1) // 2)
        it = iter(values)
        for i in range(n):
            for j in range(i + 1, n):
                sim[i][j] = sim[j][i] = next(it) / 1000.0
        tau = rng.choice([0.25, 0.5, 0.75, 0.9])
        got = cluster_average_linkage(sim, tau)
        finals = oracles.bf_all_final_partitions(sim, tau)
        assert len(finals) == 1
        assert {frozenset(c) for c in got} == next(iter(finals))


def test_dedup_exact_duplicates_always_collapse(mock_gateway):
    gw, _ = mock_gateway()
    facts = [fact(1, "Same text."), fact(2, "Same text."), fact(3, "Other totally different.")]
    cfg = DedupConfig(similarity="jaccard", tau=0.99)
    out = dedup_facts(facts, cfg, gw)
    assert len(out) == 2
    assert out[0].fact_id == "p:fact:0001"
    assert out[0].source_doc_ids == ("d1", "d2")  # union over members
    assert out[0].cluster_id == 0 and out[1].cluster_id == 1


def test_dedup_high_threshold_keeps_all_distinct(mock_gateway):
    gw, _ = mock_gateway()
    facts = [fact(1, "alpha beta gamma"), fact(2, "delta epsilon zeta"),
             fact(3, "eta theta iota")]
    out = dedup_facts(facts, DedupConfig(similarity="jaccard", tau=0.999), gw)
    assert [f.text for f in out] == [f.text for f in facts]


def test_dedup_idempotent_and_subset(mock_gateway):
    gw, _ = mock_gateway()
    texts = ["The tower is 300 meters tall.", "The tower is 300 metres tall.",
             "It opened in 1889.", "Paris is in France."]
    facts = [fact(i + 1, t) for i, t in enumerate(texts)]
    cfg = DedupConfig(similarity="jaccard", tau=0.6)
    once = dedup_facts(facts, cfg, gw)
    twice = dedup_facts(once, cfg, gw)
    assert [f.text for f in twice] == [f.text for f in once]
    assert len(once) <= len(facts)
    assert {f.text for f in once} <= set(texts)


def test_dedup_embedding_cosines_from_script(mock_gateway):
    y = 0.01 / math.sqrt(0.19)
    vec = {
        "A": [1.0, 0.0, 0.0],
        "B": [0.9, math.sqrt(0.19), 0.0],
        "C": [0.1, y, math.sqrt(1 - 0.01 - y * y)],
    }
    assert abs(cosine(vec["A"], vec["B"]) - 0.9) < 1e-9
    assert abs(cosine(vec["A"], vec["C"]) - 0.1) < 1e-9
    assert abs(cosine(vec["B"], vec["C"]) - 0.1) < 1e-9
    gw, _ = mock_gateway({"embeddings": vec})
    facts = [fact(1, "A"), fact(2, "B"), fact(3, "C")]
    out = dedup_facts(facts, DedupConfig(similarity="embedding", tau=0.85), gw, "em")
    assert [f.text for f in out] == ["A", "C"]  # canonical of {A,B}: equal tokens, id tie-break


def test_dedup_canonical_longest_text(mock_gateway):
    gw, _ = mock_gateway()
    facts = [fact(1, "Short version here."),
             fact(2, "Short version here with extra detail words.")]
    out = dedup_facts(facts, DedupConfig(similarity="jaccard", tau=0.3), gw)
    assert len(out) == 1
    assert out[0].text == "Short version here with extra detail words."


def test_dedup_embedding_failure_falls_back_to_jaccard(tmp_path, mock_gateway):
    gw, backend = mock_gateway()

    def boom(texts, model):
        from facteval.errors import NetworkError
        raise NetworkError("down")

    backend.embed = boom
    facts = [fact(1, "Same text."), fact(2, "Same text.")]
    out = dedup_facts(facts, DedupConfig(similarity="embedding", tau=0.9), gw, "em")
    assert len(out) == 1


# -- importance scoring ------------------------------------------------------


def rating_reply(entries):
    return json.dumps([
        {"id": i, "sentence": s, "relevance": r, "salience": sal}
        for i, s, r, sal in entries
    ])


def test_score_importance_composite_values(mock_gateway):
    gw, _ = mock_gateway({"chat": [{
        "tag": "importance_judge", "contains": "first fact",
        "reply": rating_reply([(1, "first fact", 5, 5), (2, "second fact", 1, 1),
                               (3, "third fact", 5, 1)]),
    }]})
    facts = [fact(1, "first fact"), fact(2, "second fact"), fact(3, "third fact")]
    scored = score_importance(facts, "q", ImportanceConfig(alpha=1, beta=1), gw, "judge")
    assert scored[0].importance == 2.0
    assert scored[1].importance == 0.0
    assert scored[1].relevance_norm == 0.0 and scored[1].salience_norm == 0.0

    relevance_only = score_importance(facts, "q", ImportanceConfig(alpha=1, beta=0), gw, "judge")
    assert relevance_only[2].importance == 1.0  # r=5, s=1 under alpha=1, beta=0


def test_normalization_hits_exact_grid(mock_gateway):
    gw, _ = mock_gateway({"chat": [{
        "tag": "importance_judge",
        "reply": rating_reply([(i, f"f{i}", i, 6 - i) for i in range(1, 6)]),
    }]})
    facts = [fact(i, f"f{i}") for i in range(1, 6)]
    scored = score_importance(facts, "q", ImportanceConfig(), gw, "judge")
    assert [f.relevance_norm for f in scored] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert [f.salience_norm for f in scored] == [1.0, 0.75, 0.5, 0.25, 0.0]


def test_score_importance_defaults_on_invalid_json(mock_gateway):
    gw, backend = mock_gateway({"chat": [{"tag": "importance_judge", "reply": "not json"}]})
    facts = [fact(1, "one"), fact(2, "two")]
    scored = score_importance(facts, "q", ImportanceConfig(), gw, "judge")
    assert all(f.relevance_raw == 3 and f.salience_raw == 3 for f in scored)
    assert all(f.score_defaulted for f in scored)
    assert backend.chat_calls == 2  # original + retry


def test_score_importance_missing_entry_defaults_single_fact(mock_gateway):
    gw, _ = mock_gateway({"chat": [{
        "tag": "importance_judge",
        "reply": rating_reply([(1, "one", 4, 4)]),
    }]})
    facts = [fact(1, "one"), fact(2, "two")]
    scored = score_importance(facts, "q", ImportanceConfig(), gw, "judge")
    assert not scored[0].score_defaulted
    assert scored[1].score_defaulted


def test_score_importance_clamps_out_of_range(mock_gateway):
    gw, _ = mock_gateway({"chat": [{
        "tag": "importance_judge",
        "reply": rating_reply([(1, "one", 9, 0)]),
    }]})
    scored = score_importance([fact(1, "one")], "q", ImportanceConfig(), gw, "judge")
    assert scored[0].relevance_raw == 5
    assert scored[0].salience_raw == 1


def test_score_importance_batches_by_size(mock_gateway):
    gw, backend = mock_gateway()  # default mock rates everything (3, 3)
    facts = [fact(i, f"fact number {i}") for i in range(1, 95)]
    scored = score_importance(facts, "q", ImportanceConfig(), gw, "judge", batch_size=40)
    assert len(scored) == 94
    assert backend.chat_calls == 3  # ceil(94 / 40)
    assert all(f.relevance_raw == 3 for f in scored)


def test_monotonicity_raising_relevance(mock_gateway):
    cfg = ImportanceConfig(alpha=0.8, beta=0.4)
    base = fact(1, "t").with_scores(2, 3, cfg.alpha, cfg.beta)
    up = fact(1, "t").with_scores(3, 3, cfg.alpha, cfg.beta)
    assert abs((up.importance - base.importance) - cfg.alpha / 4) < 1e-12


# -- reference set formation -------------------------------------------------


def scored_fact(i, importance):
    return AtomicFact(fact_id=f"p:fact:{i:04d}", text=f"f{i}", importance=importance)


def test_form_reference_set_topk():
    facts = [scored_fact(1, 1.5), scored_fact(2, 2.0), scored_fact(3, 0.25)]
    ref = form_reference_set("p", facts, SelectionRule(mode="top_k", k_star=1))
    assert [f.importance for f in ref.facts] == [2.0]


def test_form_reference_set_threshold_and_all():
    facts = [scored_fact(1, 1.5), scored_fact(2, 2.0), scored_fact(3, 0.25)]
    thr = form_reference_set("p", facts, SelectionRule(mode="threshold", min_importance=1.0))
    assert [f.importance for f in thr.facts] == [2.0, 1.5]
    every = form_reference_set("p", facts, SelectionRule(mode="all"))
    assert sorted(f.fact_id for f in every.facts) == sorted(f.fact_id for f in facts)


def test_form_reference_set_tie_breaks_on_fact_id():
    facts = [scored_fact(2, 1.0), scored_fact(1, 1.0)]
    ref = form_reference_set("p", facts, SelectionRule(mode="top_k", k_star=1))
    assert ref.facts[0].fact_id == "p:fact:0001"


def test_budget_variants_over_same_scored_facts():
    facts = [scored_fact(i, imp) for i, imp in enumerate([2.0, 1.5, 1.0, 0.5, 0.25, 0.1], 1)]
    for rule in (SelectionRule(mode="top_k", k_star=1),
                 SelectionRule(mode="top_k", k_star=5),
                 SelectionRule(mode="all")):
        ref = form_reference_set("p", facts, rule)
        want = 1 if rule.k_star == 1 else (5 if rule.k_star == 5 else 6)
        assert len(ref.facts) == want


def test_ranking_invariant_under_weight_scaling(mock_gateway):
    rng = random.Random(5)
    for _ in range(30):
        n = rng.randint(1, 12)
        alpha, beta = rng.uniform(0.05, 5), rng.uniform(0.05, 5)
        c = rng.choice([0.001, 0.1, 3.7, 1000.0])
        raws = [(rng.randint(1, 5), rng.randint(1, 5)) for _ in range(n)]
        k = rng.randint(1, n)
        base = [fact(i + 1, f"f{i}").with_scores(r, s, alpha, beta)
                for i, (r, s) in enumerate(raws)]
        scaled = [fact(i + 1, f"f{i}").with_scores(r, s, alpha * c, beta * c)
                  for i, (r, s) in enumerate(raws)]
        rule = SelectionRule(mode="top_k", k_star=k)
        ids_base = {f.fact_id for f in form_reference_set("p", base, rule).facts}
        ids_scaled = {f.fact_id for f in form_reference_set("p", scaled, rule).facts}
        assert ids_base == ids_scaled


def test_property_clustering_yields_partition():
    from hypothesis import given, strategies as st

    @given(
        n=st.integers(min_value=1, max_value=7),
        seed=st.integers(min_value=0, max_value=10_000),
        tau=st.floats(min_value=0.05, max_value=0.95),
    )
    def check(n, seed, tau):
        rng = random.Random(seed)
        sim = [[1.0] * n for _ in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                sim[i][j] = sim[j][i] = rng.random()
        clusters = cluster_average_linkage(sim, tau)
        flattened = sorted(i for c in clusters for i in c)
        assert flattened == list(range(n))           # exact partition
        assert [c[0] for c in clusters] == sorted(c[0] for c in clusters)

    check()


def test_jaccard_similarity_properties():
    assert jaccard_trigram_similarity("abcdef", "abcdef") == 1.0
    assert jaccard_trigram_similarity("", "") == 1.0
    assert 0.0 <= jaccard_trigram_similarity("abcdef", "xyzuvw") < 0.2
