"""Pure metric computation from judged labels. No LLM calls live here.

Undefined is a first-class outcome, returned as None: an empty claim set
leaves precision undefined rather than zero, and an empty reference set
leaves recall undefined. Macro averages are arithmetic means over the
prompts where each metric is defined, with per-metric exclusion counts
surfaced in the report. F1 is aggregated per-prompt first and then
averaged, never recomputed from the macro precision/recall pair.
"""

from __future__ import annotations

from typing import Any, Optional, Sequence

from .errors import AllUndefinedError, MisalignedInputsError
from .model import (
    AtomicFact,
    ClaimVerdict,
    CoverageLabel,
    FactCoverage,
    FrozenModel,
    PromptMetrics,
    RunReport,
    VerdictLabel,
)

METRIC_NAMES = ("prec", "rec", "rec_weighted", "f1", "c_rate", "ns_rate")


def prompt_precision(verdicts: Sequence[ClaimVerdict]) -> Optional[float]:
    """Fraction of claims labeled Supported; None when there are no claims."""
    if not verdicts:
        return None
    supported = sum(1 for v in verdicts if v.label is VerdictLabel.SUPPORTED)
    return supported / len(verdicts)


def prompt_rates(verdicts: Sequence[ClaimVerdict]) -> Optional[tuple[float, float]]:
    """(contradiction rate, not-supported rate); None when there are no claims."""
    if not verdicts:
        return None
    n = len(verdicts)
    contradicted = sum(1 for v in verdicts if v.label is VerdictLabel.CONTRADICTED)
    not_supported = sum(1 for v in verdicts if v.label is VerdictLabel.NOT_SUPPORTED)
    return contradicted / n, not_supported / n


def prompt_recall(coverage: Sequence[FactCoverage]) -> Optional[float]:
    """Fraction of reference facts labeled Covered; None on an empty reference set."""
    if not coverage:
        return None
    covered = sum(1 for c in coverage if c.label is CoverageLabel.COVERED)
    return covered / len(coverage)


def prompt_recall_weighted(coverage: Sequence[FactCoverage],
                           facts: Sequence[AtomicFact]) -> Optional[float]:
    """Importance-weighted recall: covered importance mass over total mass.

    Facts and coverage must align 1:1 by fact_id. None when the reference
    set is empty or carries no importance mass.
    """
    if not coverage and not facts:
        return None
    fact_by_id = {f.fact_id: f for f in facts}
    cov_ids = [c.fact_id for c in coverage]
    if len(fact_by_id) != len(facts) or sorted(fact_by_id) != sorted(cov_ids):
        raise MisalignedInputsError("coverage labels and facts disagree on fact_ids")
    total = sum(f.importance or 0.0 for f in facts)
    if total <= 0.0:
        return None
    covered = sum(
        fact_by_id[c.fact_id].importance or 0.0
        for c in coverage if c.label is CoverageLabel.COVERED
    )
    return covered / total


def prompt_f1(prec: Optional[float], rec: Optional[float]) -> Optional[float]:
    """Harmonic mean of precision and recall; 0 when both are 0; None if either is undefined."""
    if prec is None or rec is None:
        return None
    if prec == 0.0 and rec == 0.0:
        return 0.0
    return 2.0 * prec * rec / (prec + rec)


def compute_prompt_metrics(prompt_id: str, verdicts: Sequence[ClaimVerdict],
                           coverage: Sequence[FactCoverage],
                           facts: Sequence[AtomicFact]) -> PromptMetrics:
    """Assemble all per-prompt metrics from judged labels."""
    prec = prompt_precision(verdicts)
    rates = prompt_rates(verdicts)
    rec = prompt_recall(coverage)
    rec_w = prompt_recall_weighted(coverage, facts)
    return PromptMetrics(
        prompt_id=prompt_id,
        n_claims=len(verdicts),
        n_facts=len(coverage),
        n_supported=sum(1 for v in verdicts if v.label is VerdictLabel.SUPPORTED),
        n_contradicted=sum(1 for v in verdicts if v.label is VerdictLabel.CONTRADICTED),
        n_not_supported=sum(1 for v in verdicts if v.label is VerdictLabel.NOT_SUPPORTED),
        n_covered=sum(1 for c in coverage if c.label is CoverageLabel.COVERED),
        prec=prec,
        rec=rec,
        rec_weighted=rec_w,
        f1=prompt_f1(prec, rec),
        c_rate=rates[0] if rates else None,
        ns_rate=rates[1] if rates else None,
    )


def macro_aggregate(run_id: str, per_prompt: Sequence[PromptMetrics],
                    config_snapshot: Optional[dict[str, Any]] = None,
                    failed_prompts: Sequence[str] = ()) -> RunReport:
    """Macro-average per-prompt metrics into a run-level report.

    Each macro value is the mean over prompts where that metric is
    defined; the number of excluded prompts is reported per metric.
    Raises AllUndefinedError when no prompt defines any metric.
    """
    if not per_prompt or all(
        all(getattr(m, name) is None for name in METRIC_NAMES) for m in per_prompt
    ):
        raise AllUndefinedError("no prompt produced a defined metric")
    macros: dict[str, Optional[float]] = {}
    excluded: dict[str, int] = {}
    for name in METRIC_NAMES:
        values = [v for m in per_prompt if (v := getattr(m, name)) is not None]
        macros[f"macro_{name}"] = sum(values) / len(values) if values else None
        excluded[name] = len(per_prompt) - len(values)
    avg_claims = sum(m.n_claims for m in per_prompt) / len(per_prompt)
    avg_facts = sum(m.n_facts for m in per_prompt) / len(per_prompt)
    rho = avg_claims / avg_facts if avg_facts > 0 else None
    return RunReport(
        run_id=run_id,
        per_prompt=tuple(per_prompt),
        avg_claims=avg_claims,
        avg_facts=avg_facts,
        rho=rho,
        excluded=excluded,
        failed_prompts=tuple(failed_prompts),
        config_snapshot=config_snapshot or {},
        **macros,
    )


WEIGHTINGS = (
    ("combined", 1.0, 1.0),
    ("relevance_only", 1.0, 0.0),
    ("salience_only", 0.0, 1.0),
)


class BudgetRecallRow(FrozenModel):
    """Macro recall at one fact budget under each importance weighting."""

    budget: str
    combined: Optional[float] = None
    relevance_only: Optional[float] = None
    salience_only: Optional[float] = None
    delta_co_sal: Optional[float] = None
    delta_co_rel: Optional[float] = None


def _reweighted_importance(fact: AtomicFact, alpha: float, beta: float) -> float:
    r = fact.relevance_norm if fact.relevance_norm is not None else 0.0
    s = fact.salience_norm if fact.salience_norm is not None else 0.0
    return alpha * r + beta * s


def _recall_at(facts: Sequence[AtomicFact], covered_ids: set[str],
               alpha: float, beta: float, k: Optional[int]) -> Optional[float]:
    if not facts:
        return None
    ranked = sorted(facts, key=lambda f: (-_reweighted_importance(f, alpha, beta), f.fact_id))
    top = ranked if k is None else ranked[:k]
    return sum(1 for f in top if f.fact_id in covered_ids) / len(top)


def recall_at_budgets(instances: Sequence[tuple[Sequence[AtomicFact], Sequence[FactCoverage]]],
                      budgets: Sequence[Optional[int]] = (1, 5, None)) -> list[BudgetRecallRow]:
    """Recall per fact budget under combined / relevance-only / salience-only ranking.

    For each weighting the reference ranking is recomputed from the
    stored normalized ratings; coverage labels stay fixed. A budget of
    None means the full reference set. Values are macro means across the
    instances where recall is defined; the delta columns are combined
    minus salience-only and combined minus relevance-only.
    """
    rows: list[BudgetRecallRow] = []
    for k in budgets:
        per_weighting: dict[str, Optional[float]] = {}
        for name, alpha, beta in WEIGHTINGS:
            values: list[float] = []
            for facts, coverage in instances:
                covered_ids = {c.fact_id for c in coverage if c.label is CoverageLabel.COVERED}
                r = _recall_at(facts, covered_ids, alpha, beta, k)
                if r is not None:
                    values.append(r)
            per_weighting[name] = sum(values) / len(values) if values else None
        co = per_weighting["combined"]
        sal = per_weighting["salience_only"]
        rel = per_weighting["relevance_only"]
        rows.append(BudgetRecallRow(
            budget=str(k) if k is not None else "all",
            combined=co,
            relevance_only=rel,
            salience_only=sal,
            delta_co_sal=(co - sal) if co is not None and sal is not None else None,
            delta_co_rel=(co - rel) if co is not None and rel is not None else None,
        ))
    return rows
