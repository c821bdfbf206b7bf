"""Renders a run report into Markdown tables and CSV files.

Emission is pure: every number comes straight from the report or budget
table after the stated rounding, with no recomputation here. Percentages
render with 1 decimal; raw doubles stay in report.json for tests.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Optional

from .metrics import BudgetRecallRow
from .model import RunReport

UNDEFINED_CELL = "—"
UNDEFINED_FOOTNOTE = f"{UNDEFINED_CELL} marks a metric undefined for every evaluable prompt."


def _pct(value: Optional[float]) -> str:
    return UNDEFINED_CELL if value is None else f"{value * 100:.1f}"


def _num(value: Optional[float], digits: int = 3) -> str:
    return UNDEFINED_CELL if value is None else f"{value:.{digits}f}"


def emit_table1(report: RunReport) -> str:
    """Markdown table of macro precision/recall/F1 as percentages."""
    lines = [
        "| Run | Prec | Rec | F1 |",
        "| --- | ---: | ---: | ---: |",
        f"| {report.run_id} | {_pct(report.macro_prec)} | {_pct(report.macro_rec)} "
        f"| {_pct(report.macro_f1)} |",
    ]
    if None in (report.macro_prec, report.macro_rec, report.macro_f1):
        lines.append("")
        lines.append(UNDEFINED_FOOTNOTE)
    return "\n".join(lines)


def emit_tradeoff(report: RunReport) -> str:
    """Markdown table of precision, recall and the claim-to-fact ratio.

    The average reference-set size appears parenthetically in the header.
    """
    header = f"| Run ({report.avg_facts:.1f}) | Prec | Rec | ρ |"
    lines = [
        header,
        "| --- | ---: | ---: | ---: |",
        f"| {report.run_id} | {_pct(report.macro_prec)} | {_pct(report.macro_rec)} "
        f"| {_num(report.rho, 1)} |",
    ]
    return "\n".join(lines)


def emit_label_breakdown(report: RunReport) -> str:
    """CSV of the supported / not-supported / contradicted percentage split."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run", "supported_pct", "not_supported_pct", "contradicted_pct"])
    writer.writerow([
        report.run_id,
        _pct(report.macro_prec),
        _pct(report.macro_ns_rate),
        _pct(report.macro_c_rate),
    ])
    return buf.getvalue()


def emit_recall_budgets(rows: list[BudgetRecallRow]) -> str:
    """CSV of combined-score recall and deltas per fact budget."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["budget", "co", "delta_co_sal", "delta_co_rel"])
    for row in rows:
        writer.writerow([
            row.budget,
            _pct(row.combined),
            _pct(row.delta_co_sal),
            _pct(row.delta_co_rel),
        ])
    return buf.getvalue()


def emit_flat_csv(report: RunReport) -> str:
    """One CSV row per prompt plus a closing macro row, for external plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["prompt_id", "n_claims", "n_facts", "n_supported", "n_contradicted",
                     "n_not_supported", "n_covered", "prec", "rec", "rec_weighted",
                     "f1", "c_rate", "ns_rate"])
    for m in report.per_prompt:
        writer.writerow([
            m.prompt_id, m.n_claims, m.n_facts, m.n_supported, m.n_contradicted,
            m.n_not_supported, m.n_covered, _num(m.prec), _num(m.rec),
            _num(m.rec_weighted), _num(m.f1), _num(m.c_rate), _num(m.ns_rate),
        ])
    writer.writerow([
        "macro", "", "", "", "", "", "",
        _num(report.macro_prec), _num(report.macro_rec), _num(report.macro_rec_weighted),
        _num(report.macro_f1), _num(report.macro_c_rate), _num(report.macro_ns_rate),
    ])
    return buf.getvalue()


def _budget_markdown(rows: list[BudgetRecallRow]) -> str:
    lines = [
        "| Budget | Co | Δ(Co−Sal) | Δ(Co−Rel) |",
        "| --- | ---: | ---: | ---: |",
    ]
    for row in rows:
        lines.append(f"| {row.budget} | {_pct(row.combined)} | {_pct(row.delta_co_sal)} "
                     f"| {_pct(row.delta_co_rel)} |")
    return "\n".join(lines)


def report_markdown(report: RunReport, budget_rows: list[BudgetRecallRow]) -> str:
    n_excluded = dict(report.excluded)
    sections = [
        f"# Run report: {report.run_id}",
        "",
        f"Prompts scored: {len(report.per_prompt)}. Failed: {len(report.failed_prompts)}"
        + (f" ({', '.join(report.failed_prompts)})" if report.failed_prompts else "")
        + f". Avg claims: {report.avg_claims:.2f}. Avg facts: {report.avg_facts:.2f}.",
        "",
        "## Precision / recall / F1 (percent, macro-averaged)",
        "",
        emit_table1(report),
        "",
        "## Claim-to-fact trade-off",
        "",
        emit_tradeoff(report),
        "",
        "## Verdict label breakdown (percent of claims)",
        "",
        "| Run | Supported | Not supported | Contradicted |",
        "| --- | ---: | ---: | ---: |",
        f"| {report.run_id} | {_pct(report.macro_prec)} | {_pct(report.macro_ns_rate)} "
        f"| {_pct(report.macro_c_rate)} |",
        "",
        "## Recall at fact budgets",
        "",
        _budget_markdown(budget_rows),
        "",
        f"Per-metric excluded prompt counts: {n_excluded}.",
        "",
    ]
    return "\n".join(sections)


def emit_report_files(report: RunReport, budget_rows: list[BudgetRecallRow],
                      out_dir: Path) -> list[str]:
    """Write report.md, metrics.csv, breakdown.csv and recall_budgets.csv."""
    files = {
        "report.md": report_markdown(report, budget_rows),
        "metrics.csv": emit_flat_csv(report),
        "breakdown.csv": emit_label_breakdown(report),
        "recall_budgets.csv": emit_recall_budgets(budget_rows),
    }
    for name, content in files.items():
        (out_dir / name).write_text(content, encoding="utf-8")
    return sorted(files)
