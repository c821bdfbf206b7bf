from __future__ import annotations

import csv
import io

from conftest import make_coverage, make_fact, make_verdicts
from facteval.metrics import BudgetRecallRow, compute_prompt_metrics, macro_aggregate
from facteval.reporting import (
    emit_flat_csv,
    emit_label_breakdown,
    emit_recall_budgets,
    emit_table1,
    emit_tradeoff,
    report_markdown,
)


def report_from(plans):
    per_prompt = []
    for pid, codes, flags in plans:
        per_prompt.append(compute_prompt_metrics(
            pid, make_verdicts(codes), make_coverage(flags),
            [make_fact(i + 1, importance=1.0) for i in range(len(flags))]))
    return macro_aggregate("runA", per_prompt)


def test_table1_renders_percent_one_decimal():
    codes = ["S"] * 2 + ["NS"] * 23            # prec 0.08
    flags = [True] + [False] * 19              # rec 0.05
    report = report_from([("p1", codes, flags)])
    table = emit_table1(report)
    row = table.splitlines()[2]
    assert row.split("|")[2].strip() == "8.0"
    assert row.split("|")[3].strip() == "5.0"
    assert len(table.splitlines()) == 3  # single run row, no footnote


def test_table1_undefined_cell_with_footnote():
    report = report_from([("p1", [], [True, False])])  # precision undefined
    table = emit_table1(report)
    assert "—" in table
    assert "undefined" in table.splitlines()[-1]


def test_tradeoff_header_carries_avg_facts():
    plans = [(f"p{i}", ["S", "S"], [True] * n) for i, n in enumerate([11, 11, 11, 12, 12])]
    report = report_from(plans)
    assert abs(report.avg_facts - 11.4) < 1e-12
    table = emit_tradeoff(report)
    assert "(11.4)" in table.splitlines()[0]


def test_tradeoff_rho_one_decimal():
    report = report_from([("p1", ["S"] * 8, [True])])  # rho = 8 / 1
    table = emit_tradeoff(report)
    assert "| 8.0 |" in table.splitlines()[2]


def test_breakdown_percentages():
    codes = ["S"] * 25 + ["NS"] * 50 + ["C"] * 25
    report = report_from([("p1", codes, [True])])
    rows = list(csv.reader(io.StringIO(emit_label_breakdown(report))))
    assert rows[0] == ["run", "supported_pct", "not_supported_pct", "contradicted_pct"]
    assert rows[1][1:] == ["25.0", "50.0", "25.0"]


def test_breakdown_all_supported():
    report = report_from([("p1", ["S", "S"], [True])])
    rows = list(csv.reader(io.StringIO(emit_label_breakdown(report))))
    assert rows[1][1:] == ["100.0", "0.0", "0.0"]


def test_breakdown_sums_to_100():
    codes = ["S", "C", "NS", "NS", "NS", "C", "S"]
    report = report_from([("p1", codes, [True])])
    rows = list(csv.reader(io.StringIO(emit_label_breakdown(report))))
    total = sum(float(x) for x in rows[1][1:])
    assert abs(total - 100.0) <= 0.1


def test_recall_budgets_csv_matches_rows():
    rows = [
        BudgetRecallRow(budget="1", combined=0.5, relevance_only=0.5, salience_only=0.4,
                        delta_co_sal=0.1, delta_co_rel=0.0),
        BudgetRecallRow(budget="all", combined=0.5, relevance_only=0.5, salience_only=0.5,
                        delta_co_sal=0.0, delta_co_rel=0.0),
    ]
    parsed = list(csv.reader(io.StringIO(emit_recall_budgets(rows))))
    assert parsed[0] == ["budget", "co", "delta_co_sal", "delta_co_rel"]
    assert parsed[1] == ["1", "50.0", "10.0", "0.0"]
    assert parsed[2] == ["all", "50.0", "0.0", "0.0"]


def test_flat_csv_one_row_per_prompt_plus_macro():
    report = report_from([("p1", ["S"], [True]), ("p2", ["NS"], [False])])
    rows = list(csv.reader(io.StringIO(emit_flat_csv(report))))
    assert len(rows) == 4  # header + 2 prompts + macro
    assert rows[1][0] == "p1"
    assert rows[3][0] == "macro"


def test_markdown_contains_all_sections():
    report = report_from([("p1", ["S", "C"], [True, False])])
    rows = [BudgetRecallRow(budget="1", combined=1.0, relevance_only=1.0,
                            salience_only=1.0, delta_co_sal=0.0, delta_co_rel=0.0)]
    md = report_markdown(report, rows)
    assert "# Run report: runA" in md
    assert "## Precision / recall / F1" in md
    assert "## Claim-to-fact trade-off" in md
    assert "## Recall at fact budgets" in md
    assert "Δ(Co−Sal)" in md


def test_emitted_numbers_equal_report_fields_after_rounding():
    report = report_from([("p1", ["S", "S", "NS"], [True, False, True])])
    table = emit_table1(report)
    cell = table.splitlines()[2].split("|")[2].strip()
    assert cell == f"{report.macro_prec * 100:.1f}"
