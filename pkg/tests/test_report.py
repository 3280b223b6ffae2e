"""Corpus report assembly: hand-computed row means and exact rendered tables."""

import json
import logging

import pytest

from limforge.report import (
    AVERAGING_NOTE,
    CORPUS_COLUMNS,
    ReportRow,
    corpus_csv,
    corpus_markdown,
    corpus_row,
    emit_report,
    empty_row,
    extraction_csv,
    format_value,
    load_evaluations,
)


def make_eval(
    a_gi: float,
    a_hi: float,
    precision: float,
    recall: float,
    f1: float,
    rougeL: float | None,
    contextual: float | None,
    jaccard: float | None,
    cosine: float | None,
    raw: dict | None = None,
) -> dict:
    cell = {
        "a_gi": a_gi,
        "a_hi": a_hi,
        "tp": 1,
        "fp": 1,
        "fn": 1,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }
    return {
        "coverage": {"dedup_matching": cell, "raw_pairs": raw if raw else dict(cell)},
        "performance": {
            "rougeL": rougeL,
            "contextual_f": contextual,
            "jaccard": jaccard,
            "cosine": cosine,
        },
    }


EVAL_ONE = make_eval(0.5, 0.25, 0.5, 0.5, 0.5, 0.3, 0.8, 0.2, 0.6)
EVAL_TWO = make_eval(1.0, 0.75, 1.0, 0.8, 8.0 / 9.0, 0.5, None, 0.4, 0.8)


class TestCorpusRow:
    def test_hand_computed_means(self):
        row = corpus_row("demo", [EVAL_ONE, EVAL_TWO])
        assert row.papers == 2
        assert row.rougeL == pytest.approx(40.0)
        assert row.jaccard == pytest.approx(30.0)
        assert row.cosine == pytest.approx(70.0)
        assert row.c_gt == pytest.approx(75.0)
        assert row.c_llm == pytest.approx(50.0)
        assert row.precision == pytest.approx(0.75)
        assert row.recall == pytest.approx(0.65)
        assert row.f1 == pytest.approx((0.5 + 8.0 / 9.0) / 2.0)

    def test_contextual_mean_skips_missing_papers(self):
        # Only the first paper has a contextual score; the mean covers it alone.
        row = corpus_row("demo", [EVAL_ONE, EVAL_TWO])
        assert row.contextual == pytest.approx(80.0)

    def test_contextual_all_missing_is_none(self):
        evals = [
            make_eval(1.0, 1.0, 1.0, 1.0, 1.0, 0.5, None, 0.5, 0.5),
            make_eval(1.0, 1.0, 1.0, 1.0, 1.0, 0.5, None, 0.5, 0.5),
        ]
        assert corpus_row("demo", evals).contextual is None

    def test_tp_mode_selects_coverage_cell(self):
        raw = {
            "a_gi": 0.1,
            "a_hi": 0.2,
            "tp": 3,
            "fp": 0,
            "fn": 0,
            "precision": 0.1,
            "recall": 0.2,
            "f1": 0.3,
        }
        record = make_eval(1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, raw=raw)
        row = corpus_row("demo", [record], tp_mode="raw_pairs")
        assert row.c_gt == pytest.approx(10.0)
        assert row.c_llm == pytest.approx(20.0)
        assert row.precision == pytest.approx(0.1)
        assert row.f1 == pytest.approx(0.3)

    def test_empty_input_gives_na_row(self):
        row = corpus_row("demo", [])
        assert row == empty_row("demo")
        assert row.papers == 0
        assert all(v is None for v in row.values())

    def test_values_order_mirrors_columns(self):
        row = corpus_row("demo", [EVAL_ONE])
        assert len(row.values()) == len(CORPUS_COLUMNS)


class TestFormatting:
    def test_two_decimals(self):
        assert format_value(0.666666) == "0.67"
        assert format_value(40.0) == "40.00"
        assert format_value(None) == "NA"

    def test_corpus_csv_exact(self):
        got = corpus_csv([corpus_row("demo", [EVAL_ONE, EVAL_TWO])], "abc123", "dedup_matching")
        expected = (
            "# config abc123\n"
            f"# tp_mode dedup_matching; {AVERAGING_NOTE}\n"
            "cell,papers,R-L,BS,JS,CS,C_GT,C_LLM,Prec.,Recall,F1\n"
            "demo,2,40.00,80.00,30.00,70.00,75.00,50.00,0.75,0.65,0.69\n"
        )
        assert got == expected

    def test_corpus_csv_na_row(self):
        got = corpus_csv([empty_row("x")], "h", "raw_pairs")
        assert got.splitlines()[-1] == "x,0,NA,NA,NA,NA,NA,NA,NA,NA,NA"

    def test_corpus_markdown_table(self):
        got = corpus_markdown([corpus_row("demo", [EVAL_ONE, EVAL_TWO])], "abc123", "dedup_matching")
        assert "- config: `abc123`" in got
        assert f"- averaging: {AVERAGING_NOTE}" in got
        assert "| cell | papers | R-L | BS | JS | CS | C_GT | C_LLM | Prec. | Recall | F1 |" in got
        assert "| demo | 2 | 40.00 | 80.00 | 30.00 | 70.00 | 75.00 | 50.00 | 0.75 | 0.65 | 0.69 |" in got

    def test_extraction_csv_exact(self):
        rows = [
            ("p1", {"cosine": 0.9, "precision": 1.0, "recall": 0.5, "f1": 2.0 / 3.0, "fuzzy": 0.875}),
            ("p2", {"cosine": None, "precision": 0.0, "recall": 0.0, "f1": 0.0, "fuzzy": 0.0}),
        ]
        got = extraction_csv(rows, "beef")
        expected = (
            "# config beef\n"
            "paper,CS,P,R,F1,Fuzzy\n"
            "p1,0.90,1.00,0.50,0.67,0.88\n"
            "p2,NA,0.00,0.00,0.00,0.00\n"
        )
        assert got == expected


def write_run(tmp_path, evaluations: dict[str, dict], paper_ids: list[str]) -> None:
    (tmp_path / "run.json").write_text(
        json.dumps(
            {
                "config_hash": "cafe01",
                "label": "cellname",
                "tp_mode": "dedup_matching",
                "paper_ids": paper_ids,
            }
        ),
        encoding="utf-8",
    )
    for paper_id, record in evaluations.items():
        d = tmp_path / "papers" / paper_id
        d.mkdir(parents=True)
        (d / "evaluate.json").write_text(json.dumps(record), encoding="utf-8")


class TestEmitReport:
    def test_writes_csv_and_markdown(self, tmp_path):
        write_run(tmp_path, {"p1": EVAL_ONE, "p2": EVAL_TWO}, ["p1", "p2"])
        written = emit_report(tmp_path)
        assert [p.name for p in written] == ["report.csv", "report.md"]
        text = (tmp_path / "report.csv").read_text()
        assert text.startswith("# config cafe01\n")
        assert "cellname,2," in text

    def test_partial_run_warns_but_emits(self, tmp_path, caplog):
        write_run(tmp_path, {"p1": EVAL_ONE}, ["p1", "p2"])
        with caplog.at_level(logging.WARNING):
            emit_report(tmp_path)
        assert "partial report: 1 of 2" in caplog.text
        assert "cellname,1," in (tmp_path / "report.csv").read_text()

    def test_no_evaluations_emits_na_row(self, tmp_path):
        write_run(tmp_path, {}, [])
        emit_report(tmp_path)
        assert "cellname,0,NA" in (tmp_path / "report.csv").read_text()

    def test_label_override_and_format_filter(self, tmp_path):
        write_run(tmp_path, {"p1": EVAL_ONE}, ["p1"])
        written = emit_report(tmp_path, formats=("csv",), label="other")
        assert [p.name for p in written] == ["report.csv"]
        assert not (tmp_path / "report.md").exists()
        assert "other,1," in (tmp_path / "report.csv").read_text()

    def test_load_evaluations_ordered(self, tmp_path):
        write_run(tmp_path, {"b": EVAL_TWO, "a": EVAL_ONE}, ["a", "b"])
        records = load_evaluations(tmp_path)
        assert len(records) == 2
        assert records[0] == EVAL_ONE
