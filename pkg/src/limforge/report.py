"""Report emission: per-paper evaluation records rolled into corpus tables.

Every emitted file embeds the config hash of the run that produced it.
Corpus precision/recall/F1 are computed per paper first and then averaged,
because corpus-level values cannot be reconstructed from the coverage
percentages alone; the emitted header states this.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from statistics import mean
from typing import Sequence

logger = logging.getLogger(__name__)

CORPUS_COLUMNS = (
    "R-L",
    "BS",
    "JS",
    "CS",
    "C_GT",
    "C_LLM",
    "Prec.",
    "Recall",
    "F1",
)
EXTRACTION_COLUMNS = ("CS", "P", "R", "F1", "Fuzzy")

AVERAGING_NOTE = (
    "per-paper precision/recall/F1 averaged across papers; "
    "not derivable from C_GT/C_LLM"
)


class ReportError(Exception):
    """Raised when a report is requested over unusable inputs."""


@dataclass(frozen=True)
class ReportRow:
    """One corpus-level table row; None renders as NA."""

    label: str
    papers: int
    rougeL: float | None
    contextual: float | None
    jaccard: float | None
    cosine: float | None
    c_gt: float | None
    c_llm: float | None
    precision: float | None
    recall: float | None
    f1: float | None

    def values(self) -> tuple[float | None, ...]:
        # Order mirrors CORPUS_COLUMNS.
        return (
            self.rougeL,
            self.contextual,
            self.jaccard,
            self.cosine,
            self.c_gt,
            self.c_llm,
            self.precision,
            self.recall,
            self.f1,
        )


def _mean_or_none(values: Sequence[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return mean(present) if present else None


def _scaled(value: float | None) -> float | None:
    return None if value is None else 100.0 * value


def empty_row(label: str) -> ReportRow:
    return ReportRow(
        label=label,
        papers=0,
        rougeL=None,
        contextual=None,
        jaccard=None,
        cosine=None,
        c_gt=None,
        c_llm=None,
        precision=None,
        recall=None,
        f1=None,
    )


def corpus_row(
    label: str, evaluations: Sequence[dict], tp_mode: str = "dedup_matching"
) -> ReportRow:
    """Roll per-paper evaluation records into one table row.

    Text metrics are averaged over papers that have matched pairs; coverage
    and P/R/F1 are averaged over every paper. Coverage and text metrics are
    scaled to percentages, P/R/F1 stay in [0, 1].
    """
    if not evaluations:
        return empty_row(label)
    coverages = [e["coverage"][tp_mode] for e in evaluations]
    performances = [e["performance"] for e in evaluations]
    return ReportRow(
        label=label,
        papers=len(evaluations),
        rougeL=_scaled(_mean_or_none([p["rougeL"] for p in performances])),
        contextual=_scaled(_mean_or_none([p["contextual_f"] for p in performances])),
        jaccard=_scaled(_mean_or_none([p["jaccard"] for p in performances])),
        cosine=_scaled(_mean_or_none([p["cosine"] for p in performances])),
        c_gt=_scaled(mean(c["a_gi"] for c in coverages)),
        c_llm=_scaled(mean(c["a_hi"] for c in coverages)),
        precision=mean(c["precision"] for c in coverages),
        recall=mean(c["recall"] for c in coverages),
        f1=mean(c["f1"] for c in coverages),
    )


def format_value(value: float | None) -> str:
    return "NA" if value is None else f"{value:.2f}"


def corpus_csv(rows: Sequence[ReportRow], config_hash: str, tp_mode: str) -> str:
    lines = [
        f"# config {config_hash}",
        f"# tp_mode {tp_mode}; {AVERAGING_NOTE}",
        "cell,papers," + ",".join(CORPUS_COLUMNS),
    ]
    for row in rows:
        cells = [row.label, str(row.papers)]
        cells.extend(format_value(v) for v in row.values())
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def corpus_markdown(rows: Sequence[ReportRow], config_hash: str, tp_mode: str) -> str:
    header = ["cell", "papers", *CORPUS_COLUMNS]
    lines = [
        "# Limitation generation report",
        "",
        f"- config: `{config_hash}`",
        f"- tp mode: {tp_mode}",
        f"- averaging: {AVERAGING_NOTE}",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
    ]
    for row in rows:
        cells = [row.label, str(row.papers)]
        cells.extend(format_value(v) for v in row.values())
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def extraction_csv(rows: Sequence[tuple[str, dict]], config_hash: str) -> str:
    """Per-paper extraction-quality table; rows are (paper_id, quality dict)."""
    lines = [
        f"# config {config_hash}",
        "paper," + ",".join(EXTRACTION_COLUMNS),
    ]
    for paper_id, quality in rows:
        values = (
            quality["cosine"],
            quality["precision"],
            quality["recall"],
            quality["f1"],
            quality["fuzzy"],
        )
        lines.append(",".join([paper_id, *(format_value(v) for v in values)]))
    return "\n".join(lines) + "\n"


def load_evaluations(run_dir: str | Path) -> list[dict]:
    """Per-paper evaluation records under a run directory, ordered by paper id."""
    root = Path(run_dir) / "papers"
    if not root.is_dir():
        return []
    records = []
    for path in sorted(root.glob("*/evaluate.json")):
        records.append(json.loads(path.read_text(encoding="utf-8")))
    return records


def emit_report(
    run_dir: str | Path,
    formats: Sequence[str] = ("csv", "markdown"),
    label: str | None = None,
) -> list[Path]:
    """Write corpus report files for one completed run directory.

    An incomplete run (papers present but not all evaluated) still emits,
    with a logged warning; a run with no evaluations emits an NA row.
    """
    root = Path(run_dir)
    meta = json.loads((root / "run.json").read_text(encoding="utf-8"))
    config_hash = meta["config_hash"]
    tp_mode = meta["tp_mode"]
    evaluations = load_evaluations(root)
    expected = meta.get("paper_ids", [])
    if expected and len(evaluations) < len(expected):
        logger.warning(
            "partial report: %d of %d papers evaluated", len(evaluations), len(expected)
        )
    row_label = label if label is not None else meta.get("label", "run")
    row = corpus_row(row_label, evaluations, tp_mode)
    written: list[Path] = []
    if "csv" in formats:
        path = root / "report.csv"
        path.write_text(corpus_csv([row], config_hash, tp_mode), encoding="utf-8")
        written.append(path)
    if "markdown" in formats:
        path = root / "report.md"
        path.write_text(corpus_markdown([row], config_hash, tp_mode), encoding="utf-8")
        written.append(path)
    return written
