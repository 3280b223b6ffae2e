"""Command-line runner: ingest a corpus, run pipeline stages, emit reports.

Every command reads one INI config (defaults when omitted) and honors
``--mock``, which swaps all chat, embedding, and citation traffic for
recorded fixtures so runs are deterministic and offline.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from limforge.config import (
    ConfigError,
    PipelineConfig,
    apply_env,
    config_hash,
    load_config,
)
from limforge.corpus import CorpusStore, IngestError
from limforge.gateway import LLMGateway
from limforge.pipeline import (
    ExperimentMatrix,
    MatrixCell,
    PipelineError,
    ingest_corpus,
    make_gateway,
    run_matrix,
    run_pipeline,
    score_corpus_extractions,
    variant_sweep_matrix,
)
from limforge.rag import INDEX_VARIANTS
from limforge.report import emit_report, extraction_csv

logger = logging.getLogger(__name__)

STAGE_COMMANDS = ("extract", "refine", "enrich", "index", "generate", "evaluate")


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def parse_cell(text: str) -> MatrixCell:
    """Cell syntax: ``variant`` or ``variant/input_scope/retriever_mode``."""
    parts = text.split("/")
    if len(parts) == 1:
        return MatrixCell(parts[0])
    if len(parts) == 3:
        return MatrixCell(parts[0], parts[1], parts[2])
    raise argparse.ArgumentTypeError(
        f"cell {text!r} must be 'variant' or 'variant/scope/mode'"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="limforge",
        description="Extract, generate, and evaluate research-limitation sets.",
    )
    parser.add_argument("--config", metavar="FILE", help="INI config file")
    parser.add_argument(
        "--mock",
        action="store_true",
        help="serve all model and citation traffic from recorded fixtures",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logs")
    commands = parser.add_subparsers(dest="command", required=True)

    cmd = commands.add_parser("ingest", help="load papers, reviews, and gold files")
    cmd.add_argument("--src", required=True, metavar="DIR", help="source corpus directory")

    for name in STAGE_COMMANDS:
        cmd = commands.add_parser(name, help=f"run the pipeline through the {name} stage")
        cmd.add_argument("--papers", nargs="*", metavar="ID", help="subset of paper ids")

    cmd = commands.add_parser("matrix", help="run one pipeline per experiment cell")
    cmd.add_argument(
        "--cells",
        nargs="*",
        type=parse_cell,
        metavar="CELL",
        help="cells as variant[/scope/mode]; default sweeps every index variant",
    )
    cmd.add_argument("--papers", nargs="*", metavar="ID", help="subset of paper ids")

    cmd = commands.add_parser("report", help="re-emit report files for a run directory")
    cmd.add_argument("--run-dir", metavar="DIR", help="default: the config's run directory")
    cmd.add_argument(
        "--formats", nargs="*", choices=("csv", "markdown"), default=("csv", "markdown")
    )
    cmd.add_argument("--label", help="override the row label")

    cmd = commands.add_parser("e2e", help="full offline run against a fixture bundle")
    cmd.add_argument("--fixtures", required=True, metavar="DIR", help="fixture bundle directory")
    cmd.add_argument("--workdir", required=True, metavar="DIR", help="scratch directory for artifacts")
    return parser


def load_cli_config(args: argparse.Namespace) -> PipelineConfig:
    if args.config:
        return load_config(args.config, env=os.environ)
    return apply_env(PipelineConfig())


def make_cli_gateway(config: PipelineConfig, mock: bool) -> LLMGateway:
    return make_gateway(config, mock=mock)


def cmd_ingest(args: argparse.Namespace) -> int:
    config = load_cli_config(args)
    ids = ingest_corpus(args.src, CorpusStore(config.corpus_dir))
    print(f"ingested {len(ids)} papers into {config.corpus_dir}")
    for paper_id in ids:
        print(f"  {paper_id}")
    return 0


def cmd_stage(args: argparse.Namespace) -> int:
    config = load_cli_config(args)
    until = None if args.command == "evaluate" else args.command
    result = run_pipeline(
        config,
        paper_ids=args.papers or None,
        mock=args.mock,
        now="" if args.mock else utc_now(),
        until=until,
    )
    failed = sorted({r.paper_id for r in result.stage_results if r.status == "failed"})
    done = sum(1 for r in result.stage_results if r.status == "done")
    skipped = sum(1 for r in result.stage_results if r.status == "skipped")
    print(f"run {result.config_hash}: {done} stages computed, {skipped} reused")
    if args.command == "extract":
        _write_extraction_quality(config, args.papers or None, args.mock)
    if args.command == "evaluate":
        print((result.run_dir / "report.csv").read_text(encoding="utf-8"), end="")
    if failed:
        print(f"failed papers: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _write_extraction_quality(
    config: PipelineConfig, paper_ids: list[str] | None, mock: bool
) -> None:
    gateway = make_cli_gateway(config, mock)
    rows = score_corpus_extractions(config, gateway, paper_ids)
    if not rows:
        return
    path = Path(config.run_dir) / f"run-{config_hash(config)}" / "extraction.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(extraction_csv(rows, config_hash(config)), encoding="utf-8")
    print(f"extraction quality for {len(rows)} gold papers -> {path.name}")


def cmd_matrix(args: argparse.Namespace) -> int:
    config = load_cli_config(args)
    if args.cells:
        matrix = ExperimentMatrix(cells=tuple(args.cells))
    else:
        matrix = variant_sweep_matrix(config)
    result = run_matrix(
        matrix,
        config,
        paper_ids=args.papers or None,
        mock=args.mock,
        now="" if args.mock else utc_now(),
    )
    print((result.matrix_dir / "comparison.csv").read_text(encoding="utf-8"), end="")
    failed = sorted(
        {r.paper_id for run in result.runs for r in run.stage_results if r.status == "failed"}
    )
    if failed:
        print(f"failed papers: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    config = load_cli_config(args)
    run_dir = args.run_dir or str(
        Path(config.run_dir) / f"run-{config_hash(config)}"
    )
    if not Path(run_dir).is_dir():
        raise PipelineError(f"no run directory at {run_dir}")
    written = emit_report(run_dir, formats=tuple(args.formats), label=args.label)
    for path in written:
        print(path)
    return 0


def cmd_e2e(args: argparse.Namespace) -> int:
    """Offline demonstration run: fixture bundle in, full run directory out.

    The bundle supplies the corpus sources, the citation snapshot, recorded
    model and HTTP traffic, and the config; the workdir receives the corpus
    store and the run directory.
    """
    fixtures = Path(args.fixtures)
    workdir = Path(args.workdir)
    if not fixtures.is_dir():
        raise PipelineError(f"no fixture bundle at {fixtures}")
    # Environment overrides are ignored here: the bundle's config must hash
    # identically everywhere or the replayed fixtures would not match.
    config = load_config(fixtures / "config.ini")
    config = replace(
        config,
        corpus_dir=str(workdir / "corpus"),
        run_dir=str(workdir / "runs"),
        cache_dir="",
        fixture_dir=str(fixtures / "fixtures"),
        snapshot_path=str(fixtures / "snapshot.json"),
    )
    ids = ingest_corpus(fixtures / "src", CorpusStore(config.corpus_dir))
    result = run_pipeline(config, paper_ids=ids, mock=True, now="")
    failed = sorted({r.paper_id for r in result.stage_results if r.status == "failed"})
    if failed:
        print(f"failed papers: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"run directory: {result.run_dir}")
    print((result.run_dir / "report.csv").read_text(encoding="utf-8"), end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "ingest": cmd_ingest,
        "matrix": cmd_matrix,
        "report": cmd_report,
        "e2e": cmd_e2e,
    }
    handler = handlers.get(args.command, cmd_stage)
    try:
        return handler(args)
    except (ConfigError, IngestError, PipelineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
