"""Run the index-variant comparison matrix over a corpus and print the table.

Thin experiment driver: optionally ingests a source directory, then runs one
pipeline per requested cell (all six index variants by default) and prints
the resulting comparison table. With --mock all model and citation traffic
is replayed from the configured fixture directory.
"""

import argparse
import shutil
import sys
from pathlib import Path

from limforge.cli import load_cli_config, parse_cell, utc_now
from limforge.config import ConfigError
from limforge.corpus import CorpusStore, IngestError
from limforge.pipeline import (
    ExperimentMatrix,
    PipelineError,
    ingest_corpus,
    run_matrix,
    variant_sweep_matrix,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", metavar="FILE", help="INI config file")
    parser.add_argument("--src", metavar="DIR", help="ingest this corpus first")
    parser.add_argument(
        "--cells",
        nargs="*",
        type=parse_cell,
        metavar="CELL",
        help="cells as variant[/scope/mode]; default sweeps every index variant",
    )
    parser.add_argument("--papers", nargs="*", metavar="ID", help="subset of paper ids")
    parser.add_argument("--mock", action="store_true", help="replay recorded fixtures")
    parser.add_argument("--out", metavar="FILE", help="also copy the table here")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_cli_config(args)
        if args.src:
            ids = ingest_corpus(args.src, CorpusStore(config.corpus_dir))
            print(f"ingested {len(ids)} papers", file=sys.stderr)
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
    except (ConfigError, IngestError, PipelineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    table = result.matrix_dir / "comparison.csv"
    print(table.read_text(encoding="utf-8"), end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(table, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
