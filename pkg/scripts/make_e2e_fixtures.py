"""Rebuild the offline e2e fixture bundle and its golden run directory.

Runs the full pipeline once with the deterministic rule responder, recording
every chat reply and citation-API response as replay fixtures, then freezes
the resulting run directory as the golden tree. Rerun after any change to
prompts, fixtures, or artifact formats; review the diff before committing.
"""

import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from e2e_responder import (  # noqa: E402
    HandlerHTTPClient,
    rule_responder,
    write_snapshot,
    write_source_corpus,
)
from llm_stubs import ScriptedBackend  # noqa: E402

from limforge.citations import RecordingHTTPClient  # noqa: E402
from limforge.config import PATH_FIELDS, PipelineConfig, render_config  # noqa: E402
from limforge.corpus import CorpusStore  # noqa: E402
from limforge.gateway import LLMGateway, RecordingBackend  # noqa: E402
from limforge.pipeline import (  # noqa: E402
    ExperimentMatrix,
    MatrixCell,
    ingest_corpus,
    run_matrix,
    run_pipeline,
)

BUNDLE = ROOT / "tests" / "data" / "e2e"
GOLDEN = ROOT / "tests" / "data" / "e2e_golden"


def main() -> int:
    for stale in (BUNDLE, GOLDEN):
        if stale.exists():
            shutil.rmtree(stale)
    BUNDLE.mkdir(parents=True)

    write_source_corpus(BUNDLE / "src")
    write_snapshot(BUNDLE / "snapshot.json")
    portable = replace(PipelineConfig(), **{name: "" for name in PATH_FIELDS})
    (BUNDLE / "config.ini").write_text(render_config(portable), encoding="utf-8")

    workdir = Path(tempfile.mkdtemp(prefix="limforge-e2e-record-"))
    config = replace(
        PipelineConfig(),
        corpus_dir=str(workdir / "corpus"),
        run_dir=str(workdir / "runs"),
        fixture_dir=str(BUNDLE / "fixtures"),
        snapshot_path=str(BUNDLE / "snapshot.json"),
    )
    ids = ingest_corpus(BUNDLE / "src", CorpusStore(config.corpus_dir))
    backend = RecordingBackend(ScriptedBackend(rule_responder), BUNDLE / "fixtures")
    gateway = LLMGateway(backend, config.embed_model)
    http_client = RecordingHTTPClient(HandlerHTTPClient(), BUNDLE / "fixtures")
    result = run_pipeline(
        config, paper_ids=ids, gateway=gateway, http_client=http_client, now=""
    )
    statuses = {r.status for r in result.stage_results}
    if statuses != {"done"}:
        raise SystemExit(f"recording run did not complete cleanly: {statuses}")

    # Also record the traffic a two-cell comparison needs; the replayed
    # matrix command covers a retrieval-free cell alongside the main one.
    matrix = ExperimentMatrix(cells=(MatrixCell("none"), MatrixCell("cited_in_by")))
    matrix_result = run_matrix(
        matrix, config, paper_ids=ids, gateway=gateway, http_client=http_client, now=""
    )
    matrix_statuses = {r.status for run in matrix_result.runs for r in run.stage_results}
    if "failed" in matrix_statuses:
        raise SystemExit(f"matrix recording did not complete cleanly: {matrix_statuses}")

    # Hashed embeddings are recomputed at replay time; their fixtures are dead weight.
    embed_dir = BUNDLE / "fixtures" / "embed"
    if embed_dir.exists():
        shutil.rmtree(embed_dir)

    GOLDEN.mkdir(parents=True)
    shutil.copytree(result.run_dir, GOLDEN / result.run_dir.name)
    shutil.rmtree(workdir)

    chat_count = len(list((BUNDLE / "fixtures" / "chat").glob("*.txt")))
    http_count = len(list((BUNDLE / "fixtures" / "http").glob("*.json")))
    golden_files = len([p for p in (GOLDEN / result.run_dir.name).rglob("*") if p.is_file()])
    print(f"bundle: {BUNDLE}")
    print(f"  chat fixtures: {chat_count}")
    print(f"  http fixtures (incl. request records): {http_count}")
    print(f"golden run: {GOLDEN / result.run_dir.name} ({golden_files} files)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
