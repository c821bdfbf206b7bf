"""Command-line client for the evaluation service.

Every subcommand speaks HTTP to the service layer: against a remote
instance when --server is given, otherwise against an in-process ASGI
app, so local runs need no running server. Exit codes: 0 success, 2
partial failures (some prompts excluded), 1 fatal.
"""

from __future__ import annotations

import asyncio
import json
import logging
import sys
from typing import Any, Optional

import click
import httpx


def _call_service(server: Optional[str], method: str, path: str,
                  payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            resp = client.request(method, path, json=payload)
            return resp.status_code, resp.json()

    from .service.app import create_app

    async def _inproc() -> tuple[int, dict[str, Any]]:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://facteval.internal") as client:
            resp = await client.request(method, path, json=payload)
            return resp.status_code, resp.json()

    return asyncio.run(_inproc())


def _load_config_file(path: Optional[str]) -> dict[str, Any]:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _set_nested(cfg: dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


# (flag name, config path) pairs; flags override config-file values.
_OVERRIDES = [
    ("run_id", "run_id"),
    ("prompts", "prompts_path"),
    ("output_dir", "output_dir"),
    ("source_kind", "knowledge.kind"),
    ("corpus", "knowledge.corpus_path"),
    ("evidence", "knowledge.evidence_path"),
    ("search_endpoint", "knowledge.endpoint"),
    ("top_k", "knowledge.top_k"),
    ("chunk_chars", "knowledge.chunk_chars"),
    ("alpha", "importance.alpha"),
    ("beta", "importance.beta"),
    ("selection_mode", "selection.mode"),
    ("k_star", "selection.k_star"),
    ("min_importance", "selection.min_importance"),
    ("similarity", "dedup.similarity"),
    ("tau", "dedup.tau"),
    ("canonical", "dedup.canonical"),
    ("generator_model", "gateway.generator_model"),
    ("extractor_model", "gateway.extractor_model"),
    ("judge_model", "gateway.judge_model"),
    ("embedding_model", "gateway.embedding_model"),
    ("base_url", "gateway.base_url"),
    ("mock_script", "gateway.mock_script"),
    ("retry_attempts", "gateway.retry_attempts"),
    ("retry_base_delay", "gateway.retry_base_delay"),
    ("max_in_flight", "gateway.max_in_flight"),
    ("cache_root", "cache.root"),
    ("cache_namespace", "cache.namespace"),
    ("shared_cache", "cache.shared"),
    ("concurrency", "concurrency"),
]


def _config_options(fn):
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True),
                     help="JSON run configuration; flags override its values."),
        click.option("--run-id", "run_id", help="Run identifier (filesystem-safe)."),
        click.option("--prompts", help="Prompts JSONL path."),
        click.option("--output-dir", help="Directory holding run artifacts."),
        click.option("--source-kind",
                     type=click.Choice(["local_corpus", "precomputed", "search_adapter"]),
                     help="Knowledge source kind."),
        click.option("--corpus", help="Local corpus JSONL path."),
        click.option("--evidence", help="Precomputed evidence JSONL path."),
        click.option("--search-endpoint", help="Search adapter URL."),
        click.option("--top-k", type=int, help="Documents to retrieve per query."),
        click.option("--chunk-chars", type=int, help="Passage chunk size in characters."),
        click.option("--alpha", type=float, help="Relevance weight."),
        click.option("--beta", type=float, help="Salience weight."),
        click.option("--selection-mode", type=click.Choice(["top_k", "threshold", "all"]),
                     help="Reference set selection rule."),
        click.option("--k-star", type=int, help="Fixed reference budget for top_k."),
        click.option("--min-importance", type=float, help="Threshold selection cutoff."),
        click.option("--similarity", type=click.Choice(["embedding", "jaccard"]),
                     help="Dedup similarity measure."),
        click.option("--tau", type=float, help="Dedup merge threshold in (0,1)."),
        click.option("--canonical", type=click.Choice(["longest_text", "highest_specificity"]),
                     help="Canonical fact rule per dedup cluster."),
        click.option("--generator-model", help="Model generating missing responses."),
        click.option("--extractor-model", help="Model for fact/claim extraction."),
        click.option("--judge-model", help="Model for verification and scoring."),
        click.option("--embedding-model", help="Model for dedup embeddings."),
        click.option("--base-url", help="OpenAI-compatible API base URL."),
        click.option("--mock-script", type=click.Path(exists=True),
                     help="Scripted mock backend; replaces all live LLM calls."),
        click.option("--retry-attempts", type=int, help="Backend attempts per request."),
        click.option("--retry-base-delay", type=float, help="Initial backoff delay (s)."),
        click.option("--max-in-flight", type=int, help="Concurrent backend request cap."),
        click.option("--cache-root", help="Response cache directory."),
        click.option("--cache-namespace", help="Explicit cache namespace."),
        click.option("--shared-cache", is_flag=True, default=None,
                     help="Share one cache namespace across runs."),
        click.option("--concurrency", type=int, help="Prompts processed in parallel."),
        click.option("--server", help="Remote service URL; defaults to in-process."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _build_config(config_file: Optional[str], **flags: Any) -> dict[str, Any]:
    cfg = _load_config_file(config_file)
    for flag, dotted in _OVERRIDES:
        value = flags.get(flag)
        if value is not None:
            _set_nested(cfg, dotted, value)
    return cfg


def _finish(status_code: int, payload: dict[str, Any], *, summary: bool = True) -> None:
    if status_code >= 400:
        click.echo(f"error: {payload.get('detail', payload)}", err=True)
        sys.exit(1)
    if summary:
        click.echo(json.dumps(_summary(payload), indent=2))
    status = payload.get("status", "ok")
    sys.exit(2 if status == "partial" else 0)


def _summary(payload: dict[str, Any]) -> dict[str, Any]:
    report = payload.get("report") or {}
    out = {k: payload.get(k) for k in ("run_id", "run_dir", "stage", "status", "files")
           if payload.get(k) is not None}
    if payload.get("failed_prompts"):
        out["failed_prompts"] = payload["failed_prompts"]
    if report:
        out["macro"] = {k: report.get(k) for k in
                        ("macro_prec", "macro_rec", "macro_rec_weighted", "macro_f1",
                         "macro_c_rate", "macro_ns_rate", "avg_claims", "avg_facts", "rho")}
        out["excluded"] = report.get("excluded")
    return out


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Evaluate long-form LLM responses for factual precision and recall."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@_config_options
def run(config_file: Optional[str], server: Optional[str], **flags: Any) -> None:
    """Run the full pipeline and emit the report."""
    status, payload = _call_service(server, "POST", "/runs",
                                    _build_config(config_file, **flags))
    _finish(status, payload)


def _stage_command(name: str, help_text: str):
    @main.command(name=name, help=help_text)
    @_config_options
    def _cmd(config_file: Optional[str], server: Optional[str], **flags: Any) -> None:
        status, payload = _call_service(server, "POST", f"/stages/{name}",
                                        _build_config(config_file, **flags))
        _finish(status, payload)

    return _cmd


_stage_command("generate", "Fill in missing responses with the generator model.")
_stage_command("build-refs", "Retrieve evidence and build the reference fact sets.")
_stage_command("extract-claims", "Decompose responses into atomic claims.")
_stage_command("judge", "Verify claims and check fact coverage.")
_stage_command("score", "Compute per-prompt metrics and the run report.")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--server", help="Remote service URL; defaults to in-process.")
def resume(run_dir: str, server: Optional[str]) -> None:
    """Resume a run directory, recomputing only missing artifacts."""
    status, payload = _call_service(server, "POST", "/runs/resume", {"run_dir": run_dir})
    _finish(status, payload)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--server", help="Remote service URL; defaults to in-process.")
def report(run_dir: str, server: Optional[str]) -> None:
    """Render report.md and the CSV files from a scored run directory."""
    status, payload = _call_service(server, "POST", "/runs/report", {"run_dir": run_dir})
    if status < 400:
        click.echo(payload.get("markdown", ""))
    _finish(status, payload, summary=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Start the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
