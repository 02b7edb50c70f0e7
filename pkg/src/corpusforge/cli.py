"""corpusforge command line: harvest | index | serve | ask | bench.

Exit codes: 0 success, 1 operational failure (crawl errors over threshold,
unreachable services), 2 configuration or usage errors.
"""
from __future__ import annotations

import sys
from pathlib import Path

import click
import httpx
from filelock import FileLock, Timeout

from .backends import BackendError, build_registry, measure_throughput
from .config import AppConfig, ConfigError, load_config
from .orchestrator import (
    HeaderError,
    StageFailure,
    UnknownBackend,
    execute,
    plan,
    validate_header,
)
from .pipeline import build_defaults, build_retriever, run_harvest, run_index
from .store import CorpusStore, stats_report
from .tiers import SecurityTier

CONFIG_ERROR_EXIT = 2
OPERATIONAL_ERROR_EXIT = 1


def _load(config_path: str) -> AppConfig:
    try:
        return load_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(CONFIG_ERROR_EXIT)


def _corpus_lock(config: AppConfig) -> FileLock:
    corpus_dir = Path(config.paths.corpus_dir)
    corpus_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(str(corpus_dir / ".corpusforge.lock"))


@click.group()
def cli() -> None:
    """Harvest a web domain, index it, and serve tier-aware question answering."""


@cli.command()
@click.option("--config", "config_path", default="corpusforge.toml", show_default=True)
def harvest(config_path: str) -> None:
    """Crawl the configured domain into the local corpus and print statistics."""
    config = _load(config_path)
    lock = _corpus_lock(config)
    try:
        with lock.acquire(timeout=0):
            stats, store = run_harvest(config)
    except Timeout:
        click.echo("another command holds the corpus lock", err=True)
        sys.exit(OPERATIONAL_ERROR_EXIT)
    click.echo(stats_report(store, stats))
    if stats.errors >= config.crawl.error_threshold:
        sys.exit(OPERATIONAL_ERROR_EXIT)


@cli.command(name="index")
@click.option("--config", "config_path", default="corpusforge.toml", show_default=True)
def index_cmd(config_path: str) -> None:
    """Chunk and embed the corpus into the vector index file."""
    config = _load(config_path)
    lock = _corpus_lock(config)
    try:
        with lock.acquire(timeout=0):
            docs, chunks = run_index(config, warn=lambda msg: click.echo(f"warning: {msg}", err=True))
    except Timeout:
        click.echo("another command holds the corpus lock", err=True)
        sys.exit(OPERATIONAL_ERROR_EXIT)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(OPERATIONAL_ERROR_EXIT)
    click.echo(f"indexed {docs} documents into {chunks} chunks -> {config.paths.index_file}")


@cli.command()
@click.option("--config", "config_path", default="corpusforge.toml", show_default=True)
@click.option("--host", default=None, help="Override the configured listen host.")
@click.option("--port", default=None, type=int, help="Override the configured listen port.")
def serve(config_path: str, host: str | None, port: int | None) -> None:
    """Run the HTTP service over the built index."""
    import uvicorn

    from .service import build_app

    config = _load(config_path)
    if not config.backends:
        click.echo("config error: [serve] requires at least one backend", err=True)
        sys.exit(CONFIG_ERROR_EXIT)
    if not Path(config.paths.index_file).exists():
        click.echo(f"error: index file {config.paths.index_file} not found", err=True)
        sys.exit(OPERATIONAL_ERROR_EXIT)
    registry = build_registry(list(config.backends.values()))
    retriever = build_retriever(config, registry)
    store = CorpusStore(Path(config.paths.corpus_dir))
    ui_dir = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
    app = build_app(config, registry, retriever, store, build_defaults(config), ui_dir=ui_dir)
    cfg_host, _, cfg_port = config.serve.listen.partition(":")
    uvicorn.run(app, host=host or cfg_host, port=port or int(cfg_port or 8321))


@cli.command()
@click.argument("question")
@click.option("--config", "config_path", default="corpusforge.toml", show_default=True)
@click.option("--token", default=None, help="Bearer token (remote) or tier token (local).")
@click.option("--k", default=None, type=int, help="Retrieval depth override.")
@click.option("--backend", default=None, help="Generation backend override.")
@click.option("--trace", is_flag=True, help="Print the per-stage trace table.")
@click.option("--local", "local_mode", is_flag=True, help="Run in process instead of over HTTP.")
@click.option("--url", default=None, help="Service base URL (default: config listen address).")
def ask(question, config_path, token, k, backend, trace, local_mode, url) -> None:
    """Ask one question and print the answer with its sources."""
    config = _load(config_path)
    if backend is not None and backend not in config.backends:
        click.echo(f"usage error: UnknownBackend: {backend!r}", err=True)
        sys.exit(CONFIG_ERROR_EXIT)
    if local_mode:
        payload = _ask_local(config, question, token, k, backend)
    else:
        payload = _ask_remote(config, question, token, k, backend, url)
    click.echo(payload["answer"])
    click.echo("Sources:")
    for citation in payload["citations"]:
        click.echo(f"  - {citation['source_url']} ({citation['chunk_id']})")
    if trace:
        click.echo("Trace:")
        for t in payload["traces"]:
            click.echo(
                f"  [{t['stage_index']}] {t['kind']:<10} backend={t['backend'] or '-':<12} "
                f"in={t['input_tokens']:<6} out={t['output_tokens']:<6} "
                f"dur={t['duration_ms']}ms status={t['status']}"
            )


def _mcp_override(config: AppConfig, k, backend) -> dict | None:
    if k is None and backend is None:
        return None
    stack = [
        {"kind": "retrieve", "params": {"k": k or config.serve.retrieve_k}},
        {"kind": "infer", "backends": [backend or config.serve.default_backend], "params": {}},
    ]
    budgets = {
        "0": config.serve.default_budgets[0],
        "1": config.serve.default_budgets[1],
    }
    return {"stack": stack, "budgets": budgets}


def _ask_local(config, question, token, k, backend) -> dict:
    from .service import answer_to_wire

    registry = build_registry(list(config.backends.values()))
    try:
        retriever = build_retriever(config, registry)
    except (OSError, ConfigError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(OPERATIONAL_ERROR_EXIT)
    tier = config.serve.tokens.get(token, SecurityTier.PUBLIC) if token else SecurityTier.PUBLIC
    try:
        header = validate_header(
            _mcp_override(config, k, backend), tier, set(registry), build_defaults(config)
        )
        answer = execute(plan(header), registry, retriever, question)
    except UnknownBackend as exc:
        click.echo(f"usage error: {exc}", err=True)
        sys.exit(CONFIG_ERROR_EXIT)
    except (HeaderError, StageFailure) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(OPERATIONAL_ERROR_EXIT)
    return answer_to_wire(answer)


def _ask_remote(config, question, token, k, backend, url) -> dict:
    base = url or f"http://{config.serve.listen}"
    body: dict = {"question": question}
    mcp = _mcp_override(config, k, backend)
    if mcp is not None:
        body["mcp"] = mcp
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    try:
        resp = httpx.post(base.rstrip("/") + "/ask", json=body, headers=headers, timeout=60.0)
    except httpx.HTTPError as exc:
        click.echo(f"error: service unreachable: {exc}", err=True)
        sys.exit(OPERATIONAL_ERROR_EXIT)
    if resp.status_code != 200:
        click.echo(f"error: service returned {resp.status_code}: {resp.text[:200]}", err=True)
        sys.exit(OPERATIONAL_ERROR_EXIT)
    return resp.json()


@cli.command()
@click.option("--config", "config_path", default="corpusforge.toml", show_default=True)
@click.option("--backend", "backend_names", multiple=True, help="Backend(s) to measure.")
@click.option("--prompts", "prompts_path", default=None, help="File with one prompt per line.")
@click.option("-n", "repetitions", default=1, type=int, help="Repetitions over the prompt list.")
def bench(config_path, backend_names, prompts_path, repetitions) -> None:
    """Measure sequential generation throughput (tokens/sec) per backend."""
    if repetitions < 1:
        click.echo("usage error: -n must be >= 1", err=True)
        sys.exit(CONFIG_ERROR_EXIT)
    config = _load(config_path)
    names = list(backend_names) or list(config.backends)
    for name in names:
        if name not in config.backends:
            click.echo(f"usage error: UnknownBackend: {name!r}", err=True)
            sys.exit(CONFIG_ERROR_EXIT)
    if prompts_path:
        prompts = [
            line for line in Path(prompts_path).read_text(encoding="utf-8").splitlines() if line
        ]
    else:
        prompts = ["Describe the corpus in one paragraph."]
    if not prompts:
        click.echo("usage error: prompt file is empty", err=True)
        sys.exit(CONFIG_ERROR_EXIT)
    registry = build_registry(list(config.backends.values()))
    summaries = []
    failed = False
    for name in names:
        try:
            samples, summary = measure_throughput(registry[name], prompts, repetitions)
        except BackendError as exc:
            click.echo(f"{name}: unreachable ({exc})")
            failed = True
            continue
        summaries.append(summary)
        for i, s in enumerate(samples):
            click.echo(
                f"{name} sample {i}: {s.completion_tokens} tok / {s.duration_s * 1000:.0f} ms "
                f"= {s.tokens_per_second:.1f} tok/s"
            )
        if summary.samples == 0:
            failed = True
    click.echo("backend          samples errors  mean tok/s   p50 tok/s   p95 tok/s")
    for summary in sorted(summaries, key=lambda s: -(s.mean_tps or 0.0)):
        mean = f"{summary.mean_tps:.1f}" if summary.mean_tps is not None else "-"
        p50 = f"{summary.p50_tps:.1f}" if summary.p50_tps is not None else "-"
        p95 = f"{summary.p95_tps:.1f}" if summary.p95_tps is not None else "-"
        click.echo(
            f"{summary.backend:<16} {summary.samples:>7} {summary.errors:>6} "
            f"{mean:>11} {p50:>11} {p95:>11}"
        )
    if failed:
        sys.exit(OPERATIONAL_ERROR_EXIT)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
