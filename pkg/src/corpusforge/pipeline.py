"""End-to-end wiring of the subsystems behind the CLI commands."""
from __future__ import annotations

import datetime
from pathlib import Path

import numpy as np

from .backends import Backend, build_registry
from .config import AppConfig, ConfigError
from .crawl import Crawler, CrawlStats, HttpxFetcher, TargetClass
from .extract import ConverterRegistry, extract_html, parse_document
from .index import (
    ChunkPolicy,
    VectorIndex,
    ZeroVector,
    chunk_store_path,
    chunk_text,
    embed_hash,
    load_chunks,
    save_chunks,
)
from .orchestrator import OrchestratorDefaults, Retriever
from .store import CorpusStore
from .tiers import SecurityTier


def now_rfc3339() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def run_harvest(config: AppConfig, fetcher=None) -> tuple[CrawlStats, CorpusStore]:
    """Crawl from the configured seeds, extract every supported format, and
    persist the documents with tier labels."""
    store = CorpusStore(Path(config.paths.corpus_dir))
    converters = ConverterRegistry(
        config.converters,
        workdir=Path(config.paths.work_dir) if config.paths.work_dir else None,
    )
    own_fetcher = fetcher is None
    fetcher = fetcher or HttpxFetcher()

    def sink(url: str, data: bytes, target: TargetClass, charset: str | None = None):
        fetched_at = now_rfc3339()
        if target.kind == "html_page":
            doc, outlinks = extract_html(data, url, fetched_at, declared_charset=charset)
            store.put_document(doc, config.tiers)
            return outlinks
        doc = converters.extract_document(data, target.extension or "", url, fetched_at)
        store.put_document(doc, config.tiers)
        return None

    crawler = Crawler(config.crawl, fetcher, sink)
    try:
        stats = crawler.run()
    finally:
        if own_fetcher and hasattr(fetcher, "close"):
            fetcher.close()
    return stats, store


def _embedder_for(config: AppConfig, registry: dict[str, Backend] | None = None):
    """Query/chunk embedding function per the [index] config."""
    dimension = config.index.dimension
    if config.index.embedder == "hash":
        return lambda text: embed_hash(text, dimension)
    registry = registry or build_registry(list(config.backends.values()))
    backend = registry.get(config.index.embedder)
    if backend is None or not hasattr(backend, "embed"):
        raise ConfigError(
            f"index.embedder {config.index.embedder!r} is not an embedding-capable backend"
        )

    def remote(text: str) -> np.ndarray:
        return backend.embed([text], dimension)[0]

    return remote


def run_index(config: AppConfig, warn=None) -> tuple[int, int]:
    """Chunk and embed every corpus document into the index file.

    Returns (documents indexed, chunks indexed). Chunks with no hashable
    tokens are skipped and reported through the warn callback.
    """
    store = CorpusStore(Path(config.paths.corpus_dir))
    if not store.entries:
        raise ConfigError(f"corpus at {config.paths.corpus_dir} is empty; run harvest first")
    policy = ChunkPolicy(config.index.target_tokens, config.index.overlap_tokens)
    embed = _embedder_for(config)
    index = VectorIndex(config.index.dimension)
    all_chunks = []
    source_urls: dict[str, str] = {}
    docs = 0
    for entry in store.entries.values():
        _, body = parse_document(store.document_text(entry.doc_id))
        source_urls[entry.doc_id] = entry.source_url
        docs += 1
        for chunk in chunk_text(body, entry.doc_id, policy, entry.tier):
            try:
                vector = embed(chunk.text)
            except ZeroVector:
                if warn is not None:
                    warn(f"skipping {chunk.chunk_id}: no embeddable tokens")
                continue
            index.add(chunk.chunk_id, vector, chunk.tier, entry.source_url)
            all_chunks.append(chunk)
    index_path = Path(config.paths.index_file)
    index.save(index_path)
    save_chunks(all_chunks, source_urls, chunk_store_path(index_path))
    return docs, len(index)


def build_retriever(config: AppConfig, registry: dict[str, Backend] | None = None) -> Retriever:
    index_path = Path(config.paths.index_file)
    index = VectorIndex.load(index_path)
    chunks = load_chunks(chunk_store_path(index_path))
    return Retriever(index=index, chunks=chunks, embed_query=_embedder_for(config, registry))


def build_defaults(config: AppConfig) -> OrchestratorDefaults:
    return OrchestratorDefaults(
        default_backend=config.serve.default_backend,
        retrieve_k=config.serve.retrieve_k,
        budgets=config.serve.default_budgets,
    )


def document_for_request(store: CorpusStore, doc_id: str, session_tier: SecurityTier):
    """Tier-checked document lookup: (markdown text, entry) or raises KeyError/PermissionError."""
    entry = store.entries.get(doc_id)
    if entry is None:
        raise KeyError(doc_id)
    if entry.tier > session_tier:
        raise PermissionError(f"document tier {entry.tier.label} above session tier")
    return store.document_text(doc_id), entry
