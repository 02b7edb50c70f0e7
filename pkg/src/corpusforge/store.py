"""Content-addressed corpus store with provenance, dedup, and tier rules.

Layout on disk: `manifest.jsonl` plus `docs/<first-two-hex>/<doc_id>.md`.
The manifest is append-only JSONL; duplicate content fetched from a second
URL is recorded as an alias line rather than a second document.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .extract import ExtractedDocument, parse_document, render_document
from .tiers import SecurityTier

DEFAULT_TIER = SecurityTier.CONTROLLED  # least privilege for unmatched documents


class StoreError(Exception):
    pass


@dataclass
class TierRule:
    url_prefix: str
    tier: SecurityTier


def assign_tier(url: str, rules: list[TierRule]) -> SecurityTier:
    """First matching prefix rule wins; unmatched URLs get the most
    restrictive tier."""
    for rule in rules:
        if url.startswith(rule.url_prefix):
            return rule.tier
    return DEFAULT_TIER


@dataclass
class ManifestEntry:
    doc_id: str
    source_url: str
    relative_path: str
    sha256: str
    tier: SecurityTier
    byte_size: int
    fetched_at: str
    aliases: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "doc",
                "doc_id": self.doc_id,
                "source_url": self.source_url,
                "relative_path": self.relative_path,
                "sha256": self.sha256,
                "tier": self.tier.label,
                "byte_size": self.byte_size,
                "fetched_at": self.fetched_at,
            },
            ensure_ascii=False,
        )


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CorpusStore:
    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.jsonl"
        self.entries: dict[str, ManifestEntry] = {}
        self._load()

    def _load(self) -> None:
        if not self.manifest_path.exists():
            return
        for line in self.manifest_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("kind") == "alias":
                entry = self.entries.get(rec["doc_id"])
                if entry is not None and rec["source_url"] not in entry.aliases:
                    entry.aliases.append(rec["source_url"])
            else:
                self.entries[rec["doc_id"]] = ManifestEntry(
                    doc_id=rec["doc_id"],
                    source_url=rec["source_url"],
                    relative_path=rec["relative_path"],
                    sha256=rec["sha256"],
                    tier=SecurityTier.parse(rec["tier"]),
                    byte_size=rec["byte_size"],
                    fetched_at=rec["fetched_at"],
                )

    def _append_manifest(self, line: str) -> None:
        existing = b""
        if self.manifest_path.exists():
            existing = self.manifest_path.read_bytes()
        _atomic_write(self.manifest_path, existing + line.encode("utf-8") + b"\n")

    def put_document(self, doc: ExtractedDocument, rules: list[TierRule]) -> ManifestEntry:
        """Store a document, deduplicating by content hash.

        A known doc_id seen from a new URL gains an alias; a known doc_id
        from a known URL is a no-op (idempotent re-ingestion).
        """
        entry = self.entries.get(doc.doc_id)
        if entry is not None:
            if doc.source_url != entry.source_url and doc.source_url not in entry.aliases:
                self._append_manifest(
                    json.dumps(
                        {"kind": "alias", "doc_id": doc.doc_id, "source_url": doc.source_url},
                        ensure_ascii=False,
                    )
                )
                entry.aliases.append(doc.source_url)
            return entry
        rendered = render_document(doc).encode("utf-8")
        relative_path = f"docs/{doc.doc_id[:2]}/{doc.doc_id}.md"
        _atomic_write(self.root / relative_path, rendered)
        entry = ManifestEntry(
            doc_id=doc.doc_id,
            source_url=doc.source_url,
            relative_path=relative_path,
            sha256=doc.doc_id,
            tier=assign_tier(doc.source_url, rules),
            byte_size=len(rendered),
            fetched_at=doc.fetched_at,
        )
        self._append_manifest(entry.to_json())
        self.entries[doc.doc_id] = entry
        return entry

    def document_text(self, doc_id: str) -> str:
        entry = self.entries.get(doc_id)
        if entry is None:
            raise StoreError(f"unknown doc_id: {doc_id}")
        return (self.root / entry.relative_path).read_text(encoding="utf-8")


def stats_report(store: CorpusStore, crawl_stats=None) -> str:
    """Human-readable crawl + corpus statistics with deterministic ordering."""
    lines: list[str] = []
    if crawl_stats is not None:
        s = crawl_stats
        lines.append("crawl:")
        lines.append(f"  pages_fetched: {s.pages_fetched}")
        lines.append(f"  documents_fetched: {s.documents_fetched}")
        lines.append(f"  redirects_followed: {s.redirects_followed}")
        lines.append(f"  filtered_external: {s.filtered_external}")
        lines.append(f"  filtered_blacklist: {s.filtered_blacklist} (robots: {s.robots_blocked})")
        lines.append(f"  filtered_scheme: {s.filtered_scheme}")
        lines.append(f"  errors: {s.errors}")
        lines.append(f"  pending_at_cap: {s.pending_at_cap}")
        lines.append(f"  duration_s: {s.duration_s:.2f}")
        lines.append("  extension_frequency:")
        for ext in sorted(s.extension_frequency):
            lines.append(f"    {ext}: {s.extension_frequency[ext]}")
    entries = list(store.entries.values())
    ingests = len(entries) + sum(len(e.aliases) for e in entries)
    by_format: dict[str, int] = {}
    by_tier = {t.label: 0 for t in SecurityTier}
    total_bytes = 0
    for entry in entries:
        fmt = _entry_format(store, entry)
        by_format[fmt] = by_format.get(fmt, 0) + 1
        by_tier[entry.tier.label] += 1
        total_bytes += entry.byte_size
    lines.append("corpus:")
    lines.append(f"  documents: {len(entries)}")
    lines.append(f"  total_bytes: {total_bytes}")
    lines.append(f"  ingests: {ingests}")
    ratio = (ingests / len(entries)) if entries else 0.0
    lines.append(f"  dedup_ratio: {ratio:.2f}:1")
    lines.append("  by_format:")
    for fmt in sorted(by_format):
        lines.append(f"    {fmt}: {by_format[fmt]}")
    lines.append("  by_tier:")
    for tier in sorted(by_tier):
        lines.append(f"    {tier}: {by_tier[tier]}")
    return "\n".join(lines)


def _entry_format(store: CorpusStore, entry: ManifestEntry) -> str:
    try:
        fields, _ = parse_document(store.document_text(entry.doc_id))
        return fields["format"]
    except Exception:
        return "unknown"
