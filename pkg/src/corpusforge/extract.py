"""Convert fetched bytes into cleaned Markdown with a provenance header.

HTML is handled by a single-pass stdlib parser that collects the title, the
outlinks, and the Markdown body in one traversal. Other formats go through
configurable external converter commands (tests use stub scripts).
"""
from __future__ import annotations

import hashlib
import re
import shlex
import shutil
import subprocess
import tempfile
import threading
import unicodedata
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path


class ExtractionError(Exception):
    pass


class EmptyContent(ExtractionError):
    """Nothing survived cleaning; the caller records the URL as an extraction error."""


class ConverterTimeout(ExtractionError):
    pass


class ConverterNonZeroExit(ExtractionError):
    def __init__(self, code: int, stderr: str):
        super().__init__(f"converter exited {code}: {stderr[:200]}")
        self.code = code
        self.stderr = stderr


class MissingOutput(ExtractionError):
    pass


@dataclass
class ExtractedDocument:
    doc_id: str  # lowercase hex sha-256 of the raw fetched bytes
    source_url: str
    title: str
    fetched_at: str  # RFC 3339 UTC
    format: str  # "html" or a document extension
    markdown_body: str
    extraction_tool: str
    warnings: list[str] = field(default_factory=list)


@dataclass
class ConverterSpec:
    format: str
    command_template: str  # must contain {input} and {output}
    timeout: float = 60.0
    output_kind: str = "markdown"  # markdown | plain_text | pdf_intermediate

    def __post_init__(self) -> None:
        if "{input}" not in self.command_template or "{output}" not in self.command_template:
            raise ValueError("converter template must contain {input} and {output}")
        if self.timeout <= 0:
            raise ValueError("converter timeout must be positive")
        if self.output_kind not in ("markdown", "plain_text", "pdf_intermediate"):
            raise ValueError(f"unknown output_kind: {self.output_kind!r}")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# Text cleaning
# ---------------------------------------------------------------------------

_BLANK_RUN_RE = re.compile(r"\n{4,}")  # 4+ newlines = 3+ blank lines


def clean_text(raw: str) -> str:
    """Normalize extracted text: strip control chars (keeping newline/tab),
    normalize CR/LF to LF, collapse runs of 3+ blank lines to one, strip
    trailing whitespace per line, apply Unicode NFC, and trim."""
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    text = "".join(
        ch for ch in text if ch in "\n\t" or unicodedata.category(ch) != "Cc"
    )
    text = unicodedata.normalize("NFC", text)
    text = "\n".join(line.rstrip() for line in text.split("\n"))
    text = _BLANK_RUN_RE.sub("\n\n", text)
    return text.strip()


# ---------------------------------------------------------------------------
# HTML -> Markdown (single parse: title, body, and outlinks in one pass)
# ---------------------------------------------------------------------------

_DROP_TAGS = frozenset({"script", "style", "nav", "header", "footer"})
_HEADING_TAGS = {"h1": 1, "h2": 2, "h3": 3, "h4": 4, "h5": 5, "h6": 6}
_BLOCK_TAGS = frozenset(
    {
        "p", "div", "section", "article", "aside", "main", "ul", "ol", "li",
        "table", "thead", "tbody", "tr", "blockquote", "pre", "dl", "dt",
        "dd", "figure", "figcaption", "form", "hr", "br",
    }
)
_WS_RE = re.compile(r"\s+")


class _PageParser(HTMLParser):
    """One-pass HTML walker building Markdown blocks, outlinks, and the title.

    Outlinks are collected from every anchor, including those inside dropped
    elements (nav links feed the crawler even though nav text is excluded).
    """

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.outlinks: list[str] = []
        self.title_parts: list[str] = []
        self.blocks: list[str] = []
        self._inline: list[str] = []
        self._links: list[tuple[str, list[str]]] = []
        self._drop_depth = 0
        self._in_title = False
        self._title_done = False
        self._heading: int | None = None
        self._bullet = False

    def handle_starttag(self, tag, attrs):
        if tag == "a":
            href = dict(attrs).get("href")
            if href is not None:
                self.outlinks.append(href)
            if not self._drop_depth:
                self._links.append((href or "", []))
            return
        if tag in _DROP_TAGS:
            self._drop_depth += 1
            return
        if self._drop_depth:
            return
        if tag == "title" and not self._title_done:
            self._in_title = True
            return
        if tag in _HEADING_TAGS:
            self._flush()
            self._heading = _HEADING_TAGS[tag]
            return
        if tag in _BLOCK_TAGS:
            self._flush()
            if tag == "li":
                self._bullet = True

    def handle_startendtag(self, tag, attrs):
        if tag == "a":
            href = dict(attrs).get("href")
            if href is not None:
                self.outlinks.append(href)
            return
        if tag in _BLOCK_TAGS:
            if not self._drop_depth:
                self._flush()

    def handle_endtag(self, tag):
        if tag == "a":
            if not self._drop_depth and self._links:
                href, parts = self._links.pop()
                text = _WS_RE.sub(" ", "".join(parts)).strip()
                rendered = f"[{text or href}]({href})" if href else text
                self._emit(rendered)
            return
        if tag in _DROP_TAGS:
            self._drop_depth = max(0, self._drop_depth - 1)
            return
        if self._drop_depth:
            return
        if tag == "title":
            self._in_title = False
            self._title_done = True
            return
        if tag in _HEADING_TAGS or tag in _BLOCK_TAGS:
            self._flush()

    def handle_data(self, data):
        if self._in_title:
            self.title_parts.append(data)
            return
        if self._drop_depth:
            return
        self._emit(data)

    def _emit(self, text: str) -> None:
        if self._links:
            self._links[-1][1].append(text)
        else:
            self._inline.append(text)

    def _flush(self) -> None:
        while self._links:  # unclosed anchor at block boundary
            href, parts = self._links.pop()
            text = _WS_RE.sub(" ", "".join(parts)).strip()
            self._inline.append(f"[{text or href}]({href})" if href else text)
        text = _WS_RE.sub(" ", "".join(self._inline)).strip()
        self._inline = []
        if not text:
            self._heading = None
            self._bullet = False
            return
        if self._heading:
            text = "#" * self._heading + " " + text
            self._heading = None
        elif self._bullet:
            text = "- " + text
        self._bullet = False
        self.blocks.append(text)

    def close(self):
        super().close()
        self._flush()

    @property
    def title(self) -> str:
        return _WS_RE.sub(" ", "".join(self.title_parts)).strip()


_META_CHARSET_RE = re.compile(rb"""charset\s*=\s*["']?([A-Za-z0-9_./:\-]+)""", re.IGNORECASE)


def _decode_html(data: bytes, declared_charset: str | None) -> tuple[str, list[str]]:
    warnings: list[str] = []
    charsets: list[str] = []
    if declared_charset:
        charsets.append(declared_charset)
    m = _META_CHARSET_RE.search(data[:2048])
    if m:
        charsets.append(m.group(1).decode("ascii", "ignore"))
    charsets.append("utf-8")
    for cs in charsets:
        try:
            return data.decode(cs), warnings
        except (UnicodeDecodeError, LookupError):
            continue
    warnings.append("undecodable bytes replaced during lossy utf-8 decode")
    return data.decode("utf-8", errors="replace"), warnings


def extract_html(
    data: bytes,
    url: str,
    fetched_at: str = "",
    declared_charset: str | None = None,
) -> tuple[ExtractedDocument, list[str]]:
    """Extract a Markdown document and the raw outlinks from an HTML page.

    The page is parsed exactly once; outlink normalization and scope checks
    are the crawler's job. Raises EmptyContent when nothing survives cleaning.
    """
    text, warnings = _decode_html(data, declared_charset)
    parser = _PageParser()
    parser.feed(text)
    parser.close()
    body = clean_text("\n\n".join(parser.blocks))
    if not body:
        raise EmptyContent(f"no content after cleaning: {url}")
    doc = ExtractedDocument(
        doc_id=sha256_hex(data),
        source_url=url,
        title=parser.title,
        fetched_at=fetched_at,
        format="html",
        markdown_body=body,
        extraction_tool="stdlib-html-markdown",
        warnings=warnings,
    )
    return doc, parser.outlinks


# ---------------------------------------------------------------------------
# External converters
# ---------------------------------------------------------------------------

# Legacy formats share the modern variant's template slot when not configured.
_FORMAT_ALIASES = {"doc": "docx", "ppt": "pptx", "eps": "ps"}


def convert_external(
    data: bytes,
    fmt: str,
    spec: ConverterSpec,
    workdir: Path | None = None,
    registry: "ConverterRegistry | None" = None,
) -> str:
    """Run the configured converter command over *data* and return its text.

    A pdf_intermediate spec chains its output into the registry's pdf
    converter (the PostScript -> PDF -> Markdown path). Temp files are removed
    on success and on failure.
    """
    tmp = Path(tempfile.mkdtemp(prefix="cf-conv-", dir=workdir))
    try:
        in_path = tmp / f"input.{fmt}"
        out_name = "output.pdf" if spec.output_kind == "pdf_intermediate" else "output.md"
        out_path = tmp / out_name
        in_path.write_bytes(data)
        argv = [
            token.replace("{input}", str(in_path)).replace("{output}", str(out_path))
            for token in shlex.split(spec.command_template)
        ]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=spec.timeout)
        except subprocess.TimeoutExpired:
            raise ConverterTimeout(f"{argv[0]} exceeded {spec.timeout}s on {fmt}") from None
        if proc.returncode != 0:
            raise ConverterNonZeroExit(proc.returncode, proc.stderr.decode("utf-8", "replace"))
        if not out_path.exists():
            raise MissingOutput(f"{argv[0]} produced no {out_name}")
        if spec.output_kind == "pdf_intermediate":
            if registry is None:
                raise ExtractionError("pdf_intermediate output requires a converter registry")
            return registry.convert_text(out_path.read_bytes(), "pdf")
        return out_path.read_text(encoding="utf-8", errors="replace")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


class ConverterRegistry:
    """Converter specs by format, with a process cap shared across threads."""

    def __init__(
        self,
        specs: dict[str, ConverterSpec],
        workdir: Path | None = None,
        max_processes: int = 2,
    ):
        self.specs = dict(specs)
        self.workdir = workdir
        self._gate = threading.Semaphore(max_processes)

    def spec_for(self, fmt: str) -> ConverterSpec:
        spec = self.specs.get(fmt) or self.specs.get(_FORMAT_ALIASES.get(fmt, ""))
        if spec is None:
            raise ExtractionError(f"no converter configured for format {fmt!r}")
        return spec

    def convert_text(self, data: bytes, fmt: str) -> str:
        spec = self.spec_for(fmt)
        with self._gate:
            return convert_external(data, fmt, spec, self.workdir, registry=self)

    def extract_document(self, data: bytes, fmt: str, url: str, fetched_at: str) -> ExtractedDocument:
        raw = self.convert_text(data, fmt)
        body = clean_text(raw)
        if not body:
            raise EmptyContent(f"converter output empty after cleaning: {url}")
        tool = shlex.split(self.spec_for(fmt).command_template)[0]
        return ExtractedDocument(
            doc_id=sha256_hex(data),
            source_url=url,
            title="",
            fetched_at=fetched_at,
            format=fmt,
            markdown_body=body,
            extraction_tool=Path(tool).name,
        )


# ---------------------------------------------------------------------------
# Provenance header
# ---------------------------------------------------------------------------

_HEADER_KEYS = ("source_url", "title", "fetched_at", "format", "doc_id")


def render_document(doc: ExtractedDocument) -> str:
    """Render the document as its front-matter provenance header plus body.

    Byte format is fixed: five `key: value` lines in a set order between
    `---` fences, one blank line, then the Markdown body.
    """
    values = {
        "source_url": doc.source_url,
        "title": doc.title,
        "fetched_at": doc.fetched_at,
        "format": doc.format,
        "doc_id": doc.doc_id,
    }
    for key, value in values.items():
        if "\n" in value:
            raise ValueError(f"header value for {key} contains a newline")
    lines = [f"{key}: {values[key]}" for key in _HEADER_KEYS]
    return "---\n" + "\n".join(lines) + "\n---\n\n" + doc.markdown_body


def parse_document(text: str) -> tuple[dict[str, str], str]:
    """Inverse of render_document: returns (header fields, markdown body)."""
    lines = text.split("\n")
    if len(lines) < 8 or lines[0] != "---" or lines[6] != "---" or lines[7] != "":
        raise ExtractionError("malformed document header")
    fields: dict[str, str] = {}
    for expected, line in zip(_HEADER_KEYS, lines[1:6]):
        prefix = expected + ": "
        if line == expected + ":":
            fields[expected] = ""
        elif line.startswith(prefix):
            fields[expected] = line[len(prefix) :]
        else:
            raise ExtractionError(f"header line {line!r} does not match key {expected!r}")
    return fields, "\n".join(lines[8:])
