"""Shared fixtures: scripted HTTP servers, fixture sites, and config factories."""
from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from corpusforge.backends import BackendConfig
from corpusforge.config import AppConfig, IndexConfig, PathsConfig, ServeConfig
from corpusforge.crawl import SeedConfig
from corpusforge.extract import ConverterSpec, ExtractedDocument, sha256_hex
from corpusforge.store import CorpusStore, TierRule
from corpusforge.tiers import SecurityTier

# ---------------------------------------------------------------------------
# Scripted HTTP server
# ---------------------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # noqa: D102 - silence
        pass

    def _respond(self):
        server = self.server
        with server.lock:
            server.requests.append((self.command, self.path))
        body_in = b""
        length = self.headers.get("Content-Length")
        if length:
            body_in = self.rfile.read(int(length))
        route = server.routes.get(self.path.split("#")[0])
        if route is None:
            self.send_response(404)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        result = route(self, body_in) if callable(route) else route
        if result is None:
            return  # route handled the wire itself (streaming)
        status, headers, body = result
        if isinstance(body, str):
            body = body.encode("utf-8")
        self.send_response(status)
        for key, value in headers.items():
            self.send_header(key, value)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    do_GET = _respond
    do_POST = _respond


class ScriptedServer:
    """Threaded HTTP server with a mutable route table for tests.

    Routes map a path to (status, headers, body) or to a callable
    (handler, request_body) -> that triple (or None if it wrote the response).
    """

    def __init__(self):
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self._httpd.routes = {}
        self._httpd.requests = []
        self._httpd.lock = threading.Lock()
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def routes(self) -> dict:
        return self._httpd.routes

    @property
    def requests(self) -> list:
        return self._httpd.requests

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    @property
    def host(self) -> str:
        return f"127.0.0.1:{self.port}"

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def web_server():
    server = ScriptedServer()
    yield server
    server.stop()


def html(title: str, body: str) -> tuple[int, dict, str]:
    page = f"<html><head><title>{title}</title></head><body>{body}</body></html>"
    return 200, {"Content-Type": "text/html; charset=utf-8"}, page


def redirect(target: str) -> tuple[int, dict, bytes]:
    return 302, {"Location": target}, b""


FIXTURE_PDF_BYTES = b"%PDF-1.4 fixture-document-bytes"
QUERY_PHRASE = "zirconium flux capacitor calibration"


def install_fixture_site(server: ScriptedServer) -> None:
    """The acceptance fixture site: 10 pages, 2 external links, 1 blacklisted
    path, 1 pdf, and a three-hop redirect chain to the tenth page."""
    page_links = "".join(f'<p><a href="/{ch}.html">{ch}</a></p>' for ch in "abcdefgh")
    server.routes.update(
        {
            "/": html(
                "Fixture Home",
                page_links
                + '<p><a href="/login/private.html">login</a></p>'
                + '<p><a href="/r1">redirected resource</a></p>',
            ),
            "/a.html": html(
                "Page A",
                '<p>Alpha page about detector calibration workflows. '
                '<a href="http://external-one.example/x">partner</a></p>',
            ),
            "/b.html": html(
                "Page B",
                '<p>Beta page about beam energy scans. '
                '<a href="https://external-two.example/y">mirror</a></p>',
            ),
            "/c.html": html(
                "Page C",
                '<p>Gamma page linking the survey report. '
                '<a href="/paper.pdf">survey pdf</a></p>',
            ),
            "/d.html": html(
                "Page D", f"<p>Delta page holds notes on {QUERY_PHRASE} procedures.</p>"
            ),
            "/e.html": html("Page E", "<p>Epsilon page covers run logbooks.</p>"),
            "/f.html": html("Page F", "<p>Zeta page covers trigger menus.</p>"),
            "/g.html": html("Page G", "<p>Eta page covers vertex finding.</p>"),
            "/h.html": html("Page H", "<p>Theta page covers cooling loops.</p>"),
            "/r1": redirect("/r2"),
            "/r2": redirect("/r3"),
            "/r3": redirect("/final.html"),
            "/final.html": html("Final", "<p>The redirected page content survives.</p>"),
            "/paper.pdf": (200, {"Content-Type": "application/pdf"}, FIXTURE_PDF_BYTES),
        }
    )


def install_politeness_site(server: ScriptedServer, pages: int = 20) -> None:
    links = "".join(f'<p><a href="/p{i}.html">p{i}</a></p>' for i in range(1, pages))
    server.routes["/"] = html("Politeness Root", links)
    for i in range(1, pages):
        server.routes[f"/p{i}.html"] = html(f"P{i}", f"<p>Politeness page {i}.</p>")


# ---------------------------------------------------------------------------
# Stub converters
# ---------------------------------------------------------------------------


@pytest.fixture
def stub_converters(tmp_path: Path) -> dict[str, ConverterSpec]:
    """Converter specs backed by tiny scripts the tests fully control."""
    pdf_stub = tmp_path / "stub_pdf.py"
    pdf_stub.write_text(
        "import sys\n"
        "data = open(sys.argv[1], 'rb').read()\n"
        "open(sys.argv[2], 'w').write('converted pdf body (%d bytes)' % len(data))\n"
    )
    docx_stub = tmp_path / "stub_docx.py"
    docx_stub.write_text(
        "import sys\nopen(sys.argv[2], 'w').write('BODY-42')\n"
    )
    ps_stub = tmp_path / "stub_ps.py"
    ps_stub.write_text(
        "import sys\nopen(sys.argv[2], 'wb').write(b'%PDF-intermediate ' + open(sys.argv[1], 'rb').read())\n"
    )
    py = sys.executable
    return {
        "pdf": ConverterSpec("pdf", f"{py} {pdf_stub} {{input}} {{output}}", timeout=20.0),
        "docx": ConverterSpec("docx", f"{py} {docx_stub} {{input}} {{output}}", timeout=20.0),
        "ps": ConverterSpec(
            "ps", f"{py} {ps_stub} {{input}} {{output}}", timeout=20.0,
            output_kind="pdf_intermediate",
        ),
    }


# ---------------------------------------------------------------------------
# Config and corpus factories
# ---------------------------------------------------------------------------


def make_config(
    tmp_path: Path,
    seed_url: str,
    converters: dict[str, ConverterSpec] | None = None,
    tiers: list[TierRule] | None = None,
    backends: dict[str, BackendConfig] | None = None,
    **crawl_overrides,
) -> AppConfig:
    crawl_kwargs = dict(
        seed_urls=[seed_url],
        max_depth=3,
        max_pages=100,
        rate_limit=200.0,
        redirect_limit=5,
        respect_robots=False,
        error_threshold=1,
    )
    crawl_kwargs.update(crawl_overrides)
    if backends is None:
        backends = {"local": BackendConfig(name="local", kind="mock")}
    return AppConfig(
        crawl=SeedConfig(**crawl_kwargs),
        converters=converters or {},
        tiers=tiers or [],
        index=IndexConfig(dimension=64, target_tokens=128, overlap_tokens=16),
        backends=backends,
        serve=ServeConfig(
            default_backend=next(iter(backends)),
            tokens={
                "tok-public": SecurityTier.PUBLIC,
                "tok-collab": SecurityTier.COLLABORATION,
                "tok-ctrl": SecurityTier.CONTROLLED,
            },
        ),
        paths=PathsConfig(
            corpus_dir=str(tmp_path / "corpus"),
            index_file=str(tmp_path / "corpus.cfix"),
            work_dir="",
        ),
    )


def make_document(url: str, body: str, title: str = "Doc") -> ExtractedDocument:
    data = body.encode("utf-8")
    return ExtractedDocument(
        doc_id=sha256_hex(data),
        source_url=url,
        title=title,
        fetched_at="2025-06-01T00:00:00Z",
        format="html",
        markdown_body=body,
        extraction_tool="test",
    )


TIER_RULES = [
    TierRule("http://corpus.example/public/", SecurityTier.PUBLIC),
    TierRule("http://corpus.example/collab/", SecurityTier.COLLABORATION),
    TierRule("http://corpus.example/ctrl/", SecurityTier.CONTROLLED),
]


def build_tier_corpus(tmp_path: Path) -> CorpusStore:
    """Three documents, one per tier, all mentioning a shared probe phrase."""
    store = CorpusStore(tmp_path / "corpus")
    docs = [
        (
            "http://corpus.example/public/overview.html",
            "# Public overview\n\nThe shielding budget baseline is public reading. "
            "Everyone may cite the shielding budget figures.",
        ),
        (
            "http://corpus.example/collab/notes.html",
            "# Collaboration notes\n\nThe shielding budget discussion from the working "
            "group meeting stays within the collaboration.",
        ),
        (
            "http://corpus.example/ctrl/memo.html",
            "# Controlled memo\n\nThe shielding budget exception report is controlled "
            "material with named access only.",
        ),
    ]
    for url, body in docs:
        store.put_document(make_document(url, body), TIER_RULES)
    return store


def read_json(response) -> dict:
    return json.loads(response.content.decode("utf-8"))


def build_retriever_from_docs(
    docs: list[tuple[str, str, SecurityTier]], dimension: int = 64
):
    """In-memory Retriever over (url, body, tier) triples using the hash embedder."""
    from corpusforge.extract import sha256_hex as _sha
    from corpusforge.index import ChunkPolicy, VectorIndex, chunk_text, embed_hash
    from corpusforge.orchestrator import Retriever

    index = VectorIndex(dimension)
    chunk_map: dict[str, dict] = {}
    for url, body, tier in docs:
        doc_id = _sha(body.encode("utf-8"))
        for chunk in chunk_text(body, doc_id, ChunkPolicy(128, 16), tier):
            index.add(chunk.chunk_id, embed_hash(chunk.text, dimension), tier, url)
            chunk_map[chunk.chunk_id] = {
                "chunk_id": chunk.chunk_id,
                "doc_id": doc_id,
                "text": chunk.text,
                "token_count": chunk.token_count,
                "tier": tier.label,
                "source_url": url,
            }
    return Retriever(
        index=index, chunks=chunk_map, embed_query=lambda t: embed_hash(t, dimension)
    )
