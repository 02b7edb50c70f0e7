"""Domain-bounded breadth-first crawler.

Manages the URL frontier, enforces scope/blacklist filters and per-host rate
limits, follows redirects hop by hop (each hop re-enters scope checks), and
accumulates crawl statistics. Fetching is abstracted behind a small protocol
so tests can point the crawler at local fixture servers.
"""
from __future__ import annotations

import enum
import threading
import time
import urllib.robotparser
from collections import deque
from dataclasses import dataclass, field
from fnmatch import fnmatch
from typing import Callable, Protocol
from urllib.parse import urljoin, urlsplit, urlunsplit

import httpx

DEFAULT_BLACKLIST = ("/calendar", "/login")
BODY_CAP_BYTES = 64 * 1024 * 1024

DOCUMENT_EXTENSIONS = frozenset({"pdf", "docx", "doc", "pptx", "ppt", "ps", "eps"})
_HTMLISH_EXTENSIONS = frozenset({"html", "htm", "php", "asp"})
_MIME_TO_EXTENSION = {
    "application/pdf": "pdf",
    "application/postscript": "ps",
    "application/msword": "doc",
    "application/vnd.ms-powerpoint": "ppt",
    "application/vnd.openxmlformats-officedocument.wordprocessingml.document": "docx",
    "application/vnd.openxmlformats-officedocument.presentationml.presentation": "pptx",
}


class UrlError(ValueError):
    pass


class CrawlConfigError(ValueError):
    pass


class FetchError(Exception):
    pass


# ---------------------------------------------------------------------------
# URL normalization and scoping
# ---------------------------------------------------------------------------

_UNRESERVED = frozenset(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~"
)


def _remove_dot_segments(path: str) -> str:
    # RFC 3986 section 5.2.4
    rest = path
    output: list[str] = []
    while rest:
        if rest.startswith("../"):
            rest = rest[3:]
        elif rest.startswith("./"):
            rest = rest[2:]
        elif rest.startswith("/./"):
            rest = "/" + rest[3:]
        elif rest == "/.":
            rest = "/"
        elif rest.startswith("/../"):
            rest = "/" + rest[4:]
            if output:
                output.pop()
        elif rest == "/..":
            rest = "/"
            if output:
                output.pop()
        elif rest in (".", ".."):
            rest = ""
        else:
            cut = rest.find("/", 1) if rest.startswith("/") else rest.find("/")
            if cut == -1:
                output.append(rest)
                rest = ""
            else:
                output.append(rest[:cut])
                rest = rest[cut:]
    return "".join(output) or "/"


def _decode_unreserved(path: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(path):
        if path[i] == "%" and i + 3 <= len(path):
            hexpair = path[i + 1 : i + 3]
            try:
                ch = chr(int(hexpair, 16))
            except ValueError:
                out.append(path[i])
                i += 1
                continue
            if ch in _UNRESERVED:
                out.append(ch)
            else:
                out.append(path[i : i + 3])
            i += 3
        else:
            out.append(path[i])
            i += 1
    return "".join(out)


def normalize_url(raw: str, base: str | None = None) -> str:
    """Canonicalize a URL: lowercase scheme/host, drop default port and
    fragment, collapse dot segments, decode unreserved percent-escapes, and
    keep the query string byte for byte.

    Non-http(s) schemes are not an error here; scope checks classify them.
    """
    if not raw or not raw.strip():
        raise UrlError("empty URL")
    raw = raw.strip()
    absolute = urljoin(base, raw) if base else raw
    try:
        parts = urlsplit(absolute)
    except ValueError as exc:
        raise UrlError(f"malformed URL {raw!r}: {exc}") from exc
    scheme = parts.scheme.lower()
    if not scheme:
        raise UrlError(f"relative URL {raw!r} without a base")
    if scheme not in ("http", "https"):
        return absolute
    try:
        host = parts.hostname
        port = parts.port
    except ValueError as exc:
        raise UrlError(f"malformed authority in {raw!r}: {exc}") from exc
    if not host:
        raise UrlError(f"URL {raw!r} has no host")
    default_port = 80 if scheme == "http" else 443
    netloc = host if port in (None, default_port) else f"{host}:{port}"
    if parts.username:
        userinfo = parts.username + (f":{parts.password}" if parts.password else "")
        netloc = f"{userinfo}@{netloc}"
    path = parts.path or "/"
    if not path.startswith("/"):
        path = "/" + path
    path = _decode_unreserved(_remove_dot_segments(path))
    return urlunsplit((scheme, netloc, path, parts.query, ""))


class Scope(enum.Enum):
    ACCEPT = "accept"
    REJECT_EXTERNAL = "reject_external"
    REJECT_BLACKLIST = "reject_blacklist"
    REJECT_SCHEME = "reject_scheme"


@dataclass
class SeedConfig:
    seed_urls: list[str]
    allowed_hosts: set[str] = field(default_factory=set)
    blacklist_patterns: list[str] = field(default_factory=lambda: list(DEFAULT_BLACKLIST))
    max_depth: int = 3
    max_pages: int = 500
    rate_limit: float = 5.0  # requests per second per host
    redirect_limit: int = 5
    user_agent: str = "corpusforge/0.1"
    fetch_timeout: float = 10.0
    allow_subdomains: bool = False
    respect_robots: bool = True
    workers: int = 1
    error_threshold: int = 1  # harvest exits nonzero when errors >= threshold

    def __post_init__(self) -> None:
        if not self.seed_urls:
            raise CrawlConfigError("seed_urls must be non-empty")
        if self.rate_limit <= 0:
            raise CrawlConfigError("rate_limit must be positive")
        if self.max_pages < 1:
            raise CrawlConfigError("max_pages must be positive")
        if self.max_depth < 0 or self.redirect_limit < 0:
            raise CrawlConfigError("max_depth and redirect_limit must be non-negative")
        if self.workers < 1:
            raise CrawlConfigError("workers must be >= 1")
        normalized = [normalize_url(u) for u in self.seed_urls]
        self.seed_urls = normalized
        if not self.allowed_hosts:
            self.allowed_hosts = {urlsplit(u).netloc for u in normalized}
        for url in normalized:
            if not _host_allowed(urlsplit(url).netloc, self.allowed_hosts, self.allow_subdomains):
                raise CrawlConfigError(f"seed host of {url} not in allowed_hosts")


def _host_allowed(netloc: str, allowed: set[str], allow_subdomains: bool) -> bool:
    if netloc in allowed:
        return True
    if not allow_subdomains:
        return False
    hostname = netloc.rsplit(":", 1)[0] if ":" in netloc else netloc
    for entry in allowed:
        entry_host = entry.rsplit(":", 1)[0] if ":" in entry else entry
        if hostname.endswith("." + entry_host):
            return True
    return False


def in_scope(url: str, config: SeedConfig) -> Scope:
    """Scope decision for a canonical URL; checks apply in a fixed order:
    scheme, then host, then blacklist."""
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https"):
        return Scope.REJECT_SCHEME
    if not _host_allowed(parts.netloc, config.allowed_hosts, config.allow_subdomains):
        return Scope.REJECT_EXTERNAL
    path = parts.path or "/"
    for pattern in config.blacklist_patterns:
        if any(ch in pattern for ch in "*?["):
            if fnmatch(path, pattern):
                return Scope.REJECT_BLACKLIST
        elif pattern in path:
            return Scope.REJECT_BLACKLIST
    return Scope.ACCEPT


@dataclass
class TargetClass:
    kind: str  # html_page | document | skip
    extension: str | None = None

    def __post_init__(self) -> None:
        if self.kind == "document" and not self.extension:
            raise ValueError("document targets must carry an extension")


def classify_target(url: str, content_type: str | None = None) -> TargetClass:
    """Classify a fetch target by path extension; a recognized Content-Type
    wins over the extension when the two disagree."""
    if content_type:
        ct = content_type.split(";", 1)[0].strip().lower()
        if ct.startswith("text/html"):
            return TargetClass("html_page")
        if ct in _MIME_TO_EXTENSION:
            return TargetClass("document", _MIME_TO_EXTENSION[ct])
    segment = urlsplit(url).path.rsplit("/", 1)[-1]
    ext = segment.rsplit(".", 1)[-1].lower() if "." in segment else None
    if ext in DOCUMENT_EXTENSIONS:
        return TargetClass("document", ext)
    if ext is None or ext in _HTMLISH_EXTENSIONS:
        return TargetClass("html_page")
    return TargetClass("skip")


# ---------------------------------------------------------------------------
# Politeness
# ---------------------------------------------------------------------------


class RateGate:
    """Per-host request spacing: consecutive permissions for one host are at
    least 1/rate apart; hosts never delay each other."""

    def __init__(self, rate_limit: float):
        if rate_limit <= 0:
            raise ValueError("rate_limit must be positive")
        self.interval = 1.0 / rate_limit
        self._next_slot: dict[str, float] = {}
        self._lock = threading.Lock()

    def permit(self, host: str) -> None:
        with self._lock:
            now = time.monotonic()
            slot = self._next_slot.get(host, now)
            if slot < now:
                slot = now
            self._next_slot[host] = slot + self.interval
        delay = slot - time.monotonic()
        if delay > 0:
            time.sleep(delay)


class Fetcher(Protocol):
    def fetch(self, url: str, *, timeout: float, user_agent: str) -> "FetchResponse":
        ...


@dataclass
class FetchResponse:
    status_code: int
    headers: dict[str, str]  # lowercase keys
    content: bytes

    @property
    def content_type(self) -> str | None:
        return self.headers.get("content-type")

    @property
    def location(self) -> str | None:
        return self.headers.get("location")


class HttpxFetcher:
    """Default HTTP fetcher; does not follow redirects (the crawler counts hops)."""

    def __init__(self):
        self._client = httpx.Client(follow_redirects=False)

    def fetch(self, url: str, *, timeout: float, user_agent: str) -> FetchResponse:
        try:
            resp = self._client.get(url, timeout=timeout, headers={"User-Agent": user_agent})
        except httpx.HTTPError as exc:
            raise FetchError(str(exc)) from exc
        if len(resp.content) > BODY_CAP_BYTES:
            raise FetchError(f"body exceeds {BODY_CAP_BYTES} bytes: {url}")
        return FetchResponse(
            status_code=resp.status_code,
            headers={k.lower(): v for k, v in resp.headers.items()},
            content=resp.content,
        )

    def close(self) -> None:
        self._client.close()


class RobotsCache:
    """robots.txt rules fetched once per host; fetch failures mean allow-all."""

    def __init__(self, fetcher: Fetcher, config: SeedConfig, gate: RateGate):
        self._fetcher = fetcher
        self._config = config
        self._gate = gate
        self._parsers: dict[str, urllib.robotparser.RobotFileParser | None] = {}
        self._lock = threading.Lock()

    def allowed(self, url: str) -> bool:
        if not self._config.respect_robots:
            return True
        parts = urlsplit(url)
        key = f"{parts.scheme}://{parts.netloc}"
        with self._lock:
            if key not in self._parsers:
                self._parsers[key] = self._load(parts.scheme, parts.netloc)
            parser = self._parsers[key]
        if parser is None:
            return True
        return parser.can_fetch(self._config.user_agent, url)

    def _load(self, scheme: str, netloc: str):
        robots_url = f"{scheme}://{netloc}/robots.txt"
        try:
            self._gate.permit(netloc)
            resp = self._fetcher.fetch(
                robots_url, timeout=self._config.fetch_timeout, user_agent=self._config.user_agent
            )
        except FetchError:
            return None
        if resp.status_code != 200:
            return None
        parser = urllib.robotparser.RobotFileParser()
        parser.parse(resp.content.decode("utf-8", "replace").splitlines())
        return parser


# ---------------------------------------------------------------------------
# Crawl state and loop
# ---------------------------------------------------------------------------


@dataclass
class UrlRecord:
    canonical_url: str
    discovered_from: str | None
    depth: int
    status: str = "pending"  # pending | fetched | redirected | filtered_external |
    #                          filtered_blacklist | filtered_scheme | error
    http_status: int | None = None
    redirect_target: str | None = None
    target_class: TargetClass | None = None
    via_robots: bool = False


@dataclass
class CrawlStats:
    pages_fetched: int = 0
    documents_fetched: int = 0
    redirects_followed: int = 0
    filtered_external: int = 0
    filtered_blacklist: int = 0
    filtered_scheme: int = 0
    errors: int = 0
    extension_frequency: dict[str, int] = field(default_factory=dict)
    duration_s: float = 0.0
    # supplementary observability (conservation check, robots flag)
    discovered: int = 0
    pending_at_cap: int = 0
    robots_blocked: int = 0

    def conserved(self) -> bool:
        return self.discovered == (
            self.pages_fetched
            + self.documents_fetched
            + self.filtered_external
            + self.filtered_blacklist
            + self.filtered_scheme
            + self.errors
            + self.pending_at_cap
        )


# Sink contract: called with (url, body bytes, target class, content_type);
# returns raw outlinks for html pages, None for documents.
Sink = Callable[..., "list[str] | None"]


class Crawler:
    def __init__(self, config: SeedConfig, fetcher: Fetcher, sink: Sink):
        self.config = config
        self.fetcher = fetcher
        self.sink = sink
        self.stats = CrawlStats()
        self.records: dict[str, UrlRecord] = {}
        self.rate_gate = RateGate(config.rate_limit)
        self.robots = RobotsCache(fetcher, config, self.rate_gate)
        self.fetch_log: list[tuple[str, float]] = []  # (host, monotonic time)
        self._frontier: deque[UrlRecord] = deque()
        self._visited: set[str] = set()
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._in_flight = 0
        self._fetch_slots_used = 0

    # -- discovery ---------------------------------------------------------

    def _discover(self, raw: str, base: str | None, from_url: str | None, depth: int) -> None:
        try:
            url = normalize_url(raw, base)
        except UrlError:
            return  # unparseable href: never becomes a URL, not counted
        with self._lock:
            if url in self._visited:
                return  # first discovery wins
            self._visited.add(url)
            self.stats.discovered += 1
            record = UrlRecord(url, from_url, depth)
            self.records[url] = record
            scope = in_scope(url, self.config)
            if scope is Scope.REJECT_SCHEME:
                record.status = "filtered_scheme"
                self.stats.filtered_scheme += 1
                return
            if scope is Scope.REJECT_EXTERNAL:
                record.status = "filtered_external"
                self.stats.filtered_external += 1
                return
            if scope is Scope.REJECT_BLACKLIST:
                record.status = "filtered_blacklist"
                self.stats.filtered_blacklist += 1
                return
            record.target_class = classify_target(url)
            if record.target_class.kind == "skip":
                # unsupported file type: grouped with scheme-filtered targets
                record.status = "filtered_scheme"
                self.stats.filtered_scheme += 1
                return
            self._frontier.append(record)
            self._cond.notify()

    # -- fetch chain -------------------------------------------------------

    def _fetch_once(self, url: str) -> FetchResponse:
        host = urlsplit(url).netloc
        self.rate_gate.permit(host)
        with self._lock:
            self.fetch_log.append((host, time.monotonic()))
        return self.fetcher.fetch(
            url, timeout=self.config.fetch_timeout, user_agent=self.config.user_agent
        )

    def _process(self, record: UrlRecord) -> None:
        current = record
        hops = 0
        chain = {record.canonical_url}
        while True:
            if not self.robots.allowed(current.canonical_url):
                with self._lock:
                    current.status = "filtered_blacklist"
                    current.via_robots = True
                    self.stats.filtered_blacklist += 1
                    self.stats.robots_blocked += 1
                return
            try:
                resp = self._fetch_once(current.canonical_url)
            except FetchError:
                with self._lock:
                    current.status = "error"
                    self.stats.errors += 1
                return
            current.http_status = resp.status_code
            if 300 <= resp.status_code < 400 and resp.location:
                hops += 1
                with self._lock:
                    self.stats.redirects_followed += 1
                if hops > self.config.redirect_limit:
                    with self._lock:
                        current.status = "error"
                        self.stats.errors += 1
                    return
                try:
                    target = normalize_url(resp.location, base=current.canonical_url)
                except UrlError:
                    with self._lock:
                        current.status = "error"
                        self.stats.errors += 1
                    return
                current.redirect_target = target
                scope = in_scope(target, self.config)
                if scope is not Scope.ACCEPT:
                    # the dynamic filter applies to every fetch, incl. redirect targets
                    with self._lock:
                        bucket = {
                            Scope.REJECT_EXTERNAL: "filtered_external",
                            Scope.REJECT_BLACKLIST: "filtered_blacklist",
                            Scope.REJECT_SCHEME: "filtered_scheme",
                        }[scope]
                        current.status = bucket
                        setattr(self.stats, bucket, getattr(self.stats, bucket) + 1)
                    return
                if target in chain:  # redirect loop
                    with self._lock:
                        current.status = "error"
                        self.stats.errors += 1
                    return
                chain.add(target)
                with self._lock:
                    current.status = "redirected"
                    if target in self._visited:
                        # the chain is an alias of an already-known URL:
                        # merge the discovery rather than double-count it
                        self.stats.discovered -= 1
                        return
                    self._visited.add(target)
                    next_record = UrlRecord(target, current.canonical_url, record.depth)
                    self.records[target] = next_record
                current = next_record
                continue
            if resp.status_code >= 400:
                with self._lock:
                    current.status = "error"
                    self.stats.errors += 1
                return
            target_class = classify_target(current.canonical_url, resp.content_type)
            current.target_class = target_class
            if target_class.kind == "skip":
                with self._lock:
                    current.status = "filtered_scheme"
                    self.stats.filtered_scheme += 1
                return
            charset = None
            if resp.content_type and "charset=" in resp.content_type:
                charset = resp.content_type.split("charset=", 1)[1].split(";", 1)[0].strip()
            try:
                outlinks = self.sink(
                    current.canonical_url, resp.content, target_class, charset=charset
                )
            except Exception:
                with self._lock:
                    current.status = "error"
                    self.stats.errors += 1
                return
            with self._lock:
                current.status = "fetched"
                if target_class.kind == "document":
                    self.stats.documents_fetched += 1
                    ext = target_class.extension or "unknown"
                    self.stats.extension_frequency[ext] = (
                        self.stats.extension_frequency.get(ext, 0) + 1
                    )
                else:
                    self.stats.pages_fetched += 1
            if target_class.kind == "html_page" and outlinks and record.depth < self.config.max_depth:
                for raw in outlinks:
                    self._discover(raw, current.canonical_url, current.canonical_url, record.depth + 1)
            return

    # -- worker loop -------------------------------------------------------

    def _next_record(self) -> UrlRecord | None:
        with self._cond:
            while True:
                if self._fetch_slots_used >= self.config.max_pages:
                    return None
                if self._frontier:
                    self._fetch_slots_used += 1
                    self._in_flight += 1
                    return self._frontier.popleft()
                if self._in_flight == 0:
                    return None
                self._cond.wait(timeout=0.05)

    def _worker(self) -> None:
        while True:
            record = self._next_record()
            if record is None:
                with self._cond:
                    self._cond.notify_all()
                return
            try:
                self._process(record)
            finally:
                with self._cond:
                    self._in_flight -= 1
                    self._cond.notify_all()

    def run(self) -> CrawlStats:
        started = time.monotonic()
        for seed in self.config.seed_urls:
            self._discover(seed, None, None, 0)
        if self.config.workers == 1:
            self._worker()
        else:
            threads = [
                threading.Thread(target=self._worker, daemon=True)
                for _ in range(self.config.workers)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        with self._lock:
            for record in self._frontier:
                record.status = "pending"
            self.stats.pending_at_cap = len(self._frontier)
            self.stats.duration_s = time.monotonic() - started
        return self.stats


def crawl(config: SeedConfig, fetcher: Fetcher, sink: Sink) -> CrawlStats:
    """Run a breadth-first crawl from the configured seeds and return stats."""
    return Crawler(config, fetcher, sink).run()
