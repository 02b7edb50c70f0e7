"""Single TOML configuration file for all commands and the service."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import BackendConfig
from .crawl import CrawlConfigError, SeedConfig
from .extract import ConverterSpec
from .store import TierRule
from .tiers import SecurityTier


class ConfigError(Exception):
    pass


@dataclass
class IndexConfig:
    dimension: int = 384
    target_tokens: int = 512
    overlap_tokens: int = 64
    embedder: str = "hash"  # "hash" or the name of an embedding-capable backend


@dataclass
class ServeConfig:
    listen: str = "127.0.0.1:8321"
    allow_anonymous: bool = True
    default_backend: str = "local"
    retrieve_k: int = 8
    default_budgets: tuple[int, int] = (2048, 4096)
    tokens: dict[str, SecurityTier] = field(default_factory=dict)


@dataclass
class PathsConfig:
    corpus_dir: str = "corpus"
    index_file: str = "corpus.cfix"
    work_dir: str = ""


@dataclass
class AppConfig:
    crawl: SeedConfig
    converters: dict[str, ConverterSpec] = field(default_factory=dict)
    tiers: list[TierRule] = field(default_factory=list)
    index: IndexConfig = field(default_factory=IndexConfig)
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    serve: ServeConfig = field(default_factory=ServeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


def parse_config(text: str) -> AppConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    try:
        return _build(data)
    except (KeyError, TypeError, ValueError, CrawlConfigError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path | str) -> AppConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))


def _build(data: dict) -> AppConfig:
    crawl_raw = data.get("crawl")
    if not isinstance(crawl_raw, dict):
        raise ConfigError("missing [crawl] section")
    crawl = SeedConfig(
        seed_urls=list(crawl_raw["seed_urls"]),
        allowed_hosts=set(crawl_raw.get("allowed_hosts", ())),
        blacklist_patterns=list(crawl_raw.get("blacklist", ("/calendar", "/login"))),
        max_depth=int(crawl_raw.get("max_depth", 3)),
        max_pages=int(crawl_raw.get("max_pages", 500)),
        rate_limit=float(crawl_raw.get("rate_limit", 5.0)),
        redirect_limit=int(crawl_raw.get("redirect_limit", 5)),
        user_agent=str(crawl_raw.get("user_agent", "corpusforge/0.1")),
        fetch_timeout=float(crawl_raw.get("fetch_timeout", 10.0)),
        allow_subdomains=bool(crawl_raw.get("allow_subdomains", False)),
        respect_robots=bool(crawl_raw.get("respect_robots", True)),
        workers=int(crawl_raw.get("workers", 1)),
        error_threshold=int(crawl_raw.get("error_threshold", 1)),
    )
    converters = {
        fmt: ConverterSpec(
            format=fmt,
            command_template=str(section["command"]),
            timeout=float(section.get("timeout", 60.0)),
            output_kind=str(section.get("output_kind", "markdown")),
        )
        for fmt, section in data.get("converters", {}).items()
    }
    tiers = [
        TierRule(url_prefix=str(rule["prefix"]), tier=SecurityTier.parse(rule["tier"]))
        for rule in data.get("tiers", {}).get("rules", ())
    ]
    index_raw = data.get("index", {})
    index = IndexConfig(
        dimension=int(index_raw.get("dimension", 384)),
        target_tokens=int(index_raw.get("target_tokens", 512)),
        overlap_tokens=int(index_raw.get("overlap_tokens", 64)),
        embedder=str(index_raw.get("embedder", "hash")),
    )
    backends = {}
    for name, section in data.get("backends", {}).items():
        backends[name] = BackendConfig(
            name=name,
            kind=str(section.get("kind", "mock")),
            base_url=section.get("base_url"),
            model=section.get("model"),
            api_key_env=section.get("api_key_env"),
            timeout=float(section.get("timeout", 30.0)),
            max_retries=int(section.get("max_retries", 3)),
            delay_ms=int(section.get("delay_ms", 0)),
            canned_response=section.get("canned_response"),
            fail=bool(section.get("fail", False)),
        )
    serve_raw = data.get("serve", {})
    budgets = serve_raw.get("default_budgets", (2048, 4096))
    if len(budgets) != 2:
        raise ConfigError("serve.default_budgets must have two entries")
    serve = ServeConfig(
        listen=str(serve_raw.get("listen", "127.0.0.1:8321")),
        allow_anonymous=bool(serve_raw.get("allow_anonymous", True)),
        default_backend=str(serve_raw.get("default_backend", "local")),
        retrieve_k=int(serve_raw.get("retrieve_k", 8)),
        default_budgets=(int(budgets[0]), int(budgets[1])),
        tokens={
            token: SecurityTier.parse(tier)
            for token, tier in serve_raw.get("tokens", {}).items()
        },
    )
    paths_raw = data.get("paths", {})
    paths = PathsConfig(
        corpus_dir=str(paths_raw.get("corpus_dir", "corpus")),
        index_file=str(paths_raw.get("index_file", "corpus.cfix")),
        work_dir=str(paths_raw.get("work_dir", "")),
    )
    return AppConfig(
        crawl=crawl,
        converters=converters,
        tiers=tiers,
        index=index,
        backends=backends,
        serve=serve,
        paths=paths,
    )


# ---------------------------------------------------------------------------
# Rendering (inverse of parse_config for the supported sections)
# ---------------------------------------------------------------------------


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot render value of type {type(value).__name__}")


def render_config(config: AppConfig) -> str:
    lines: list[str] = []

    def kv(key: str, value) -> None:
        lines.append(f"{key} = {_toml_value(value)}")

    lines.append("[crawl]")
    c = config.crawl
    kv("seed_urls", c.seed_urls)
    kv("allowed_hosts", sorted(c.allowed_hosts))
    kv("blacklist", c.blacklist_patterns)
    kv("max_depth", c.max_depth)
    kv("max_pages", c.max_pages)
    kv("rate_limit", float(c.rate_limit))
    kv("redirect_limit", c.redirect_limit)
    kv("user_agent", c.user_agent)
    kv("fetch_timeout", float(c.fetch_timeout))
    kv("allow_subdomains", c.allow_subdomains)
    kv("respect_robots", c.respect_robots)
    kv("workers", c.workers)
    kv("error_threshold", c.error_threshold)
    for fmt in config.converters:
        spec = config.converters[fmt]
        lines.append("")
        lines.append(f"[converters.{fmt}]")
        kv("command", spec.command_template)
        kv("timeout", float(spec.timeout))
        kv("output_kind", spec.output_kind)
    lines.append("")
    lines.append("[tiers]")
    rules = [
        "{ prefix = %s, tier = %s }" % (_toml_value(r.url_prefix), _toml_value(r.tier.label))
        for r in config.tiers
    ]
    lines.append("rules = [" + ", ".join(rules) + "]")
    lines.append("")
    lines.append("[index]")
    kv("dimension", config.index.dimension)
    kv("target_tokens", config.index.target_tokens)
    kv("overlap_tokens", config.index.overlap_tokens)
    kv("embedder", config.index.embedder)
    for name in config.backends:
        b = config.backends[name]
        lines.append("")
        lines.append(f"[backends.{name}]")
        kv("kind", b.kind)
        if b.base_url is not None:
            kv("base_url", b.base_url)
        if b.model is not None:
            kv("model", b.model)
        if b.api_key_env is not None:
            kv("api_key_env", b.api_key_env)
        kv("timeout", float(b.timeout))
        kv("max_retries", b.max_retries)
        kv("delay_ms", b.delay_ms)
        if b.canned_response is not None:
            kv("canned_response", b.canned_response)
        kv("fail", b.fail)
    lines.append("")
    lines.append("[serve]")
    s = config.serve
    kv("listen", s.listen)
    kv("allow_anonymous", s.allow_anonymous)
    kv("default_backend", s.default_backend)
    kv("retrieve_k", s.retrieve_k)
    kv("default_budgets", list(s.default_budgets))
    lines.append("")
    lines.append("[serve.tokens]")
    for token in s.tokens:
        kv(token if _bare_key(token) else _toml_value(token), s.tokens[token].label)
    lines.append("")
    lines.append("[paths]")
    kv("corpus_dir", config.paths.corpus_dir)
    kv("index_file", config.paths.index_file)
    kv("work_dir", config.paths.work_dir)
    return "\n".join(lines) + "\n"


def _bare_key(key: str) -> bool:
    return bool(key) and all(ch.isalnum() or ch in "-_" for ch in key)
