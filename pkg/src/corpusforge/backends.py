"""Generation/embedding backend abstraction.

Provides the shared token-counting rule used everywhere budgets or chunk
sizes are computed, a deterministic mock backend for tests, a client for
OpenAI-compatible chat/embedding servers, and a small sequential throughput
measurement harness.
"""
from __future__ import annotations

import json
import math
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import httpx
import numpy as np

BACKOFF_BASE_S = 0.25
BACKOFF_FACTOR = 2.0


class BackendError(Exception):
    """Base class for backend failures."""


class BackendTimeout(BackendError):
    pass


class HTTPStatusError(BackendError):
    def __init__(self, code: int, body_excerpt: str):
        super().__init__(f"HTTP {code}: {body_excerpt}")
        self.code = code
        self.body_excerpt = body_excerpt


class MalformedResponse(BackendError):
    pass


class RetriesExhausted(BackendError):
    def __init__(self, attempts: int, last_error: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class DimensionMismatch(BackendError):
    pass


class ForcedFailure(BackendError):
    """Raised by a mock backend configured to fail."""


def count_tokens(text: str) -> int:
    """Approximate token count: split on whitespace, ceil(utf-8 bytes / 4) per piece.

    This is the single budget/chunk-size rule for the whole system; it is an
    approximation and makes no claim of parity with any model's tokenizer.
    """
    return sum((len(piece.encode("utf-8")) + 3) // 4 for piece in text.split())


def truncate_to_tokens(text: str, limit: int) -> str:
    """Largest whitespace-piece prefix of *text* whose token count is <= limit."""
    if limit <= 0:
        return ""
    total = 0
    kept: list[str] = []
    for piece in text.split():
        cost = (len(piece.encode("utf-8")) + 3) // 4
        if total + cost > limit:
            break
        total += cost
        kept.append(piece)
    if len(kept) == len(text.split()):
        return text
    return " ".join(kept)


# Provenance line convention: every retrieved chunk placed into a prompt is
# framed by one of these lines so backends (and the mock echo) can see exactly
# which chunks reached the model.
_PROVENANCE_RE = re.compile(r"^\[chunk (\S+) \| (\S+)\]$")


def format_provenance_line(chunk_id: str, source_url: str) -> str:
    return f"[chunk {chunk_id} | {source_url}]"


def find_cited_chunk_ids(prompt: str) -> list[str]:
    """Chunk ids of all provenance lines in the prompt, in order."""
    ids = []
    for line in prompt.splitlines():
        m = _PROVENANCE_RE.match(line)
        if m:
            ids.append(m.group(1))
    return ids


@dataclass
class BackendConfig:
    name: str
    kind: str  # "mock" | "openai_compatible"
    base_url: str | None = None
    model: str | None = None
    api_key_env: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    # mock-only knobs
    delay_ms: int = 0
    canned_response: str | None = None
    fail: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "openai_compatible"):
            raise ValueError(f"unknown backend kind: {self.kind!r}")
        if self.kind == "openai_compatible" and not (self.base_url and self.model):
            raise ValueError(f"backend {self.name!r}: openai_compatible requires base_url and model")


@dataclass
class Usage:
    prompt_tokens: int
    completion_tokens: int


@dataclass
class GenerationResult:
    text: str
    usage: Usage
    attempts: int = 1


class MockBackend:
    """Deterministic test double for a decoder LLM.

    Output is "MOCK[<name>]: <comma-joined chunk ids from the prompt's
    provenance lines> | <last prompt line>", or the configured canned
    response. A fixed delay and a forced-failure flag support fan-out and
    throughput tests.
    """

    def __init__(self, config: BackendConfig):
        self.config = config
        self.name = config.name

    def generate(self, prompt: str, params: dict | None = None) -> GenerationResult:
        if self.config.delay_ms:
            time.sleep(self.config.delay_ms / 1000.0)
        if self.config.fail:
            raise ForcedFailure(f"backend {self.name} configured to fail")
        if self.config.canned_response is not None:
            text = self.config.canned_response
        else:
            ids = find_cited_chunk_ids(prompt)
            lines = prompt.splitlines()
            last = lines[-1] if lines else ""
            cited = ", ".join(ids) if ids else "no-context"
            text = f"MOCK[{self.name}]: {cited} | {last}"
        return GenerationResult(text=text, usage=Usage(count_tokens(prompt), count_tokens(text)))


class OpenAICompatibleBackend:
    """Client for servers speaking the de-facto OpenAI wire protocol.

    Retries transport errors and 5xx responses with exponential backoff
    (250 ms base, factor 2); 4xx responses fail immediately.
    """

    def __init__(self, config: BackendConfig):
        self.config = config
        self.name = config.name

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            import os

            key = os.environ.get(self.config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_with_retries(self, url: str, payload: dict) -> tuple[httpx.Response, int]:
        attempts = 0
        last_error: Exception | None = None
        while attempts <= self.config.max_retries:
            attempts += 1
            try:
                resp = httpx.post(
                    url, json=payload, headers=self._headers(), timeout=self.config.timeout
                )
            except httpx.TimeoutException as exc:
                last_error = BackendTimeout(str(exc))
            except httpx.TransportError as exc:
                last_error = BackendError(str(exc))
            else:
                if resp.status_code >= 500:
                    last_error = HTTPStatusError(resp.status_code, resp.text[:200])
                elif resp.status_code >= 400:
                    raise HTTPStatusError(resp.status_code, resp.text[:200])
                else:
                    return resp, attempts
            if attempts <= self.config.max_retries:
                time.sleep(BACKOFF_BASE_S * BACKOFF_FACTOR ** (attempts - 1))
        assert last_error is not None
        if isinstance(last_error, BackendTimeout) and self.config.max_retries == 0:
            raise last_error
        raise RetriesExhausted(attempts, last_error)

    def chat_complete(
        self,
        messages: Sequence[tuple[str, str]],
        params: dict | None = None,
        on_delta: Callable[[str], None] | None = None,
    ) -> GenerationResult:
        params = params or {}
        url = (self.config.base_url or "").rstrip("/") + "/v1/chat/completions"
        payload = {
            "model": self.config.model,
            "messages": [{"role": role, "content": content} for role, content in messages],
            "temperature": params.get("temperature", 0.0),
        }
        if "max_tokens" in params:
            payload["max_tokens"] = params["max_tokens"]
        if on_delta is not None:
            return self._chat_streaming(url, payload, on_delta, messages)
        resp, attempts = self._post_with_retries(url, payload)
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad chat response: {exc}") from exc
        usage = self._usage_from(body, messages, text)
        return GenerationResult(text=text, usage=usage, attempts=attempts)

    def _chat_streaming(self, url, payload, on_delta, messages) -> GenerationResult:
        payload = dict(payload)
        payload["stream"] = True
        attempts = 0
        last_error: Exception | None = None
        while attempts <= self.config.max_retries:
            attempts += 1
            try:
                parts: list[str] = []
                with httpx.stream(
                    "POST", url, json=payload, headers=self._headers(), timeout=self.config.timeout
                ) as resp:
                    if resp.status_code >= 400:
                        resp.read()
                        err = HTTPStatusError(resp.status_code, resp.text[:200])
                        if resp.status_code >= 500:
                            last_error = err
                            raise _Retry()
                        raise err
                    for line in resp.iter_lines():
                        if not line.startswith("data:"):
                            continue
                        data = line[len("data:") :].strip()
                        if data == "[DONE]":
                            break
                        try:
                            event = json.loads(data)
                            delta = event["choices"][0].get("delta", {}).get("content")
                        except (KeyError, IndexError, TypeError, ValueError) as exc:
                            raise MalformedResponse(f"bad stream event: {exc}") from exc
                        if delta:
                            parts.append(delta)
                            on_delta(delta)
                text = "".join(parts)
                return GenerationResult(
                    text=text,
                    usage=Usage(sum(count_tokens(c) for _, c in messages), count_tokens(text)),
                    attempts=attempts,
                )
            except _Retry:
                pass
            except httpx.TimeoutException as exc:
                last_error = BackendTimeout(str(exc))
            except httpx.TransportError as exc:
                last_error = BackendError(str(exc))
            if attempts <= self.config.max_retries:
                time.sleep(BACKOFF_BASE_S * BACKOFF_FACTOR ** (attempts - 1))
        assert last_error is not None
        raise RetriesExhausted(attempts, last_error)

    @staticmethod
    def _usage_from(body: dict, messages, text: str) -> Usage:
        usage = body.get("usage") or {}
        return Usage(
            prompt_tokens=usage.get(
                "prompt_tokens", sum(count_tokens(c) for _, c in messages)
            ),
            completion_tokens=usage.get("completion_tokens", count_tokens(text)),
        )

    def generate(self, prompt: str, params: dict | None = None) -> GenerationResult:
        return self.chat_complete([("user", prompt)], params)

    def embed(self, texts: Sequence[str], dimension: int) -> list[np.ndarray]:
        """Embed *texts* via /v1/embeddings; vectors are L2-normalized locally."""
        if not texts:
            return []
        url = (self.config.base_url or "").rstrip("/") + "/v1/embeddings"
        payload = {"model": self.config.model, "input": list(texts)}
        resp, _ = self._post_with_retries(url, payload)
        try:
            body = resp.json()
            rows = sorted(body["data"], key=lambda item: item["index"])
            raw = [np.asarray(row["embedding"], dtype=np.float64) for row in rows]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad embeddings response: {exc}") from exc
        if len(raw) != len(texts):
            raise MalformedResponse(f"expected {len(texts)} vectors, got {len(raw)}")
        out = []
        for vec in raw:
            if vec.shape != (dimension,):
                raise DimensionMismatch(f"got dimension {vec.shape[0]}, index wants {dimension}")
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise MalformedResponse("zero vector from embedding server")
            if abs(norm - 1.0) > 1e-6:
                vec = vec / norm
            out.append(vec)
        return out


class _Retry(Exception):
    pass


Backend = MockBackend | OpenAICompatibleBackend


def build_backend(config: BackendConfig) -> Backend:
    if config.kind == "mock":
        return MockBackend(config)
    return OpenAICompatibleBackend(config)


def build_registry(configs: Sequence[BackendConfig]) -> dict[str, Backend]:
    registry: dict[str, Backend] = {}
    for cfg in configs:
        if cfg.name in registry:
            raise ValueError(f"duplicate backend name: {cfg.name!r}")
        registry[cfg.name] = build_backend(cfg)
    return registry


@dataclass
class ThroughputSample:
    backend: str
    prompt_tokens: int
    completion_tokens: int
    duration_s: float
    tokens_per_second: float

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if not math.isfinite(self.tokens_per_second):
            raise ValueError("tokens_per_second must be finite")


@dataclass
class ThroughputSummary:
    backend: str
    samples: int = 0
    errors: int = 0
    mean_tps: float | None = None
    p50_tps: float | None = None
    p95_tps: float | None = None


def measure_throughput(
    backend: Backend, prompts: Sequence[str], repetitions: int = 1
) -> tuple[list[ThroughputSample], ThroughputSummary]:
    """Sequential generation benchmark: one request in flight at a time.

    Per-request failures are counted and excluded from the summary.
    """
    samples: list[ThroughputSample] = []
    errors = 0
    for _ in range(repetitions):
        for prompt in prompts:
            start = time.perf_counter()
            try:
                result = backend.generate(prompt)
            except BackendError:
                errors += 1
                continue
            duration = max(time.perf_counter() - start, 1e-9)
            samples.append(
                ThroughputSample(
                    backend=backend.name,
                    prompt_tokens=result.usage.prompt_tokens,
                    completion_tokens=result.usage.completion_tokens,
                    duration_s=duration,
                    tokens_per_second=result.usage.completion_tokens / duration,
                )
            )
    summary = ThroughputSummary(backend=backend.name, samples=len(samples), errors=errors)
    if samples:
        rates = sorted(s.tokens_per_second for s in samples)
        summary.mean_tps = sum(rates) / len(rates)
        summary.p50_tps = _percentile(rates, 0.50)
        summary.p95_tps = _percentile(rates, 0.95)
    return samples, summary


def _percentile(sorted_values: list[float], q: float) -> float:
    if len(sorted_values) == 1:
        return sorted_values[0]
    pos = q * (len(sorted_values) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = pos - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac
