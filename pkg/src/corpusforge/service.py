"""HTTP service: /ask, /search, /documents/{doc_id}, /healthz, /stats.

Bearer tokens map to security tiers via config; anonymous requests (when
allowed) run at the public tier. Responses for identical requests against
deterministic backends are byte-identical: wire durations are floored to
50 ms buckets so scheduler jitter never leaks into response bodies.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import PlainTextResponse, Response, StreamingResponse

from .backends import Backend
from .config import AppConfig
from .orchestrator import (
    Answer,
    HeaderError,
    OrchestratorDefaults,
    Retriever,
    StageFailure,
    StageTrace,
    TierEscalation,
    execute,
    plan,
    validate_header,
)
from .index import ZeroVector
from .store import CorpusStore
from .tiers import SecurityTier

DURATION_BUCKET_MS = 50
STREAM_WORDS_PER_DELTA = 12


def _bucket_ms(seconds: float) -> int:
    ms = int(seconds * 1000)
    return ms - ms % DURATION_BUCKET_MS


def trace_to_wire(trace: StageTrace) -> dict:
    wire = {
        "stage_index": trace.stage_index,
        "kind": trace.kind,
        "backend": trace.backend_used,
        "input_tokens": trace.input_tokens,
        "output_tokens": trace.output_tokens,
        "duration_ms": _bucket_ms(trace.duration_s),
        "chunk_ids": list(trace.chunk_ids_used),
        "status": trace.status,
        "fanout": [
            {"backend": f.backend, "status": f.status, "duration_ms": _bucket_ms(f.duration_s)}
            for f in trace.fanout_results
        ],
    }
    if trace.note is not None:
        wire["note"] = trace.note
    return wire


def answer_to_wire(answer: Answer) -> dict:
    return {
        "answer": answer.text,
        "citations": [
            {"chunk_id": c.chunk_id, "source_url": c.source_url} for c in answer.citations
        ],
        "traces": [trace_to_wire(t) for t in answer.traces],
    }


def _json_response(payload: dict, status_code: int = 200) -> Response:
    return Response(
        content=json.dumps(payload, ensure_ascii=False, separators=(",", ":")),
        status_code=status_code,
        media_type="application/json",
    )


class _ServiceStats:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.requests: dict[str, int] = {}
        self.stage_latency: dict[str, dict] = {}

    def count_request(self, endpoint: str) -> None:
        with self._lock:
            self.requests[endpoint] = self.requests.get(endpoint, 0) + 1

    def record_traces(self, traces: list[StageTrace]) -> None:
        with self._lock:
            for trace in traces:
                agg = self.stage_latency.setdefault(
                    trace.kind, {"count": 0, "total_ms": 0.0, "max_ms": 0.0}
                )
                ms = trace.duration_s * 1000
                agg["count"] += 1
                agg["total_ms"] += ms
                agg["max_ms"] = max(agg["max_ms"], ms)

    def snapshot(self) -> dict:
        with self._lock:
            stages = {
                kind: {
                    "count": agg["count"],
                    "mean_ms": agg["total_ms"] / agg["count"] if agg["count"] else 0.0,
                    "max_ms": agg["max_ms"],
                }
                for kind, agg in sorted(self.stage_latency.items())
            }
            return {"requests": dict(sorted(self.requests.items())), "stages": stages}


def build_app(
    config: AppConfig,
    registry: dict[str, Backend],
    retriever: Retriever,
    store: CorpusStore,
    defaults: OrchestratorDefaults,
    ui_dir: Path | None = None,
) -> FastAPI:
    app = FastAPI(title="corpusforge", docs_url=None, redoc_url=None)
    stats = _ServiceStats()
    known_backends = set(registry)

    def session_tier(request: Request) -> SecurityTier | None:
        """Resolve the caller's tier; None means reject with 401."""
        auth = request.headers.get("authorization", "")
        if not auth:
            return SecurityTier.PUBLIC if config.serve.allow_anonymous else None
        if not auth.lower().startswith("bearer "):
            return None
        token = auth[len("bearer ") :].strip()
        return config.serve.tokens.get(token)

    @app.post("/ask")
    async def ask(request: Request) -> Response:
        stats.count_request("/ask")
        tier = session_tier(request)
        if tier is None:
            return _json_response({"error": "unknown or missing token"}, 401)
        try:
            body = await request.json()
        except Exception:
            return _json_response({"error": "request body must be JSON"}, 422)
        question = body.get("question") if isinstance(body, dict) else None
        if not isinstance(question, str) or not question.strip():
            return _json_response({"error": "missing question"}, 422)
        try:
            header = validate_header(body.get("mcp"), tier, known_backends, defaults)
        except TierEscalation as exc:
            return _json_response({"error": f"TierEscalation: {exc}"}, 403)
        except HeaderError as exc:
            return _json_response({"error": f"{type(exc).__name__}: {exc}"}, 422)
        graph = plan(header)
        try:
            answer = execute(graph, registry, retriever, question)
        except StageFailure as exc:
            stats.record_traces(exc.traces)
            return _json_response(
                {"error": str(exc), "traces": [trace_to_wire(t) for t in exc.traces]}, 500
            )
        stats.record_traces(answer.traces)
        payload = answer_to_wire(answer)
        if body.get("stream"):
            return StreamingResponse(_stream_answer(payload), media_type="text/event-stream")
        return _json_response(payload)

    @app.post("/search")
    async def search(request: Request) -> Response:
        stats.count_request("/search")
        tier = session_tier(request)
        if tier is None:
            return _json_response({"error": "unknown or missing token"}, 401)
        try:
            body = await request.json()
        except Exception:
            return _json_response({"error": "request body must be JSON"}, 422)
        query = body.get("query") if isinstance(body, dict) else None
        if not isinstance(query, str) or not query.strip():
            return _json_response({"error": "missing query"}, 422)
        k = body.get("k", defaults.retrieve_k)
        if not isinstance(k, int) or k < 1:
            return _json_response({"error": "k must be a positive integer"}, 422)
        try:
            qvec = retriever.embed_query(query)
        except ZeroVector:
            return _json_response({"results": [], "eligible": 0, "index_empty": False})
        result = retriever.index.top_k(qvec, k, tier)
        results = []
        for chunk_id, score in result.hits:
            rec = retriever.chunks.get(chunk_id, {})
            results.append(
                {
                    "chunk_id": chunk_id,
                    "score": score,
                    "source_url": rec.get("source_url", ""),
                    "tier": rec.get("tier", "controlled"),
                    "text": rec.get("text", ""),
                }
            )
        return _json_response(
            {"results": results, "eligible": result.eligible, "index_empty": result.index_empty}
        )

    @app.get("/documents/{doc_id}")
    async def document(doc_id: str, request: Request) -> Response:
        stats.count_request("/documents")
        tier = session_tier(request)
        if tier is None:
            return _json_response({"error": "unknown or missing token"}, 401)
        entry = store.entries.get(doc_id)
        if entry is None:
            return _json_response({"error": "unknown document"}, 404)
        if entry.tier > tier:
            return _json_response({"error": "TierEscalation: document above session tier"}, 403)
        return PlainTextResponse(store.document_text(doc_id), media_type="text/markdown")

    @app.get("/healthz")
    async def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.get("/stats")
    async def service_stats() -> Response:
        stats.count_request("/stats")
        return _json_response(stats.snapshot())

    if ui_dir is not None and ui_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def _stream_answer(payload: dict):
    """Server-side pseudo-streaming: the answer text in word batches, then a
    final event with the complete response object."""
    words = payload["answer"].split(" ")
    for i in range(0, len(words), STREAM_WORDS_PER_DELTA):
        piece = " ".join(words[i : i + STREAM_WORDS_PER_DELTA])
        if i + STREAM_WORDS_PER_DELTA < len(words):
            piece += " "
        yield "event: delta\ndata: " + json.dumps({"text": piece}, ensure_ascii=False) + "\n\n"
    yield "event: answer\ndata: " + json.dumps(payload, ensure_ascii=False) + "\n\n"
