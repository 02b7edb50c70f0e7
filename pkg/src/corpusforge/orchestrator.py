"""Staged request orchestration with per-stage budgets, tier enforcement,
concurrent backend fan-out, and full provenance traces.

A request carries (or defaults to) a context header naming an ordered stack
of stages (retrieve, summarize, infer, evaluate), a token budget per stage,
and a security tier validated against the session. The plan is inspectable
data; execution runs stages sequentially, fanning a stage's backends out in
parallel and joining on the first ok result in configured order.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backends import (
    Backend,
    BackendError,
    count_tokens,
    format_provenance_line,
    truncate_to_tokens,
)
from .index import VectorIndex, ZeroVector
from .tiers import SecurityTier

STAGE_KINDS = ("retrieve", "summarize", "infer", "evaluate")
PROVENANCE_OVERHEAD_TOKENS = 8  # fixed per-chunk framing cost in budget math
DEFAULT_RETRIEVE_K = 8
DEFAULT_BUDGETS = (2048, 4096)


class HeaderError(Exception):
    """Structural problem in a request's context header."""


class TierEscalation(HeaderError):
    pass


class EmptyStack(HeaderError):
    pass


class MissingBudget(HeaderError):
    pass


class UnknownBackend(HeaderError):
    pass


class UnknownStageKind(HeaderError):
    pass


class ContextBudgetTooSmall(Exception):
    pass


class StageFailure(Exception):
    """A mandatory stage (retrieve/infer) failed; traces survive for the response."""

    def __init__(self, message: str, traces: list["StageTrace"]):
        super().__init__(message)
        self.traces = traces


@dataclass
class StageSpec:
    kind: str
    backends: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)


@dataclass
class McpHeader:
    stack: list[StageSpec]
    budgets: dict[int, int]
    security_tier: SecurityTier


@dataclass
class FanoutResult:
    backend: str
    status: str  # ok | failed
    duration_s: float


@dataclass
class StageTrace:
    stage_index: int
    kind: str
    backend_used: str | None
    input_tokens: int
    output_tokens: int
    duration_s: float
    chunk_ids_used: list[str]
    status: str  # ok | failed | skipped
    fanout_results: list[FanoutResult] = field(default_factory=list)
    note: str | None = None


@dataclass
class Citation:
    chunk_id: str
    source_url: str


@dataclass
class Answer:
    text: str
    citations: list[Citation]
    traces: list[StageTrace]
    header_echo: McpHeader


@dataclass
class OrchestratorDefaults:
    default_backend: str
    retrieve_k: int = DEFAULT_RETRIEVE_K
    budgets: tuple[int, int] = DEFAULT_BUDGETS


# ---------------------------------------------------------------------------
# Header validation
# ---------------------------------------------------------------------------


def validate_header(
    raw: dict | None,
    session_tier: SecurityTier,
    known_backends: set[str],
    defaults: OrchestratorDefaults,
) -> McpHeader:
    """Validate a wire header against the session; a missing header yields the
    default retrieve-then-infer plan at the session tier. A requested tier
    above the session tier is a hard error, never silently clamped."""
    if raw is None:
        stack = [
            StageSpec("retrieve", (), {"k": defaults.retrieve_k}),
            StageSpec("infer", (defaults.default_backend,), {}),
        ]
        return McpHeader(
            stack=stack,
            budgets={0: defaults.budgets[0], 1: defaults.budgets[1]},
            security_tier=session_tier,
        )
    if not isinstance(raw, dict):
        raise HeaderError("header must be a JSON object")
    raw_stack = raw.get("stack")
    if not isinstance(raw_stack, list) or not raw_stack:
        raise EmptyStack("header stack must be a non-empty list")
    stack: list[StageSpec] = []
    for item in raw_stack:
        if not isinstance(item, dict):
            raise HeaderError("stage entries must be objects")
        kind = item.get("kind")
        if kind not in STAGE_KINDS:
            raise UnknownStageKind(f"unknown stage kind: {kind!r}")
        backends = tuple(item.get("backends") or ())
        params = item.get("params") or {}
        if not isinstance(params, dict):
            raise HeaderError("stage params must be an object")
        if kind == "retrieve":
            if backends:
                raise HeaderError("retrieve stages use the index, not backends")
        else:
            if not backends:
                raise HeaderError(f"{kind} stage requires at least one backend")
            for name in backends:
                if name not in known_backends:
                    raise UnknownBackend(f"unknown backend: {name!r}")
        stack.append(StageSpec(kind, backends, params))
    raw_budgets = raw.get("budgets")
    if not isinstance(raw_budgets, dict):
        raise MissingBudget("header budgets must be an object")
    budgets: dict[int, int] = {}
    for i in range(len(stack)):
        value = raw_budgets.get(str(i), raw_budgets.get(i))
        if value is None:
            raise MissingBudget(f"missing budget for stage {i}")
        if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
            raise HeaderError(f"budget for stage {i} must be a positive integer")
        budgets[i] = value
    tier_name = raw.get("security_tier")
    if tier_name is None:
        tier = session_tier
    else:
        try:
            tier = SecurityTier.parse(str(tier_name))
        except ValueError as exc:
            raise HeaderError(str(exc)) from exc
    if tier > session_tier:
        raise TierEscalation(
            f"requested tier {tier.label} above session tier {session_tier.label}"
        )
    return McpHeader(stack=stack, budgets=budgets, security_tier=tier)


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------


@dataclass
class LeafTask:
    backend: str


@dataclass
class StageNode:
    index: int
    kind: str
    params: dict
    budget: int
    leaves: list[LeafTask]
    join: str = "first_ok_in_order"


@dataclass
class OrchestrationGraph:
    header: McpHeader
    nodes: list[StageNode]


def plan(header: McpHeader) -> OrchestrationGraph:
    """Expand the stage stack into an inspectable execution graph: a linear
    chain of stage nodes, each with one leaf task per backend."""
    nodes = [
        StageNode(
            index=i,
            kind=spec.kind,
            params=dict(spec.params),
            budget=header.budgets[i],
            leaves=[LeafTask(name) for name in spec.backends],
        )
        for i, spec in enumerate(header.stack)
    ]
    return OrchestrationGraph(header=header, nodes=nodes)


# ---------------------------------------------------------------------------
# Context assembly
# ---------------------------------------------------------------------------


@dataclass
class WorkingChunk:
    chunk_id: str
    source_url: str
    tier: SecurityTier
    text: str
    score: float


def assemble_context(
    ranked: list[WorkingChunk], budget: int, question: str
) -> tuple[str, list[WorkingChunk], int]:
    """Greedy inclusion of ranked chunks while (chunk tokens + an 8-token
    provenance line each) fits the budget; the question is appended last and
    does not count against the budget. Returns (context, included, used)."""
    included: list[WorkingChunk] = []
    used = 0
    for chunk in ranked:
        cost = count_tokens(chunk.text) + PROVENANCE_OVERHEAD_TOKENS
        if used + cost > budget:
            if not included:
                raise ContextBudgetTooSmall(
                    f"top chunk needs {cost} tokens, budget is {budget}"
                )
            break
        used += cost
        included.append(chunk)
    parts = []
    for chunk in included:
        parts.append(format_provenance_line(chunk.chunk_id, chunk.source_url))
        parts.append(chunk.text)
        parts.append("")
    parts.append(f"Question: {question}")
    return "\n".join(parts), included, used


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


@dataclass
class Retriever:
    """Read-only serving bundle: the vector index, chunk texts, and the query
    embedder matching the index's embedding space."""

    index: VectorIndex
    chunks: dict[str, dict]
    embed_query: Callable[[str], np.ndarray]

    def retrieve(self, query: str, k: int, tier: SecurityTier) -> list[WorkingChunk]:
        vec = self.embed_query(query)
        result = self.index.top_k(vec, k, tier)
        out: list[WorkingChunk] = []
        for chunk_id, score in result.hits:
            rec = self.chunks.get(chunk_id)
            if rec is None:
                continue
            out.append(
                WorkingChunk(
                    chunk_id=chunk_id,
                    source_url=rec.get("source_url", ""),
                    tier=SecurityTier.parse(rec.get("tier", "controlled")),
                    text=rec.get("text", ""),
                    score=score,
                )
            )
        return out


def _fan_out(
    leaves: list[LeafTask], registry: dict[str, Backend], task: Callable[[Backend], str]
) -> tuple[str | None, str | None, list[FanoutResult], list[str]]:
    """Run the task on every leaf backend concurrently, wait for all, and
    select the first ok result in configured order (deterministic join)."""

    def run_one(leaf: LeafTask) -> tuple[str, str | None, float, str | None]:
        start = time.perf_counter()
        try:
            value = task(registry[leaf.backend])
            return leaf.backend, value, time.perf_counter() - start, None
        except BackendError as exc:
            return leaf.backend, None, time.perf_counter() - start, str(exc)

    if len(leaves) == 1:
        outcomes = [run_one(leaves[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(leaves)) as pool:
            outcomes = list(pool.map(run_one, leaves))
    fanout = [
        FanoutResult(name, "ok" if value is not None else "failed", duration)
        for name, value, duration, _ in outcomes
    ]
    errors = [f"{name}: {err}" for name, _, _, err in outcomes if err]
    for name, value, _, _ in outcomes:
        if value is not None:
            return value, name, fanout, errors
    return None, None, fanout, errors


def execute(
    graph: OrchestrationGraph,
    registry: dict[str, Backend],
    retriever: Retriever,
    question: str,
) -> Answer:
    """Run the planned stages in order and return the answer with citations
    (the chunks that survived into the final infer context) and one trace per
    stage. Failed retrieve/infer stages abort with traces intact; failed
    summarize/evaluate stages degrade to skipped."""
    header = graph.header
    traces: list[StageTrace] = []
    ranked: list[WorkingChunk] = []
    citations: list[WorkingChunk] = []
    answer_text = ""
    last_output = question
    last_context = f"Question: {question}"

    for node in graph.nodes:
        start = time.perf_counter()
        budget = node.budget
        if node.kind == "retrieve":
            k = int(node.params.get("k", DEFAULT_RETRIEVE_K))
            query = truncate_to_tokens(last_output, budget)
            try:
                ranked = retriever.retrieve(query, k, header.security_tier)
            except ZeroVector as exc:
                trace = StageTrace(
                    node.index, node.kind, None, count_tokens(query), 0,
                    time.perf_counter() - start, [], "failed", note=str(exc),
                )
                traces.append(trace)
                _pad_skipped(traces, graph, node.index)
                raise StageFailure(f"retrieve failed: {exc}", traces) from exc
            for chunk in ranked:
                assert chunk.tier <= header.security_tier, "tier ceiling violated"
            eligible_note = f"eligible={len(ranked)}"
            traces.append(
                StageTrace(
                    node.index, node.kind, None,
                    count_tokens(query),
                    sum(count_tokens(c.text) for c in ranked),
                    time.perf_counter() - start,
                    [c.chunk_id for c in ranked],
                    "ok",
                    note=eligible_note,
                )
            )
            last_output = "\n".join(c.text for c in ranked) or question
        elif node.kind == "summarize":
            chunks_snapshot = list(ranked)
            # one prompt per chunk, each truncated to the stage budget; the
            # recorded input_tokens is the largest single summarizer input
            prompts: list[str] = []
            for chunk in chunks_snapshot:
                head = "\n".join(
                    (
                        "Summarize the passage below in a few sentences.",
                        format_provenance_line(chunk.chunk_id, chunk.source_url),
                        "",
                    )
                )
                room = budget - count_tokens(head)
                prompt = head + truncate_to_tokens(chunk.text, max(room, 0))
                if count_tokens(prompt) > budget:
                    prompt = truncate_to_tokens(prompt, budget)
                prompts.append(prompt)
            max_input = max((count_tokens(p) for p in prompts), default=0)

            def summarize_all(backend: Backend) -> list[str]:
                return [backend.generate(p, node.params).text for p in prompts]

            value, backend_used, fanout, errors = _fan_out(
                node.leaves, registry, lambda b: _pack_lines(summarize_all(b))
            )
            duration = time.perf_counter() - start
            if value is None:
                traces.append(
                    StageTrace(
                        node.index, node.kind, None, max_input, 0, duration,
                        [c.chunk_id for c in chunks_snapshot], "skipped",
                        fanout_results=fanout,
                        note="all backends failed: " + "; ".join(errors),
                    )
                )
            else:
                summaries = _unpack_lines(value)
                for chunk, summary in zip(ranked, summaries):
                    chunk.text = summary
                traces.append(
                    StageTrace(
                        node.index, node.kind, backend_used, max_input,
                        sum(count_tokens(s) for s in summaries), duration,
                        [c.chunk_id for c in chunks_snapshot], "ok",
                        fanout_results=fanout,
                    )
                )
                last_output = "\n".join(summaries) or last_output
        elif node.kind == "infer":
            try:
                context, included, used = assemble_context(ranked, budget, question)
            except ContextBudgetTooSmall as exc:
                trace = StageTrace(
                    node.index, node.kind, None, 0, 0,
                    time.perf_counter() - start, [], "failed", note=str(exc),
                )
                traces.append(trace)
                _pad_skipped(traces, graph, node.index)
                raise StageFailure(str(exc), traces) from exc
            value, backend_used, fanout, errors = _fan_out(
                node.leaves, registry, lambda b: b.generate(context, node.params).text
            )
            duration = time.perf_counter() - start
            assert used <= budget, "context exceeded stage budget"
            if value is None:
                traces.append(
                    StageTrace(
                        node.index, node.kind, None, used, 0, duration,
                        [c.chunk_id for c in included], "failed",
                        fanout_results=fanout,
                        note="all backends failed: " + "; ".join(errors),
                    )
                )
                _pad_skipped(traces, graph, node.index)
                raise StageFailure("infer failed on all backends", traces)
            answer_text = value
            citations = included
            last_output = value
            last_context = context
            traces.append(
                StageTrace(
                    node.index, node.kind, backend_used, used,
                    count_tokens(value), duration,
                    [c.chunk_id for c in included], "ok",
                    fanout_results=fanout,
                )
            )
        elif node.kind == "evaluate":
            prompt = "\n".join(
                (
                    "Evaluate whether the answer is supported by the context.",
                    "Answer:",
                    answer_text,
                    truncate_to_tokens(last_context, budget),
                )
            )
            prompt = truncate_to_tokens(prompt, budget)
            value, backend_used, fanout, errors = _fan_out(
                node.leaves, registry, lambda b: b.generate(prompt, node.params).text
            )
            duration = time.perf_counter() - start
            if value is None:
                traces.append(
                    StageTrace(
                        node.index, node.kind, None, count_tokens(prompt), 0, duration,
                        [], "skipped", fanout_results=fanout,
                        note="all backends failed: " + "; ".join(errors),
                    )
                )
            else:
                traces.append(
                    StageTrace(
                        node.index, node.kind, backend_used, count_tokens(prompt),
                        count_tokens(value), duration, [], "ok",
                        fanout_results=fanout, note=f"verdict: {value[:200]}",
                    )
                )
        else:  # pragma: no cover - validated upstream
            raise StageFailure(f"unknown stage kind {node.kind}", traces)
        assert traces[-1].input_tokens <= budget, "stage input exceeded its budget"

    for chunk in citations:
        assert chunk.tier <= header.security_tier, "citation above session tier"
    return Answer(
        text=answer_text,
        citations=[Citation(c.chunk_id, c.source_url) for c in citations],
        traces=traces,
        header_echo=header,
    )


def _pad_skipped(traces: list[StageTrace], graph: OrchestrationGraph, failed_index: int) -> None:
    """Keep trace count equal to stack length even when a mandatory stage fails."""
    for node in graph.nodes:
        if node.index > failed_index:
            traces.append(
                StageTrace(
                    node.index, node.kind, None, 0, 0, 0.0, [], "skipped",
                    note="not run: earlier stage failed",
                )
            )


_LINE_SEP = "␞"  # record separator for packing summary lists through fan-out


def _pack_lines(lines: list[str]) -> str:
    return _LINE_SEP.join(lines)


def _unpack_lines(packed: str) -> list[str]:
    return packed.split(_LINE_SEP) if packed else []
