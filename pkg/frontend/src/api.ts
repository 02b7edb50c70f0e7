// Typed client for the question-answering service wire contracts:
// POST /ask (plain JSON or SSE streaming), POST /search, GET /documents/{id},
// GET /stats. The session token lives in memory only.

export interface Citation {
  chunk_id: string;
  source_url: string;
}

export interface FanoutEntry {
  backend: string;
  status: string;
  duration_ms: number;
}

export interface StageTrace {
  stage_index: number;
  kind: string;
  backend: string | null;
  input_tokens: number;
  output_tokens: number;
  duration_ms: number;
  chunk_ids: string[];
  status: "ok" | "failed" | "skipped";
  fanout: FanoutEntry[];
  note?: string;
}

export interface AskResponse {
  answer: string;
  citations: Citation[];
  traces: StageTrace[];
}

export interface SearchResult {
  chunk_id: string;
  score: number;
  source_url: string;
  tier: string;
  text: string;
}

export interface McpOverrides {
  k?: number;
  backend?: string;
  budgets?: [number, number];
  securityTier?: string;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public body: string,
  ) {
    super(`service returned ${status}: ${body}`);
  }
}

export const TIERS = ["public", "collaboration", "controlled"] as const;

export function buildMcp(overrides: McpOverrides): object | undefined {
  const { k, backend, budgets, securityTier } = overrides;
  if (k === undefined && backend === undefined && budgets === undefined && securityTier === undefined) {
    return undefined;
  }
  const mcp: Record<string, unknown> = {
    stack: [
      { kind: "retrieve", params: { k: k ?? 8 } },
      { kind: "infer", backends: [backend ?? "local"], params: {} },
    ],
    budgets: { "0": budgets?.[0] ?? 2048, "1": budgets?.[1] ?? 4096 },
  };
  if (securityTier !== undefined) {
    mcp.security_tier = securityTier;
  }
  return mcp;
}

function authHeaders(token: string): Record<string, string> {
  const headers: Record<string, string> = { "Content-Type": "application/json" };
  if (token) {
    headers.Authorization = `Bearer ${token}`;
  }
  return headers;
}

export function documentUrl(baseUrl: string, chunkOrDocId: string): string {
  const docId = chunkOrDocId.split("#")[0];
  return `${baseUrl.replace(/\/$/, "")}/documents/${docId}`;
}

export async function askQuestion(
  baseUrl: string,
  token: string,
  question: string,
  mcp?: object,
): Promise<AskResponse> {
  const body: Record<string, unknown> = { question };
  if (mcp) body.mcp = mcp;
  const resp = await fetch(`${baseUrl.replace(/\/$/, "")}/ask`, {
    method: "POST",
    headers: authHeaders(token),
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    throw new ServiceError(resp.status, await resp.text());
  }
  return (await resp.json()) as AskResponse;
}

// --- streaming -------------------------------------------------------------

export interface SseEvent {
  event: string;
  data: unknown;
}

/**
 * Incremental server-sent-events parser. Feed it body chunks as they arrive;
 * it yields complete events. Pure and synchronous, so component tests can
 * replay a recorded SSE transcript byte for byte.
 */
export class SseAssembler {
  private buffer = "";

  push(chunk: string): SseEvent[] {
    this.buffer += chunk;
    const events: SseEvent[] = [];
    let split: number;
    while ((split = this.buffer.indexOf("\n\n")) !== -1) {
      const block = this.buffer.slice(0, split);
      this.buffer = this.buffer.slice(split + 2);
      const parsed = parseBlock(block);
      if (parsed) events.push(parsed);
    }
    return events;
  }
}

function parseBlock(block: string): SseEvent | null {
  let event = "message";
  const dataLines: string[] = [];
  for (const line of block.split("\n")) {
    if (line.startsWith("event: ")) {
      event = line.slice("event: ".length);
    } else if (line.startsWith("data: ")) {
      dataLines.push(line.slice("data: ".length));
    }
  }
  if (dataLines.length === 0) return null;
  return { event, data: JSON.parse(dataLines.join("\n")) };
}

export interface StreamOutcome {
  streamedText: string;
  final: AskResponse;
}

/** Assemble a full /ask SSE transcript (delta events then the answer event). */
export function assembleStream(events: SseEvent[]): StreamOutcome {
  let streamedText = "";
  let final: AskResponse | null = null;
  for (const { event, data } of events) {
    if (event === "delta") {
      streamedText += (data as { text: string }).text;
    } else if (event === "answer") {
      final = data as AskResponse;
    }
  }
  if (!final) {
    throw new Error("stream ended without a final answer event");
  }
  return { streamedText, final };
}

export async function askQuestionStreaming(
  baseUrl: string,
  token: string,
  question: string,
  mcp: object | undefined,
  onDelta: (text: string) => void,
): Promise<AskResponse> {
  const body: Record<string, unknown> = { question, stream: true };
  if (mcp) body.mcp = mcp;
  const resp = await fetch(`${baseUrl.replace(/\/$/, "")}/ask`, {
    method: "POST",
    headers: authHeaders(token),
    body: JSON.stringify(body),
  });
  if (!resp.ok || !resp.body) {
    throw new ServiceError(resp.status, await resp.text());
  }
  const reader = resp.body.getReader();
  const decoder = new TextDecoder();
  const assembler = new SseAssembler();
  const events: SseEvent[] = [];
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    for (const event of assembler.push(decoder.decode(value, { stream: true }))) {
      if (event.event === "delta") {
        onDelta((event.data as { text: string }).text);
      }
      events.push(event);
    }
  }
  return assembleStream(events).final;
}

// --- tier probe ------------------------------------------------------------

/**
 * Discover which tiers the session may request: try a minimal plan at each
 * tier and drop the ones the service rejects with a tier escalation (403).
 */
export async function probeAllowedTiers(baseUrl: string, token: string): Promise<string[]> {
  const allowed: string[] = [];
  for (const tier of TIERS) {
    const mcp = {
      stack: [{ kind: "retrieve", params: { k: 1 } }],
      budgets: { "0": 64 },
      security_tier: tier,
    };
    try {
      await askQuestion(baseUrl, token, "tier probe", mcp);
      allowed.push(tier);
    } catch (err) {
      if (err instanceof ServiceError && err.status === 403) continue;
      throw err;
    }
  }
  return allowed;
}

export async function search(
  baseUrl: string,
  token: string,
  query: string,
  k = 8,
): Promise<{ results: SearchResult[]; eligible: number }> {
  const resp = await fetch(`${baseUrl.replace(/\/$/, "")}/search`, {
    method: "POST",
    headers: authHeaders(token),
    body: JSON.stringify({ query, k }),
  });
  if (!resp.ok) {
    throw new ServiceError(resp.status, await resp.text());
  }
  return (await resp.json()) as { results: SearchResult[]; eligible: number };
}
