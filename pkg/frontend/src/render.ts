// DOM rendering for chat turns, citations, and the per-stage provenance view.
// Every rendered source link corresponds to a citation object in the service
// response; the UI never invents one.

import { documentUrl } from "./api.js";
import type { StageTrace } from "./api.js";
import type { ChatTurn } from "./state.js";
import { citationsVisible } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderTurn(turn: ChatTurn, baseUrl: string): HTMLElement {
  const root = el("article", `turn turn-${turn.status}`);
  const question = el("div", "turn-question", turn.question);
  root.appendChild(question);

  if (turn.status === "error") {
    const notice = el("div", "turn-error");
    notice.appendChild(el("p", "error-body", turn.error ?? "request failed"));
    const retry = el("button", "retry", "Retry");
    retry.type = "button";
    notice.appendChild(retry);
    root.appendChild(notice);
    return root;
  }

  const answer = el("div", "turn-answer", turn.answer);
  if (turn.status === "pending") {
    answer.textContent = "…";
  }
  root.appendChild(answer);

  if (citationsVisible(turn)) {
    root.appendChild(renderCitations(turn, baseUrl));
    root.appendChild(renderProvenance(turn.traces));
  }
  return root;
}

function renderCitations(turn: ChatTurn, baseUrl: string): HTMLElement {
  const wrap = el("div", "citations");
  wrap.appendChild(el("h4", undefined, "Sources"));
  const list = el("ol", "citation-list");
  for (const citation of turn.citations) {
    const item = el("li", "citation");
    const link = el("a", "citation-link", citation.source_url);
    link.href = documentUrl(baseUrl, citation.chunk_id);
    link.target = "_blank";
    link.rel = "noopener";
    link.dataset.chunkId = citation.chunk_id;
    item.appendChild(link);
    list.appendChild(item);
  }
  wrap.appendChild(list);
  return wrap;
}

export function renderProvenance(traces: StageTrace[]): HTMLElement {
  const details = el("details", "provenance");
  details.appendChild(el("summary", undefined, "Stage trace"));
  const table = el("table", "trace-table");
  const head = el("tr");
  for (const column of ["#", "stage", "backend", "in", "out", "ms", "status"]) {
    head.appendChild(el("th", undefined, column));
  }
  table.appendChild(head);
  for (const trace of traces) {
    const row = el("tr", `trace-row trace-${trace.status}`);
    row.appendChild(el("td", undefined, String(trace.stage_index)));
    row.appendChild(el("td", undefined, trace.kind));
    row.appendChild(el("td", undefined, trace.backend ?? "-"));
    row.appendChild(el("td", undefined, String(trace.input_tokens)));
    row.appendChild(el("td", undefined, String(trace.output_tokens)));
    row.appendChild(el("td", undefined, String(trace.duration_ms)));
    row.appendChild(el("td", "trace-status", trace.status));
    table.appendChild(row);
    for (const leaf of trace.fanout) {
      const sub = el("tr", `fanout-row fanout-${leaf.status}`);
      sub.appendChild(el("td"));
      sub.appendChild(el("td", undefined, "· fan-out"));
      sub.appendChild(el("td", undefined, leaf.backend));
      sub.appendChild(el("td"));
      sub.appendChild(el("td"));
      sub.appendChild(el("td", undefined, String(leaf.duration_ms)));
      sub.appendChild(el("td", "fanout-status", leaf.status));
      table.appendChild(sub);
    }
  }
  details.appendChild(table);
  return details;
}

export function renderTierNotice(message: string): HTMLElement {
  const notice = el("div", "tier-notice");
  notice.appendChild(el("strong", undefined, "Access denied: "));
  notice.appendChild(el("span", undefined, message));
  return notice;
}
