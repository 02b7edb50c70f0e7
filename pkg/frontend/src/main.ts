// Application wiring: token entry, tier probing, the ask form, and the
// chat log. One in-flight question; the input stays disabled until the
// turn resolves.

import {
  ServiceError,
  askQuestion,
  askQuestionStreaming,
  buildMcp,
  probeAllowedTiers,
} from "./api.js";
import { applyDelta, completeTurn, failTurn, newTurn } from "./state.js";
import type { ChatTurn } from "./state.js";
import { renderTierNotice, renderTurn } from "./render.js";

const baseUrl = window.location.origin;

interface Controls {
  form: HTMLFormElement;
  question: HTMLInputElement;
  send: HTMLButtonElement;
  token: HTMLInputElement;
  connect: HTMLButtonElement;
  tier: HTMLSelectElement;
  log: HTMLElement;
  streaming: HTMLInputElement;
  k: HTMLInputElement;
  backend: HTMLInputElement;
}

function grab(): Controls {
  const get = <T extends HTMLElement>(id: string): T => {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  };
  return {
    form: get("ask-form"),
    question: get("question"),
    send: get("send"),
    token: get("token"),
    connect: get("connect"),
    tier: get("tier"),
    log: get("chat-log"),
    streaming: get("streaming"),
    k: get("adv-k"),
    backend: get("adv-backend"),
  };
}

let sessionToken = "";
let turns: ChatTurn[] = [];

function redraw(controls: Controls): void {
  controls.log.replaceChildren(...turns.map((turn) => renderTurn(turn, baseUrl)));
  controls.log.scrollTop = controls.log.scrollHeight;
}

function setTurn(index: number, turn: ChatTurn, controls: Controls): void {
  turns = turns.map((existing, i) => (i === index ? turn : existing));
  redraw(controls);
}

async function refreshTiers(controls: Controls): Promise<void> {
  controls.tier.replaceChildren();
  let allowed: string[];
  try {
    allowed = await probeAllowedTiers(baseUrl, sessionToken);
  } catch {
    allowed = ["public"];
  }
  for (const tier of allowed) {
    const option = document.createElement("option");
    option.value = tier;
    option.textContent = tier;
    controls.tier.appendChild(option);
  }
  controls.tier.value = allowed[allowed.length - 1] ?? "public";
}

async function submitQuestion(controls: Controls): Promise<void> {
  const question = controls.question.value.trim();
  if (!question) return;
  controls.question.value = "";
  controls.question.disabled = true;
  controls.send.disabled = true;
  const index = turns.length;
  turns = [...turns, newTurn(question)];
  redraw(controls);

  const overrides = {
    k: controls.k.value ? Number(controls.k.value) : undefined,
    backend: controls.backend.value || undefined,
    securityTier: controls.tier.value || undefined,
  };
  const mcp = buildMcp(overrides);
  try {
    if (controls.streaming.checked) {
      const final = await askQuestionStreaming(baseUrl, sessionToken, question, mcp, (text) => {
        setTurn(index, applyDelta(turns[index]!, text), controls);
      });
      setTurn(index, completeTurn(turns[index]!, final), controls);
    } else {
      const response = await askQuestion(baseUrl, sessionToken, question, mcp);
      setTurn(index, completeTurn(turns[index]!, response), controls);
    }
  } catch (err) {
    if (err instanceof ServiceError && err.status === 403) {
      controls.log.appendChild(renderTierNotice(err.body));
      setTurn(index, failTurn(turns[index]!, `tier escalation rejected (${err.body})`), controls);
    } else {
      const message = err instanceof Error ? err.message : String(err);
      setTurn(index, failTurn(turns[index]!, message), controls);
    }
  } finally {
    controls.question.disabled = false;
    controls.send.disabled = false;
    controls.question.focus();
  }
}

export function boot(): void {
  const controls = grab();
  controls.connect.addEventListener("click", async () => {
    sessionToken = controls.token.value.trim();
    await refreshTiers(controls);
  });
  controls.form.addEventListener("submit", (event) => {
    event.preventDefault();
    void submitQuestion(controls);
  });
  controls.log.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.classList.contains("retry")) {
      const article = target.closest("article");
      if (!article) return;
      const question = article.querySelector(".turn-question")?.textContent ?? "";
      controls.question.value = question;
      void submitQuestion(controls);
    }
  });
  void refreshTiers(controls);
}

if (typeof document !== "undefined" && document.getElementById("ask-form")) {
  boot();
}
