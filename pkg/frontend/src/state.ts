// Chat turn lifecycle. One in-flight question at a time; citations become
// visible only once a turn is done.

import type { AskResponse, Citation, StageTrace } from "./api.js";

export type TurnStatus = "pending" | "streaming" | "done" | "error";

export interface ChatTurn {
  question: string;
  answer: string;
  citations: Citation[];
  traces: StageTrace[];
  status: TurnStatus;
  error?: string;
}

export function newTurn(question: string): ChatTurn {
  return { question, answer: "", citations: [], traces: [], status: "pending" };
}

export function applyDelta(turn: ChatTurn, text: string): ChatTurn {
  return { ...turn, answer: turn.answer + text, status: "streaming" };
}

export function completeTurn(turn: ChatTurn, response: AskResponse): ChatTurn {
  return {
    ...turn,
    answer: response.answer,
    citations: response.citations,
    traces: response.traces,
    status: "done",
  };
}

export function failTurn(turn: ChatTurn, message: string): ChatTurn {
  return { ...turn, status: "error", error: message };
}

export function citationsVisible(turn: ChatTurn): boolean {
  return turn.status === "done";
}
