// Recorded responses from the question-answering service fixture corpus.
// Regenerate by driving the service test app and pasting the bodies here.

import type { AskResponse } from "../src/api.js";

export const askPlain: AskResponse = {
  "answer": "MOCK[local]: 38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001, c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001 | Question: What is the shielding budget?",
  "citations": [
    {
      "chunk_id": "38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001",
      "source_url": "http://corpus.example/public/overview.html"
    },
    {
      "chunk_id": "c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001",
      "source_url": "http://corpus.example/collab/notes.html"
    }
  ],
  "traces": [
    {
      "stage_index": 0,
      "kind": "retrieve",
      "backend": null,
      "input_tokens": 8,
      "output_tokens": 40,
      "duration_ms": 0,
      "chunk_ids": [
        "38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001",
        "c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001"
      ],
      "status": "ok",
      "fanout": [],
      "note": "eligible=2"
    },
    {
      "stage_index": 1,
      "kind": "infer",
      "backend": "local",
      "input_tokens": 56,
      "output_tokens": 51,
      "duration_ms": 0,
      "chunk_ids": [
        "38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001",
        "c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001"
      ],
      "status": "ok",
      "fanout": [
        {
          "backend": "local",
          "status": "ok",
          "duration_ms": 0
        }
      ]
    }
  ]
};

export const askFanout: AskResponse = {
  "answer": "MOCK[alt]: 38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001, c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001 | Question: What is the shielding budget?",
  "citations": [
    {
      "chunk_id": "38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001",
      "source_url": "http://corpus.example/public/overview.html"
    },
    {
      "chunk_id": "c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001",
      "source_url": "http://corpus.example/collab/notes.html"
    }
  ],
  "traces": [
    {
      "stage_index": 0,
      "kind": "retrieve",
      "backend": null,
      "input_tokens": 8,
      "output_tokens": 40,
      "duration_ms": 0,
      "chunk_ids": [
        "38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001",
        "c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001"
      ],
      "status": "ok",
      "fanout": [],
      "note": "eligible=2"
    },
    {
      "stage_index": 1,
      "kind": "infer",
      "backend": "alt",
      "input_tokens": 56,
      "output_tokens": 51,
      "duration_ms": 0,
      "chunk_ids": [
        "38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001",
        "c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001"
      ],
      "status": "ok",
      "fanout": [
        {
          "backend": "broken",
          "status": "failed",
          "duration_ms": 0
        },
        {
          "backend": "alt",
          "status": "ok",
          "duration_ms": 0
        }
      ]
    },
    {
      "stage_index": 2,
      "kind": "evaluate",
      "backend": null,
      "input_tokens": 182,
      "output_tokens": 0,
      "duration_ms": 0,
      "chunk_ids": [],
      "status": "skipped",
      "fanout": [
        {
          "backend": "broken",
          "status": "failed",
          "duration_ms": 0
        }
      ],
      "note": "all backends failed: broken: backend broken configured to fail"
    }
  ]
};

export const askStreamSse: string = "event: delta\ndata: {\"text\": \"MOCK[local]: 38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001, c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001 | Question: What is the shielding budget?\"}\n\nevent: answer\ndata: {\"answer\": \"MOCK[local]: 38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001, c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001 | Question: What is the shielding budget?\", \"citations\": [{\"chunk_id\": \"38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001\", \"source_url\": \"http://corpus.example/public/overview.html\"}, {\"chunk_id\": \"c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001\", \"source_url\": \"http://corpus.example/collab/notes.html\"}], \"traces\": [{\"stage_index\": 0, \"kind\": \"retrieve\", \"backend\": null, \"input_tokens\": 8, \"output_tokens\": 40, \"duration_ms\": 0, \"chunk_ids\": [\"38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001\", \"c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001\"], \"status\": \"ok\", \"fanout\": [], \"note\": \"eligible=2\"}, {\"stage_index\": 1, \"kind\": \"infer\", \"backend\": \"local\", \"input_tokens\": 56, \"output_tokens\": 51, \"duration_ms\": 0, \"chunk_ids\": [\"38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001\", \"c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001\"], \"status\": \"ok\", \"fanout\": [{\"backend\": \"local\", \"status\": \"ok\", \"duration_ms\": 0}]}]}\n\n";

export const tierEscalationBody: string = "{\"error\":\"TierEscalation: requested tier controlled above session tier public\"}";

export const searchResponse = {
  "results": [
    {
      "chunk_id": "38510802bad438adcb58acb69eb59d49ee4b0f170490f5dd436a6590273d947f#0001",
      "score": 0.5039526306789697,
      "source_url": "http://corpus.example/public/overview.html",
      "tier": "public",
      "text": "# Public overview\n\nThe shielding budget baseline is public reading."
    },
    {
      "chunk_id": "c0293929f5cff05175dbed8478de1ba41c22f2bc3041d134436162e535dce975#0001",
      "score": 0.3611575592573077,
      "source_url": "http://corpus.example/collab/notes.html",
      "tier": "collaboration",
      "text": "# Collab notes\n\nThe shielding budget discussion stays in the collaboration."
    }
  ],
  "eligible": 2,
  "index_empty": false
} as const;
