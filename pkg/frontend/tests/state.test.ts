// Reducer invariants: caption routing, single speaking indicator,
// exactly-once feed entries in commit order, detecting-phase visibility.

import { describe, expect, it } from "vitest";
import { ServerMessage } from "../src/protocol.js";
import {
  ConsoleState,
  initialState,
  inputMode,
  reduce,
  showDetecting,
} from "../src/state.js";

function feedServer(state: ConsoleState, ...messages: ServerMessage[]): ConsoleState {
  return messages.reduce(
    (acc, message) => reduce(acc, { type: "server", message }),
    state,
  );
}

const connected = reduce(initialState, { type: "connection", status: "connected" });

describe("detecting phase", () => {
  it("shows from connect until scene_ready", () => {
    expect(showDetecting(initialState)).toBe(false);
    expect(showDetecting(connected)).toBe(true);
    const ready = feedServer(connected, {
      type: "scene_ready",
      scene_label: "university library",
      objects: ["bookshelf"],
      at_ms: 2000,
    });
    expect(showDetecting(ready)).toBe(false);
    expect(ready.sceneLabel).toBe("university library");
  });
});

describe("caption routing", () => {
  it("puts each caption only in its own agent's panel", () => {
    const s = feedServer(
      connected,
      { type: "caption", speaker: "agent:1", text: "hola", seq: 0, at_ms: 1 },
      { type: "caption", speaker: "agent:2", text: "buenas", seq: 1, at_ms: 2 },
    );
    expect(s.captions[1]).toBe("hola");
    expect(s.captions[2]).toBe("buenas");
    const again = feedServer(s, {
      type: "caption",
      speaker: "agent:1",
      text: "segunda",
      seq: 2,
      at_ms: 3,
    });
    expect(again.captions[1]).toBe("segunda");
    expect(again.captions[2]).toBe("buenas"); // untouched
  });
});

describe("speaking indicator", () => {
  it("tracks at most one speaking agent", () => {
    const speaking1 = feedServer(connected, {
      type: "state",
      phase: "agent_speaking",
      agent_id: 1,
      at_ms: 5,
    });
    expect(speaking1.speakingAgent).toBe(1);
    const speaking2 = feedServer(speaking1, {
      type: "state",
      phase: "agent_speaking",
      agent_id: 2,
      at_ms: 6,
    });
    expect(speaking2.speakingAgent).toBe(2);
    const gap = feedServer(speaking2, {
      type: "state",
      phase: "gap",
      agent_id: null,
      at_ms: 7,
    });
    expect(gap.speakingAgent).toBeNull();
  });
});

describe("feed", () => {
  it("renders every committed utterance exactly once, in commit order", () => {
    const s = feedServer(
      connected,
      { type: "user_transcript", text: "Hola Marta", at_ms: 1 },
      { type: "caption", speaker: "agent:1", text: "¡Hola!", seq: 1, at_ms: 2 },
      { type: "caption", speaker: "agent:1", text: "¡Hola!", seq: 1, at_ms: 2 }, // dup
      { type: "caption", speaker: "agent:2", text: "Bienvenida", seq: 2, at_ms: 3 },
    );
    expect(s.feed.map((e) => [e.speaker, e.text])).toEqual([
      ["user", "Hola Marta"],
      ["agent:1", "¡Hola!"],
      ["agent:2", "Bienvenida"],
    ]);
  });

  it("drops stale out-of-order captions", () => {
    const s = feedServer(
      connected,
      { type: "caption", speaker: "agent:1", text: "uno", seq: 3, at_ms: 1 },
      { type: "caption", speaker: "agent:2", text: "tarde", seq: 2, at_ms: 2 },
    );
    expect(s.feed).toHaveLength(1);
  });

  it("an empty user transcript commits nothing", () => {
    const s = feedServer(connected, { type: "user_transcript", text: "", at_ms: 4 });
    expect(s.feed).toHaveLength(0);
  });
});

describe("errors keep the session alive", () => {
  it("a tts error is listed while captions keep rendering", () => {
    const s = feedServer(
      connected,
      { type: "error", stage: "tts", detail: "silenced", at_ms: 1 },
      { type: "caption", speaker: "agent:1", text: "sin voz", seq: 0, at_ms: 2 },
    );
    expect(s.errors).toEqual(["tts: silenced"]);
    expect(s.captions[1]).toBe("sin voz");
    expect(s.connection).toBe("connected");
  });
});

describe("input mode", () => {
  it("falls back to text when the mic is denied", () => {
    expect(inputMode(connected)).toBe("text"); // unknown → be safe, use text
    expect(inputMode(reduce(connected, { type: "mic", permission: "granted" }))).toBe(
      "voice",
    );
    expect(inputMode(reduce(connected, { type: "mic", permission: "denied" }))).toBe(
      "text",
    );
  });
});

describe("session end", () => {
  it("a closed state message marks the session over", () => {
    const s = feedServer(connected, {
      type: "state",
      phase: "closed",
      agent_id: null,
      at_ms: 10,
    });
    expect(s.connection).toBe("closed");
  });
});
