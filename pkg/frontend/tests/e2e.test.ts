// End-to-end: a headless scripted run against the real session service with
// mock providers. Drives the actual SessionChannel + reducer through setup,
// the detecting phase, and two push-to-talk turns via text fallback, then
// checks the console rendered every committed utterance exactly once, in
// commit order, against the service's own transcript.
//
// Requires the Python package to be installed (`pip install -e ..`).

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import WebSocket from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ChannelSocket, SessionChannel, channelUrl, createSession } from "../src/client.js";
import { ServerMessage } from "../src/protocol.js";
import { ConsoleState, initialState, reduce, showDetecting } from "../src/state.js";

const PORT = 8740 + (process.pid % 50);
const BASE = `http://127.0.0.1:${PORT}`;

function nodeSocket(url: string): ChannelSocket & { opened: Promise<void> } {
  const ws = new WebSocket(url);
  const outgoing: string[] = [];
  const incoming: string[] = [];
  let deliver: ((data: string) => void) | null = null;
  let open = false;

  const opened = new Promise<void>((resolve, reject) => {
    ws.on("open", () => {
      open = true;
      outgoing.splice(0).forEach((d) => ws.send(d));
      resolve();
    });
    ws.on("error", reject);
  });
  ws.on("message", (data) => {
    const text = data.toString();
    if (deliver) deliver(text);
    else incoming.push(text);
  });

  return {
    opened,
    send: (data) => (open ? ws.send(data) : outgoing.push(data)),
    close: () => ws.close(),
    onMessage: (handler) => {
      deliver = handler;
      incoming.splice(0).forEach(handler);
    },
    onClose: (handler) => ws.on("close", handler),
  };
}

let server: ChildProcess;

async function waitForService(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      const resp = await fetch(`${BASE}/docs`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error("session service did not come up");
}

beforeAll(async () => {
  const workdir = mkdtempSync(join(tmpdir(), "tertulia-e2e-"));
  server = spawn(
    "python3",
    [
      "-m", "tertulia.cli", "serve",
      "--port", String(PORT),
      "--transcript-dir", join(workdir, "transcripts"),
      "--blob-dir", join(workdir, "blobs"),
    ],
    { stdio: "ignore" },
  );
  await waitForService();
}, 30_000);

afterAll(() => {
  server?.kill();
});

describe("scripted console run against the live service", () => {
  it(
    "completes setup, does two text-fallback turns, renders commits exactly once",
    async () => {
      let state: ConsoleState = initialState;
      const detectingSeen: boolean[] = [];
      const dispatch = (message: ServerMessage) => {
        state = reduce(state, { type: "server", message });
        detectingSeen.push(showDetecting(state));
      };

      const session = await createSession(BASE, {
        language: "es",
        level: "intermediate",
        user_display_name: "Sofia",
        timing: { gap_ms: 500, max_user_speech_ms: 30000 },
        scene: {
          scene_label: "university library",
          objects: ["bookshelf", "novel"],
          detection_delay_ms: 400,
        },
      });

      const socket = nodeSocket(channelUrl(BASE, session.session_id));
      const waiters: Array<{ pred: (s: ConsoleState) => boolean; resolve: () => void }> = [];
      const channel = new SessionChannel(socket, (message) => {
        dispatch(message);
        for (let i = waiters.length - 1; i >= 0; i--) {
          const waiter = waiters[i]!;
          if (waiter.pred(state)) {
            waiters.splice(i, 1);
            waiter.resolve();
          }
        }
      });
      const until = (pred: (s: ConsoleState) => boolean, ms = 15_000) =>
        new Promise<void>((resolve, reject) => {
          if (pred(state)) return resolve();
          waiters.push({ pred, resolve });
          setTimeout(() => reject(new Error("condition timed out")), ms);
        });

      await socket.opened;
      state = reduce(state, { type: "connection", status: "connected" });

      // Setup completes: the detecting phase is visible, then the scene
      // arrives and the conversation view takes over.
      expect(showDetecting(state)).toBe(true);
      await until((s) => s.sceneLabel !== null);
      expect(showDetecting(state)).toBe(false);
      expect(state.sceneLabel).toBe("university library");
      expect(detectingSeen).toContain(true);

      // Two push-to-talk turns via the text fallback.
      await until((s) => s.phase === "gap" || s.phase === "agent_speaking");
      channel.pttDown();
      channel.pttUpText("Hola Marta, ¿qué lees?");
      await until((s) => s.feed.some((e) => e.speaker === "user"));
      const firstUserIdx = state.feed.findIndex((e) => e.speaker === "user");
      await until((s) => s.feed.length > firstUserIdx + 1); // the chosen agent replied

      channel.pttDown();
      channel.pttUpText("Omar, ¿y tú qué piensas?");
      await until(
        (s) => s.feed.filter((e) => e.speaker === "user").length === 2,
      );
      const secondUserIdx = state.feed.length - 1;
      await until((s) => s.feed.length > secondUserIdx + 1);

      channel.requestClose();
      await until((s) => s.connection === "closed");

      // The console's feed must equal the committed transcript: exactly
      // once each, in commit order.
      const transcript = await (
        await fetch(`${BASE}/sessions/${session.session_id}/transcript`)
      ).text();
      const committed = transcript
        .trim()
        .split("\n")
        .map((line) => JSON.parse(line))
        .map((u) => [u.speaker, u.text]);
      expect(state.feed.map((e) => [e.speaker, e.text])).toEqual(committed);
      expect(committed.filter(([speaker]) => speaker === "user")).toHaveLength(2);

      const seqs = state.feed.filter((e) => e.seq !== null).map((e) => e.seq);
      expect([...seqs].sort((a, b) => a! - b!)).toEqual(seqs); // commit order

      channel.detach();
      await fetch(`${BASE}/sessions/${session.session_id}`, { method: "DELETE" });
    },
    30_000,
  );

  it("refuses a second concurrent channel", async () => {
    const session = await createSession(BASE, {
      language: "es",
      level: "intermediate",
      scene: { scene_label: "x", detection_delay_ms: 50 },
    });
    const first = nodeSocket(channelUrl(BASE, session.session_id));
    new SessionChannel(first, () => {});
    await first.opened;

    const second = nodeSocket(channelUrl(BASE, session.session_id));
    const messages: ServerMessage[] = [];
    new SessionChannel(second, (m) => messages.push(m));
    await second.opened;
    await new Promise((r) => setTimeout(r, 500));
    expect(messages.some((m) => m.type === "error" && m.detail.includes("409"))).toBe(
      true,
    );

    first.close();
    second.close();
    await fetch(`${BASE}/sessions/${session.session_id}`, { method: "DELETE" });
  }, 20_000);
});
