// Session client: REST session management plus the event channel.
// Sockets are injected behind a tiny interface so tests (and the node e2e
// harness) can supply their own transport.

import {
  ClientMessage,
  CreateSessionRequest,
  CreateSessionResponse,
  ServerMessage,
} from "./protocol.js";

export interface ChannelSocket {
  send(data: string): void;
  close(): void;
  onMessage(handler: (data: string) => void): void;
  onClose(handler: () => void): void;
}

export type SocketFactory = (url: string) => ChannelSocket;
export type FetchLike = typeof fetch;

export class SessionError extends Error {
  constructor(message: string, readonly violations: string[] = []) {
    super(message);
  }
}

export async function createSession(
  baseUrl: string,
  request: CreateSessionRequest,
  fetchImpl: FetchLike = fetch,
): Promise<CreateSessionResponse> {
  const resp = await fetchImpl(`${baseUrl}/sessions`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(request),
  });
  const body = await resp.json();
  if (resp.status !== 201) {
    throw new SessionError(
      `session creation failed (${resp.status})`,
      body?.violations ?? [],
    );
  }
  return body as CreateSessionResponse;
}

export async function closeSession(
  baseUrl: string,
  sessionId: string,
  fetchImpl: FetchLike = fetch,
): Promise<void> {
  await fetchImpl(`${baseUrl}/sessions/${sessionId}`, { method: "DELETE" });
}

export function channelUrl(baseUrl: string, sessionId: string): string {
  return `${baseUrl.replace(/^http/, "ws")}/sessions/${sessionId}/ws`;
}

/** The attached event channel with the push-to-talk lifecycle guard. */
export class SessionChannel {
  private held = false;

  constructor(
    private readonly socket: ChannelSocket,
    onMessage: (message: ServerMessage) => void,
    onClose: () => void = () => {},
  ) {
    socket.onMessage((data) => {
      let parsed: ServerMessage;
      try {
        parsed = JSON.parse(data) as ServerMessage;
      } catch {
        console.warn("unparseable server message", data);
        return;
      }
      onMessage(parsed);
    });
    socket.onClose(onClose);
  }

  get pttHeld(): boolean {
    return this.held;
  }

  /** Returns true if the press was sent; false if already held. */
  pttDown(): boolean {
    if (this.held) return false;
    this.held = true;
    this.send({ type: "ptt_down" });
    return true;
  }

  /** Release with recorded audio. No-op unless a press is outstanding, so
   * ptt_up is never sent without a preceding ptt_down. */
  pttUpAudio(audioB64: string, container = "mp3"): boolean {
    if (!this.held) return false;
    this.held = false;
    this.send({ type: "ptt_up", audio_b64: audioB64, container });
    return true;
  }

  /** Release with typed text (the audio-less fallback mode). */
  pttUpText(text: string): boolean {
    if (!this.held) return false;
    this.held = false;
    this.send({ type: "ptt_up", text });
    return true;
  }

  requestClose(): void {
    this.send({ type: "close" });
  }

  detach(): void {
    this.socket.close();
  }

  private send(message: ClientMessage): void {
    this.socket.send(JSON.stringify(message));
  }
}

/** Browser WebSocket adapter (unused in node tests). */
export function browserSocketFactory(url: string): ChannelSocket {
  const ws = new WebSocket(url);
  return {
    send: (data) => ws.send(data),
    close: () => ws.close(),
    onMessage: (handler) =>
      ws.addEventListener("message", (ev) => handler(String(ev.data))),
    onClose: (handler) => ws.addEventListener("close", () => handler()),
  };
}
