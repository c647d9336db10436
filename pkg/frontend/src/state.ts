// Console state and its reducer. All server messages and local UI events
// funnel through reduce() so rendering invariants live in one place:
// a caption only ever lands in its own agent's panel, at most one panel
// shows the speaking indicator, and each committed utterance enters the
// feed exactly once, in commit order.

import { AgentId, Phase, ServerMessage, agentIdOf } from "./protocol.js";

export type ConnectionStatus =
  | "idle"
  | "creating"
  | "connected"
  | "closed"
  | "error";

export type MicPermission = "unknown" | "granted" | "denied";

export interface FeedEntry {
  speaker: "user" | `agent:${AgentId}`;
  text: string;
  seq: number | null; // agent captions carry seq; user transcripts do not
}

export interface ConsoleState {
  connection: ConnectionStatus;
  micPermission: MicPermission;
  detecting: boolean;
  sceneLabel: string | null;
  objects: string[];
  phase: Phase | null;
  speakingAgent: AgentId | null;
  captions: { 1: string | null; 2: string | null };
  feed: FeedEntry[];
  lastCaptionSeq: number;
  pttHeld: boolean;
  recording: boolean;
  errors: string[];
}

export const initialState: ConsoleState = {
  connection: "idle",
  micPermission: "unknown",
  detecting: false,
  sceneLabel: null,
  objects: [],
  phase: null,
  speakingAgent: null,
  captions: { 1: null, 2: null },
  feed: [],
  lastCaptionSeq: -1,
  pttHeld: false,
  recording: false,
  errors: [],
};

export type ConsoleEvent =
  | { type: "server"; message: ServerMessage }
  | { type: "connection"; status: ConnectionStatus }
  | { type: "mic"; permission: MicPermission }
  | { type: "ptt"; held: boolean; recording: boolean };

export function reduce(state: ConsoleState, event: ConsoleEvent): ConsoleState {
  switch (event.type) {
    case "connection":
      return {
        ...state,
        connection: event.status,
        detecting: event.status === "connected" ? state.sceneLabel === null : false,
      };

    case "mic":
      return { ...state, micPermission: event.permission };

    case "ptt":
      return { ...state, pttHeld: event.held, recording: event.recording };

    case "server":
      return reduceServer(state, event.message);

    default: {
      const exhaustive: never = event;
      return exhaustive;
    }
  }
}

function reduceServer(state: ConsoleState, message: ServerMessage): ConsoleState {
  switch (message.type) {
    case "state": {
      const speakingAgent =
        message.phase === "agent_speaking" ? (message.agent_id as AgentId) : null;
      return {
        ...state,
        phase: message.phase,
        speakingAgent,
        connection: message.phase === "closed" ? "closed" : state.connection,
      };
    }

    case "scene_ready":
      return {
        ...state,
        detecting: false,
        sceneLabel: message.scene_label,
        objects: message.objects,
      };

    case "caption": {
      const agent = agentIdOf(message.speaker);
      if (agent === null) return state; // user text arrives as user_transcript
      if (message.seq <= state.lastCaptionSeq) {
        // Duplicate or out-of-order delivery: the state message stream will
        // resync the phase; never render an utterance twice.
        console.warn("caption out of order", message.seq, state.lastCaptionSeq);
        return state;
      }
      return {
        ...state,
        captions: { ...state.captions, [agent]: message.text },
        feed: [
          ...state.feed,
          { speaker: message.speaker as FeedEntry["speaker"], text: message.text, seq: message.seq },
        ],
        lastCaptionSeq: message.seq,
      };
    }

    case "user_transcript": {
      if (message.text === "") return state; // empty hold: no turn committed
      return {
        ...state,
        feed: [...state.feed, { speaker: "user", text: message.text, seq: null }],
      };
    }

    case "audio":
    case "audio_stop":
      return state; // playback is a side effect; captions already rendered

    case "error":
      return { ...state, errors: [...state.errors, `${message.stage}: ${message.detail}`] };

    default: {
      const exhaustive: never = message;
      return exhaustive;
    }
  }
}

// The "Detecting Environment..." phase: visible from connect until the
// scene announcement arrives.
export function showDetecting(state: ConsoleState): boolean {
  return state.connection === "connected" && state.detecting;
}

export function inputMode(state: ConsoleState): "voice" | "text" {
  return state.micPermission === "granted" ? "voice" : "text";
}
