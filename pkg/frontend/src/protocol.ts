// Wire types for the session service: HTTP create/close plus the
// per-session WebSocket event channel. Field names must match the server.

export type AgentId = 1 | 2;
export type Speaker = "user" | "agent:1" | "agent:2";

export type Phase =
  | "initializing"
  | "agent_speaking"
  | "gap"
  | "moderator_selecting"
  | "generating_response"
  | "user_speaking"
  | "transcribing"
  | "closed";

export type ServerMessage =
  | { type: "state"; phase: Phase; agent_id: AgentId | null; at_ms: number }
  | { type: "scene_ready"; scene_label: string; objects: string[]; at_ms: number }
  | { type: "caption"; speaker: Speaker; text: string; seq: number; at_ms: number }
  | {
      type: "audio";
      speaker: Speaker;
      blob_url: string;
      duration_ms: number;
      at_ms: number;
    }
  | { type: "audio_stop"; at_ms: number }
  | { type: "user_transcript"; text: string; at_ms: number }
  | { type: "error"; stage: string; detail: string; at_ms: number };

export type ClientMessage =
  | { type: "ptt_down" }
  | { type: "ptt_up"; text: string }
  | { type: "ptt_up"; audio_b64: string; container: string }
  | { type: "close" };

export interface CreateSessionRequest {
  language: string;
  level: string;
  user_display_name?: string;
  timing?: { gap_ms?: number; max_user_speech_ms?: number };
  scene?: { scene_label: string; objects?: string[]; detection_delay_ms?: number };
}

export interface CreateSessionResponse {
  session_id: string;
  state: string;
}

export function agentIdOf(speaker: Speaker): AgentId | null {
  if (speaker === "agent:1") return 1;
  if (speaker === "agent:2") return 2;
  return null;
}
