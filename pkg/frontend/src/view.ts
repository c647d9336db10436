// DOM projection of ConsoleState. Pure write-through: reads state, writes
// elements; all decisions live in the reducer.

import { ConsoleState, inputMode, showDetecting } from "./state.js";

export interface PanelRefs {
  setup: HTMLElement;
  conversation: HTMLElement;
  detecting: HTMLElement;
  sceneLabel: HTMLElement;
  agentPanels: { 1: HTMLElement; 2: HTMLElement };
  agentCaptions: { 1: HTMLElement; 2: HTMLElement };
  userStrip: HTMLElement;
  pttButton: HTMLButtonElement;
  textFallback: HTMLElement;
  errors: HTMLElement;
  status: HTMLElement;
}

export function bindPanels(root: Document): PanelRefs {
  const byId = (id: string) => {
    const el = root.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el;
  };
  return {
    setup: byId("setup"),
    conversation: byId("conversation"),
    detecting: byId("detecting"),
    sceneLabel: byId("scene-label"),
    agentPanels: { 1: byId("agent-1"), 2: byId("agent-2") },
    agentCaptions: { 1: byId("caption-1"), 2: byId("caption-2") },
    userStrip: byId("user-strip"),
    pttButton: byId("ptt") as HTMLButtonElement,
    textFallback: byId("text-fallback"),
    errors: byId("errors"),
    status: byId("status"),
  };
}

export function render(state: ConsoleState, refs: PanelRefs): void {
  const inSession = state.connection === "connected" || state.connection === "closed";
  refs.setup.hidden = inSession;
  refs.conversation.hidden = !inSession;
  refs.detecting.hidden = !showDetecting(state);
  refs.sceneLabel.textContent = state.sceneLabel ?? "";
  refs.status.textContent = statusLine(state);

  for (const agent of [1, 2] as const) {
    refs.agentCaptions[agent].textContent = state.captions[agent] ?? "";
    refs.agentPanels[agent].classList.toggle(
      "speaking",
      state.speakingAgent === agent,
    );
  }

  const userLines = state.feed.filter((entry) => entry.speaker === "user");
  refs.userStrip.textContent = userLines.map((entry) => entry.text).join("\n");

  refs.pttButton.classList.toggle("recording", state.recording);
  refs.pttButton.hidden = inputMode(state) !== "voice";
  refs.textFallback.hidden = inputMode(state) !== "text";
  refs.errors.textContent = state.errors.slice(-3).join("\n");
}

function statusLine(state: ConsoleState): string {
  if (state.connection === "closed") return "session ended";
  if (state.connection !== "connected") return state.connection;
  if (state.pttHeld) return "listening to you…";
  switch (state.phase) {
    case "agent_speaking":
      return `agent ${state.speakingAgent} speaking`;
    case "gap":
      return "your chance to speak";
    case "moderator_selecting":
    case "generating_response":
    case "transcribing":
      return "thinking…";
    default:
      return state.phase ?? "";
  }
}
