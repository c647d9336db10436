// Console wiring: setup form, channel lifecycle, push-to-talk via mouse,
// touch, or the space bar, with automatic text fallback when the
// microphone is unavailable. Agent audio plays from blob URLs and stops
// whenever the learner takes the floor.

import {
  SessionChannel,
  browserSocketFactory,
  channelUrl,
  createSession,
} from "./client.js";
import { HoldRecorder, blobToBase64, micPermission } from "./recorder.js";
import { ConsoleEvent, ConsoleState, initialState, reduce } from "./state.js";
import { bindPanels, render } from "./view.js";

const BASE_URL = location.origin;

let state: ConsoleState = initialState;
let channel: SessionChannel | null = null;
const recorder = new HoldRecorder();
let player: HTMLAudioElement | null = null;

const refs = bindPanels(document);

function dispatch(event: ConsoleEvent): void {
  state = reduce(state, event);
  render(state, refs);
}

async function startSession(): Promise<void> {
  const language = (document.getElementById("language") as HTMLSelectElement).value;
  const level = (document.getElementById("level") as HTMLSelectElement).value;
  const name = (document.getElementById("name") as HTMLInputElement).value || "Student";

  dispatch({ type: "connection", status: "creating" });
  dispatch({ type: "mic", permission: await micPermission() });

  try {
    const session = await createSession(BASE_URL, {
      language,
      level,
      user_display_name: name,
    });
    const socket = browserSocketFactory(channelUrl(BASE_URL, session.session_id));
    channel = new SessionChannel(
      socket,
      (message) => {
        if (message.type === "audio") playAudio(message.blob_url);
        if (message.type === "audio_stop") stopAudio();
        dispatch({ type: "server", message });
      },
      () => dispatch({ type: "connection", status: "closed" }),
    );
    dispatch({ type: "connection", status: "connected" });
  } catch (err) {
    console.error(err);
    dispatch({ type: "connection", status: "error" });
  }
}

function playAudio(blobUrl: string): void {
  stopAudio();
  player = new Audio(BASE_URL + blobUrl);
  void player.play().catch((err) => console.warn("playback failed", err));
}

function stopAudio(): void {
  if (player) {
    player.pause();
    player = null;
  }
}

async function pttPress(): Promise<void> {
  if (!channel || !channel.pttDown()) return;
  stopAudio(); // the server will confirm with audio_stop; cut locally now
  let recording = false;
  if (state.micPermission === "granted") {
    try {
      await recorder.start();
      recording = true;
    } catch {
      dispatch({ type: "mic", permission: "denied" });
    }
  }
  dispatch({ type: "ptt", held: true, recording });
}

async function pttRelease(): Promise<void> {
  if (!channel || !channel.pttHeld) return;
  if (recorder.active) {
    const blob = await recorder.stop();
    channel.pttUpAudio(await blobToBase64(blob), "webm");
  } else {
    const box = document.getElementById("text-input") as HTMLInputElement;
    channel.pttUpText(box.value);
    box.value = "";
  }
  dispatch({ type: "ptt", held: false, recording: false });
}

function wire(): void {
  document.getElementById("start")!.addEventListener("click", () => void startSession());

  const ptt = refs.pttButton;
  ptt.addEventListener("mousedown", () => void pttPress());
  ptt.addEventListener("mouseup", () => void pttRelease());
  ptt.addEventListener("touchstart", (ev) => {
    ev.preventDefault();
    void pttPress();
  });
  ptt.addEventListener("touchend", () => void pttRelease());

  // Space bar doubles as push-to-talk for learners without a pointer.
  document.addEventListener("keydown", (ev) => {
    if (ev.code === "Space" && !ev.repeat && state.connection === "connected") {
      ev.preventDefault();
      void pttPress();
    }
  });
  document.addEventListener("keyup", (ev) => {
    if (ev.code === "Space") void pttRelease();
  });

  const sendText = document.getElementById("send-text");
  sendText?.addEventListener("mousedown", () => void pttPress());
  sendText?.addEventListener("mouseup", () => void pttRelease());

  window.addEventListener("beforeunload", () => channel?.requestClose());
  render(state, refs);
}

wire();
