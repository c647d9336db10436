"""The per-session turn-taking state machine.

The engine is a pure transition function: step(state, history, pregen, event)
returns the next state, an ordered list of effects describing all required
I/O, and the next pre-generation slot. It holds no hidden state, so a full
session replays byte-identically from its event log.

Turn-taking rules implemented here:
  * agent-to-agent flow strictly alternates speakers; the moderator is
    consulted only after a user utterance;
  * a fixed gap timer runs between agent turns, during which the user may
    take the floor; if they stay silent, the other agent responds;
  * push-to-talk preempts agent playback at any time and invalidates any
    pre-generated utterance;
  * the next agent utterance is pre-generated while the current one plays,
    and is only usable against the exact history length it was built from;
  * replies to the user are played as soon as they are ready, not
    gap-delayed;
  * an utterance is committed the moment it starts playing; interrupting it
    does not remove or truncate the committed text.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

from .model import (
    ConversationHistory,
    SceneContext,
    SessionConfig,
    SessionState,
    Phase,
    SpeakerId,
    Utterance,
    other_agent,
)

# --- events ---------------------------------------------------------------------


@dataclass(frozen=True)
class SpeechCapture:
    """One push-to-talk hold: its audio (or text fallback) and time span."""

    audio_ref: Optional[str] = None
    text: Optional[str] = None
    started_at_ms: int = 0
    ended_at_ms: int = 0

    @property
    def is_empty(self) -> bool:
        return self.audio_ref is None and self.text is None


@dataclass(frozen=True)
class SceneReady:
    scene: SceneContext
    at_ms: int


@dataclass(frozen=True)
class AgentPlaybackComplete:
    agent_id: int
    at_ms: int


@dataclass(frozen=True)
class GapElapsed:
    timer_id: int
    at_ms: int


@dataclass(frozen=True)
class PttPressed:
    at_ms: int


@dataclass(frozen=True)
class PttReleased:
    capture: SpeechCapture
    at_ms: int


@dataclass(frozen=True)
class TranscriptReady:
    text: str
    capture: SpeechCapture
    at_ms: int


@dataclass(frozen=True)
class ModeratorChose:
    agent_id: int
    basis: int  # history length the decision was made against
    raw_output: str
    at_ms: int


@dataclass(frozen=True)
class ResponseReady:
    agent_id: int
    text: str
    audio_ref: Optional[str]
    duration_ms: int
    basis: int  # history length the response was generated against
    pregen: bool
    at_ms: int


@dataclass(frozen=True)
class ProviderFailed:
    stage: str  # chat | stt | tts | moderator
    detail: str
    at_ms: int
    agent_id: Optional[int] = None
    basis: Optional[int] = None


@dataclass(frozen=True)
class CloseRequested:
    at_ms: int


EngineEvent = Union[
    SceneReady,
    AgentPlaybackComplete,
    GapElapsed,
    PttPressed,
    PttReleased,
    TranscriptReady,
    ModeratorChose,
    ResponseReady,
    ProviderFailed,
    CloseRequested,
]

# Events originating from the client; misuse of these is reported as illegal.
# Everything else comes from timers or providers and may race a transition,
# so stale arrivals are silently dropped.
_CLIENT_EVENTS = (PttPressed, PttReleased, CloseRequested, SceneReady)


# --- effects --------------------------------------------------------------------


@dataclass(frozen=True)
class StartDetection:
    scene: SceneContext


@dataclass(frozen=True)
class StartGapTimer:
    timer_id: int
    gap_ms: int


@dataclass(frozen=True)
class CancelGapTimer:
    timer_id: int


@dataclass(frozen=True)
class RequestTranscription:
    capture: SpeechCapture


@dataclass(frozen=True)
class RequestModerator:
    history: ConversationHistory


@dataclass(frozen=True)
class RequestAgentResponse:
    agent_id: int
    history: ConversationHistory
    pregen: bool
    basis: int


@dataclass(frozen=True)
class EmitUtterance:
    utterance: Utterance


@dataclass(frozen=True)
class EmitStateChange:
    state: SessionState


@dataclass(frozen=True)
class PlayAudio:
    agent_id: int
    audio_ref: str


@dataclass(frozen=True)
class StopAudio:
    pass


@dataclass(frozen=True)
class CloseSession:
    pass


EngineEffect = Union[
    StartDetection,
    StartGapTimer,
    CancelGapTimer,
    RequestTranscription,
    RequestModerator,
    RequestAgentResponse,
    EmitUtterance,
    EmitStateChange,
    PlayAudio,
    StopAudio,
    CloseSession,
]


# --- pre-generation slot --------------------------------------------------------


@dataclass(frozen=True)
class PregenContent:
    agent_id: int
    text: str
    audio_ref: Optional[str]
    duration_ms: int


@dataclass(frozen=True)
class PregenSlot:
    content: Optional[PregenContent] = None
    valid_for_seq: int = -1

    @property
    def is_empty(self) -> bool:
        return self.content is None

    def usable_at(self, history_len: int) -> bool:
        return self.content is not None and self.valid_for_seq == history_len


EMPTY_SLOT = PregenSlot()


class IllegalEventError(Exception):
    """A client event arrived in a state where it is not legal; the session
    stays in its prior state."""

    def __init__(self, state: SessionState, event: EngineEvent, reason: str):
        self.state = state
        self.event = event
        self.reason = reason
        super().__init__(f"{type(event).__name__} in {state.phase.value}: {reason}")


class StepResult(NamedTuple):
    state: SessionState
    effects: list[EngineEffect]
    pregen: PregenSlot


def schedule_pregen(
    state: SessionState, history: ConversationHistory
) -> Optional[RequestAgentResponse]:
    """While an agent speaks, request the other agent's next utterance so the
    agent-to-agent handoff needs no synchronous provider call."""
    if state.phase is not Phase.AGENT_SPEAKING:
        return None
    return RequestAgentResponse(
        agent_id=other_agent(state.agent_id),
        history=history,
        pregen=True,
        basis=len(history),
    )


class TurnEngine:
    """Pure state machine over one session's configuration."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg

    # The runner calls this once to obtain the initial state and effects.
    def bootstrap(self) -> StepResult:
        state = SessionState.initializing()
        return StepResult(
            state, [EmitStateChange(state), StartDetection(self.cfg.scene)], EMPTY_SLOT
        )

    def step(
        self,
        state: SessionState,
        history: ConversationHistory,
        pregen: PregenSlot,
        ev: EngineEvent,
    ) -> StepResult:
        """Apply one event. Raises IllegalEventError for client misuse; stale
        timer/provider events return the unchanged state with no effects."""
        if state.phase is Phase.CLOSED:
            # Late timers and provider completions after close are expected.
            if isinstance(ev, _CLIENT_EVENTS):
                raise IllegalEventError(state, ev, "session is closed")
            return StepResult(state, [], pregen)

        if isinstance(ev, CloseRequested):
            return self._close(state, history, pregen)

        handler = {
            Phase.INITIALIZING: self._step_initializing,
            Phase.GAP: self._step_gap,
            Phase.AGENT_SPEAKING: self._step_agent_speaking,
            Phase.USER_SPEAKING: self._step_user_speaking,
            Phase.TRANSCRIBING: self._step_transcribing,
            Phase.MODERATOR_SELECTING: self._step_moderator_selecting,
            Phase.GENERATING_RESPONSE: self._step_generating,
        }[state.phase]
        return handler(state, history, pregen, ev)

    # --- per-phase handlers ---

    def _step_initializing(self, state, history, pregen, ev) -> StepResult:
        if isinstance(ev, SceneReady):
            return self._enter_gap(history, pregen)
        return self._reject_or_drop(state, pregen, ev, "scene detection still running")

    def _step_gap(self, state, history, pregen, ev) -> StepResult:
        if isinstance(ev, GapElapsed):
            if ev.timer_id != len(history):
                return StepResult(state, [], pregen)  # stale timer
            return self._start_agent_turn(history, pregen, ev.at_ms)
        if isinstance(ev, PttPressed):
            new_state = SessionState.user_speaking()
            effects = [CancelGapTimer(len(history)), EmitStateChange(new_state)]
            return StepResult(new_state, effects, EMPTY_SLOT)
        if isinstance(ev, ResponseReady):
            return StepResult(state, [], _store(ev))
        return self._reject_or_drop(state, pregen, ev, "waiting out the gap")

    def _step_agent_speaking(self, state, history, pregen, ev) -> StepResult:
        if isinstance(ev, AgentPlaybackComplete):
            if ev.agent_id != state.agent_id:
                return StepResult(state, [], pregen)  # stale completion
            new_state = SessionState.gap()
            effects = [
                EmitStateChange(new_state),
                StartGapTimer(len(history), self.cfg.timing.gap_ms),
            ]
            return StepResult(new_state, effects, pregen)
        if isinstance(ev, PttPressed):
            # The user may take the floor mid-playback; the interrupted
            # utterance stays committed with its full text.
            new_state = SessionState.user_speaking()
            effects = [
                StopAudio(),
                CancelGapTimer(len(history)),
                EmitStateChange(new_state),
            ]
            return StepResult(new_state, effects, EMPTY_SLOT)
        if isinstance(ev, ResponseReady):
            return StepResult(state, [], _store(ev))
        return self._reject_or_drop(state, pregen, ev, "an agent is speaking")

    def _step_user_speaking(self, state, history, pregen, ev) -> StepResult:
        if isinstance(ev, PttReleased):
            if ev.capture.is_empty:
                return self._enter_gap(history, pregen)  # abandoned hold
            new_state = SessionState.transcribing()
            effects = [
                EmitStateChange(new_state),
                RequestTranscription(ev.capture),
            ]
            return StepResult(new_state, effects, pregen)
        if isinstance(ev, PttPressed):
            raise IllegalEventError(state, ev, "push-to-talk is already held")
        if isinstance(ev, ResponseReady):
            return StepResult(state, [], _store(ev))
        return self._reject_or_drop(state, pregen, ev, "the user is speaking")

    def _step_transcribing(self, state, history, pregen, ev) -> StepResult:
        if isinstance(ev, TranscriptReady):
            if not ev.text.strip():
                return self._enter_gap(history, pregen)  # silence: no turn
            u = Utterance(
                seq=len(history),
                speaker=SpeakerId.user(),
                text=ev.text,
                audio_ref=ev.capture.audio_ref,
                started_at_ms=ev.capture.started_at_ms,
                ended_at_ms=max(ev.capture.ended_at_ms, ev.capture.started_at_ms),
            )
            new_history = history.append(u)
            new_state = SessionState.moderator_selecting()
            effects = [
                EmitUtterance(u),
                EmitStateChange(new_state),
                RequestModerator(new_history),
            ]
            return StepResult(new_state, effects, pregen)
        if isinstance(ev, ProviderFailed) and ev.stage == "stt":
            return self._enter_gap(history, pregen)  # turn lost, keep going
        if isinstance(ev, ResponseReady):
            return StepResult(state, [], _store(ev))
        return self._reject_or_drop(state, pregen, ev, "transcription in flight")

    def _step_moderator_selecting(self, state, history, pregen, ev) -> StepResult:
        if isinstance(ev, ModeratorChose):
            if ev.basis != len(history):
                return StepResult(state, [], pregen)  # decision for older history
            new_state = SessionState.generating(ev.agent_id)
            effects = [
                EmitStateChange(new_state),
                RequestAgentResponse(
                    agent_id=ev.agent_id, history=history, pregen=False, basis=len(history)
                ),
            ]
            return StepResult(new_state, effects, pregen)
        if isinstance(ev, PttPressed):
            new_state = SessionState.user_speaking()
            return StepResult(new_state, [EmitStateChange(new_state)], EMPTY_SLOT)
        if isinstance(ev, ProviderFailed) and ev.stage in ("chat", "moderator"):
            if ev.basis in (None, len(history)):
                return self._enter_gap(history, pregen)  # skip the turn
            return StepResult(state, [], pregen)  # a stray pregen failure
        if isinstance(ev, ResponseReady):
            return StepResult(state, [], _store(ev))
        return self._reject_or_drop(state, pregen, ev, "moderator deciding")

    def _step_generating(self, state, history, pregen, ev) -> StepResult:
        if isinstance(ev, ResponseReady):
            if ev.agent_id != state.agent_id:
                return StepResult(state, [], _store(ev))  # stray pregen arrival
            if ev.basis != len(history):
                # Generated against an older history: discard, ask again.
                effects: list[EngineEffect] = [
                    RequestAgentResponse(
                        agent_id=state.agent_id,
                        history=history,
                        pregen=False,
                        basis=len(history),
                    )
                ]
                return StepResult(state, effects, pregen)
            return self._commit_agent_utterance(
                history,
                PregenContent(ev.agent_id, ev.text, ev.audio_ref, ev.duration_ms),
                ev.at_ms,
            )
        if isinstance(ev, PttPressed):
            new_state = SessionState.user_speaking()
            return StepResult(new_state, [EmitStateChange(new_state)], EMPTY_SLOT)
        if isinstance(ev, ProviderFailed) and ev.stage == "chat":
            # A tts failure is not handled here: the pipeline always follows
            # it with a caption-only ResponseReady. Only a failure of this
            # turn's own chat request skips the turn.
            mine = ev.agent_id in (None, state.agent_id) and ev.basis in (
                None,
                len(history),
            )
            if mine:
                return self._enter_gap(history, pregen)  # skip the turn
            return StepResult(state, [], pregen)  # a stray pregen failure
        return self._reject_or_drop(state, pregen, ev, "generating a response")

    # --- shared transitions ---

    def _enter_gap(self, history, pregen) -> StepResult:
        new_state = SessionState.gap()
        effects = [
            EmitStateChange(new_state),
            StartGapTimer(len(history), self.cfg.timing.gap_ms),
        ]
        return StepResult(new_state, effects, pregen)

    def _start_agent_turn(self, history, pregen, at_ms) -> StepResult:
        """Gap over with no user input: play the pre-generated utterance if it
        is still fresh, otherwise request one synchronously."""
        if pregen.usable_at(len(history)):
            return self._commit_agent_utterance(history, pregen.content, at_ms)
        last = history.last_agent_id()
        next_agent = other_agent(last) if last else self.cfg.opening_agent_id
        new_state = SessionState.generating(next_agent)
        effects = [
            EmitStateChange(new_state),
            RequestAgentResponse(
                agent_id=next_agent, history=history, pregen=False, basis=len(history)
            ),
        ]
        return StepResult(new_state, effects, EMPTY_SLOT)

    def _commit_agent_utterance(
        self, history: ConversationHistory, content: PregenContent, at_ms: int
    ) -> StepResult:
        u = Utterance(
            seq=len(history),
            speaker=SpeakerId.agent(content.agent_id),
            text=content.text,
            audio_ref=content.audio_ref,
            started_at_ms=at_ms,
            ended_at_ms=at_ms + max(0, content.duration_ms),
        )
        new_history = history.append(u)
        if content.audio_ref is None:
            # No audio to play (TTS failed): the caption still counts as a
            # turn; go straight back to the gap.
            new_state = SessionState.gap()
            effects = [
                EmitUtterance(u),
                EmitStateChange(new_state),
                StartGapTimer(len(new_history), self.cfg.timing.gap_ms),
            ]
            return StepResult(new_state, effects, EMPTY_SLOT)
        new_state = SessionState.agent_speaking(content.agent_id)
        effects = [
            EmitUtterance(u),
            EmitStateChange(new_state),
            PlayAudio(content.agent_id, content.audio_ref),
        ]
        pregen_req = schedule_pregen(new_state, new_history)
        if pregen_req is not None:
            effects.append(pregen_req)
        return StepResult(new_state, effects, EMPTY_SLOT)

    def _close(self, state, history, pregen) -> StepResult:
        effects: list[EngineEffect] = []
        if state.phase is Phase.AGENT_SPEAKING:
            effects.append(StopAudio())
        if state.phase in (Phase.GAP,):
            effects.append(CancelGapTimer(len(history)))
        new_state = SessionState.closed()
        effects.extend([EmitStateChange(new_state), CloseSession()])
        return StepResult(new_state, effects, EMPTY_SLOT)

    def _reject_or_drop(self, state, pregen, ev, context: str) -> StepResult:
        if isinstance(ev, _CLIENT_EVENTS):
            if isinstance(ev, PttReleased):
                raise IllegalEventError(
                    state, ev, "push-to-talk release without a preceding press"
                )
            raise IllegalEventError(state, ev, f"not legal while {context}")
        return StepResult(state, [], pregen)


def _store(ev: ResponseReady) -> PregenSlot:
    """Park a response for later use; staleness is checked at use time."""
    return PregenSlot(
        content=PregenContent(ev.agent_id, ev.text, ev.audio_ref, ev.duration_ms),
        valid_for_seq=ev.basis,
    )


# --- event log (JSON Lines) ------------------------------------------------------
#
# Every event serializes to one JSON object with a "kind" discriminator so a
# failing session can be reproduced from its log alone.

_EVENT_KINDS = {
    SceneReady: "scene_ready",
    AgentPlaybackComplete: "playback_complete",
    GapElapsed: "gap_elapsed",
    PttPressed: "ptt_pressed",
    PttReleased: "ptt_released",
    TranscriptReady: "transcript_ready",
    ModeratorChose: "moderator_decision",
    ResponseReady: "response_ready",
    ProviderFailed: "provider_failed",
    CloseRequested: "close_requested",
}


def event_to_dict(ev: EngineEvent) -> dict:
    kind = _EVENT_KINDS[type(ev)]
    out: dict = {"kind": kind, "at_ms": ev.at_ms}
    if isinstance(ev, SceneReady):
        out["scene"] = {
            "scene_label": ev.scene.scene_label,
            "objects": list(ev.scene.objects),
            "detection_delay_ms": ev.scene.detection_delay_ms,
        }
    elif isinstance(ev, AgentPlaybackComplete):
        out["agent_id"] = ev.agent_id
    elif isinstance(ev, GapElapsed):
        out["timer_id"] = ev.timer_id
    elif isinstance(ev, PttReleased):
        out["capture"] = _capture_to_dict(ev.capture)
    elif isinstance(ev, TranscriptReady):
        out["text"] = ev.text
        out["capture"] = _capture_to_dict(ev.capture)
    elif isinstance(ev, ModeratorChose):
        out.update(agent_id=ev.agent_id, basis=ev.basis, raw_output=ev.raw_output)
    elif isinstance(ev, ResponseReady):
        out.update(
            agent_id=ev.agent_id,
            text=ev.text,
            audio_ref=ev.audio_ref,
            duration_ms=ev.duration_ms,
            basis=ev.basis,
            pregen=ev.pregen,
        )
    elif isinstance(ev, ProviderFailed):
        out.update(
            stage=ev.stage, detail=ev.detail, agent_id=ev.agent_id, basis=ev.basis
        )
    return out


def event_from_dict(raw: dict) -> EngineEvent:
    kind = raw["kind"]
    at_ms = int(raw["at_ms"])
    if kind == "scene_ready":
        s = raw["scene"]
        return SceneReady(
            SceneContext(s["scene_label"], tuple(s["objects"]), s["detection_delay_ms"]),
            at_ms,
        )
    if kind == "playback_complete":
        return AgentPlaybackComplete(raw["agent_id"], at_ms)
    if kind == "gap_elapsed":
        return GapElapsed(raw["timer_id"], at_ms)
    if kind == "ptt_pressed":
        return PttPressed(at_ms)
    if kind == "ptt_released":
        return PttReleased(_capture_from_dict(raw["capture"]), at_ms)
    if kind == "transcript_ready":
        return TranscriptReady(raw["text"], _capture_from_dict(raw["capture"]), at_ms)
    if kind == "moderator_decision":
        return ModeratorChose(raw["agent_id"], raw["basis"], raw["raw_output"], at_ms)
    if kind == "response_ready":
        return ResponseReady(
            raw["agent_id"],
            raw["text"],
            raw["audio_ref"],
            raw["duration_ms"],
            raw["basis"],
            raw["pregen"],
            at_ms,
        )
    if kind == "provider_failed":
        return ProviderFailed(
            raw["stage"], raw["detail"], at_ms, raw.get("agent_id"), raw.get("basis")
        )
    if kind == "close_requested":
        return CloseRequested(at_ms)
    raise ValueError(f"unknown event kind '{kind}'")


def _capture_to_dict(c: SpeechCapture) -> dict:
    return {
        "audio_ref": c.audio_ref,
        "text": c.text,
        "started_at_ms": c.started_at_ms,
        "ended_at_ms": c.ended_at_ms,
    }


def _capture_from_dict(raw: dict) -> SpeechCapture:
    return SpeechCapture(
        audio_ref=raw.get("audio_ref"),
        text=raw.get("text"),
        started_at_ms=raw.get("started_at_ms", 0),
        ended_at_ms=raw.get("ended_at_ms", 0),
    )


def replay_events(
    cfg: SessionConfig, events: list[EngineEvent]
) -> tuple[ConversationHistory, list[EngineEffect]]:
    """Re-run a logged session through the pure engine: no timers, no
    providers. Returns the committed history and the full effect trace."""
    engine = TurnEngine(cfg)
    state, effects, pregen = engine.bootstrap()
    trace = list(effects)
    history = ConversationHistory()
    for ev in events:
        try:
            state, effects, pregen = engine.step(state, history, pregen, ev)
        except IllegalEventError:
            continue
        for eff in effects:
            if isinstance(eff, EmitUtterance):
                history = history.append(eff.utterance)
        trace.extend(effects)
    return history, trace
