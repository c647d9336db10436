"""The impure shell around the pure engine.

One SessionRunner per session: a single ordered event queue, timers on an
injectable clock, and provider calls that never block the queue (they
complete by posting events back). Distinct sessions share nothing.

Provider failure policy: each call gets exactly one retry after a 500 ms
backoff on the session clock; the second failure surfaces to the engine as
a ProviderFailed event and the turn is skipped.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from typing import Callable, Iterable, Optional

from . import scene as scene_mod
from .clock import SimulatedClock, TimeSource, TimerHandle
from .engine import (
    AgentPlaybackComplete,
    CancelGapTimer,
    CloseRequested,
    CloseSession,
    EmitStateChange,
    EmitUtterance,
    EngineEffect,
    EngineEvent,
    GapElapsed,
    IllegalEventError,
    ModeratorChose,
    PlayAudio,
    PregenSlot,
    EMPTY_SLOT,
    ProviderFailed,
    PttReleased,
    RequestAgentResponse,
    RequestModerator,
    RequestTranscription,
    ResponseReady,
    SceneReady,
    SpeechCapture,
    StartDetection,
    StartGapTimer,
    StopAudio,
    TranscriptReady,
    TurnEngine,
)
from .model import ConversationHistory, Phase, SessionConfig, SessionState
from .prompts import (
    PromptKit,
    build_agent_prompt,
    build_moderator_prompt,
    load_templates,
    parse_moderator_output,
)
from .providers import (
    AGENT_TEMPERATURE,
    MODERATOR_TEMPERATURE,
    RETRY_BACKOFF_MS,
    AudioBlob,
    ChatRequest,
    ProviderError,
    ProviderSet,
)


class RunnerObserver:
    """Override any of these no-ops to watch a session from outside."""

    def on_event(self, ev: EngineEvent) -> None: ...

    def on_effect(self, effect: EngineEffect, at_ms: int) -> None: ...

    def on_committed(self, utterance) -> None: ...

    def on_state(self, state: SessionState, at_ms: int) -> None: ...

    def on_illegal(self, error: IllegalEventError, at_ms: int) -> None: ...

    def on_closed(self) -> None: ...


def _run_inline(job: Callable[[], None]) -> None:
    job()


class SessionRunner:
    """Drives one session: serializes events, executes effects, owns timers.

    `submit` decides where provider calls run: inline (default; right for
    mocks and simulated time) or on a thread pool for live backends, so slow
    HTTP never blocks the event queue.
    """

    def __init__(
        self,
        cfg: SessionConfig,
        providers: ProviderSet,
        clock: TimeSource,
        templates: Optional[PromptKit] = None,
        observer: Optional[RunnerObserver] = None,
        submit: Callable[[Callable[[], None]], None] = _run_inline,
        blob_resolver: Optional[Callable[[str], bytes]] = None,
    ):
        self.cfg = cfg
        self.providers = providers
        self.clock = clock
        self.templates = templates or load_templates()
        self.observers: list[RunnerObserver] = [observer] if observer else []
        self._submit = submit
        self._blob_resolver = blob_resolver

        self._engine = TurnEngine(cfg)
        self._state = SessionState.initializing()
        self._history = ConversationHistory()
        self._pregen: PregenSlot = EMPTY_SLOT

        self._lock = threading.RLock()
        self._queue: deque[tuple[EngineEvent, bool]] = deque()
        self._draining = False
        self._started = False
        self._closed = False

        self._gap_timers: dict[int, TimerHandle] = {}
        self._playback_timer: Optional[TimerHandle] = None
        self._user_cap_timer: Optional[TimerHandle] = None
        self._detection_timer: Optional[TimerHandle] = None
        self._durations: dict[str, int] = {}

        self.event_log: list[EngineEvent] = []
        self.handling_ms: list[float] = []

    # --- public surface ---

    @property
    def state(self) -> SessionState:
        return self._state

    @property
    def history(self) -> ConversationHistory:
        return self._history

    @property
    def is_closed(self) -> bool:
        return self._closed

    def add_observer(self, observer: RunnerObserver) -> None:
        with self._lock:
            self.observers.append(observer)

    def start(self) -> None:
        """Enter Initializing and kick off scene detection. Idempotent."""
        with self._lock:
            if self._started:
                return
            self._started = True
            state, effects, pregen = self._engine.bootstrap()
            self._state, self._pregen = state, pregen
            for eff in effects:
                self._apply_effect(eff, self.clock.now_ms())

    def post(self, ev: EngineEvent) -> None:
        self._post(ev, report_illegal=True)

    def shutdown(self) -> None:
        if not self._closed:
            self.post(CloseRequested(at_ms=self.clock.now_ms()))

    # --- event loop ---

    def _post(self, ev: EngineEvent, report_illegal: bool) -> None:
        with self._lock:
            self._queue.append((ev, report_illegal))
            if self._draining:
                return
            self._draining = True
            try:
                while self._queue:
                    queued, report = self._queue.popleft()
                    self._process(queued, report)
            finally:
                self._draining = False

    def _process(self, ev: EngineEvent, report_illegal: bool) -> None:
        t0 = time.perf_counter_ns()
        self.event_log.append(ev)
        if isinstance(ev, ResponseReady) and ev.audio_ref:
            self._durations[ev.audio_ref] = ev.duration_ms
        for obs in self.observers:
            obs.on_event(ev)
        try:
            state, effects, pregen = self._engine.step(
                self._state, self._history, self._pregen, ev
            )
        except IllegalEventError as err:
            if report_illegal:
                for obs in self.observers:
                    obs.on_illegal(err, ev.at_ms)
            self.handling_ms.append((time.perf_counter_ns() - t0) / 1e6)
            return
        self._state = state
        self._pregen = pregen
        for eff in effects:
            self._apply_effect(eff, ev.at_ms)
        self.handling_ms.append((time.perf_counter_ns() - t0) / 1e6)

    # --- effect execution ---

    def _apply_effect(self, eff: EngineEffect, at_ms: int) -> None:
        for obs in self.observers:
            obs.on_effect(eff, at_ms)

        if isinstance(eff, EmitUtterance):
            self._history = self._history.append(eff.utterance)
            for obs in self.observers:
                obs.on_committed(eff.utterance)
        elif isinstance(eff, EmitStateChange):
            self._manage_user_cap(eff.state)
            for obs in self.observers:
                obs.on_state(eff.state, at_ms)
        elif isinstance(eff, StartGapTimer):
            self._cancel_gap_timers()
            timer_id = eff.timer_id
            self._gap_timers[timer_id] = self.clock.schedule(
                eff.gap_ms,
                lambda: self.post(GapElapsed(timer_id, self.clock.now_ms())),
            )
        elif isinstance(eff, CancelGapTimer):
            handle = self._gap_timers.pop(eff.timer_id, None)
            if handle is not None:
                handle.cancel()
        elif isinstance(eff, PlayAudio):
            duration = self._durations.get(eff.audio_ref, 0)
            if self._playback_timer is not None:
                self._playback_timer.cancel()
            agent_id = eff.agent_id
            self._playback_timer = self.clock.schedule(
                duration,
                lambda: self.post(
                    AgentPlaybackComplete(agent_id, self.clock.now_ms())
                ),
            )
        elif isinstance(eff, StopAudio):
            if self._playback_timer is not None:
                self._playback_timer.cancel()
                self._playback_timer = None
        elif isinstance(eff, StartDetection):
            self._detection_timer = scene_mod.run_detection(
                eff.scene,
                self.clock,
                lambda scn, at: self.post(SceneReady(scn, at)),
            )
        elif isinstance(eff, RequestTranscription):
            self._dispatch_transcription(eff)
        elif isinstance(eff, RequestModerator):
            self._dispatch_moderator(eff)
        elif isinstance(eff, RequestAgentResponse):
            self._dispatch_agent_response(eff)
        elif isinstance(eff, CloseSession):
            self._closed = True
            self._cancel_all_timers()
            for obs in self.observers:
                obs.on_closed()

    def _manage_user_cap(self, state: SessionState) -> None:
        # A hold that exceeds max_user_speech_ms is force-released (empty
        # capture, so no turn is committed).
        if state.phase is Phase.USER_SPEAKING:
            self._user_cap_timer = self.clock.schedule(
                self.cfg.timing.max_user_speech_ms, self._force_release
            )
        elif self._user_cap_timer is not None:
            self._user_cap_timer.cancel()
            self._user_cap_timer = None

    def _force_release(self) -> None:
        now = self.clock.now_ms()
        # Not reported as illegal: a real release may have raced this timer.
        self._post(
            PttReleased(SpeechCapture(started_at_ms=now, ended_at_ms=now), now),
            report_illegal=False,
        )

    def _cancel_gap_timers(self) -> None:
        for handle in self._gap_timers.values():
            handle.cancel()
        self._gap_timers.clear()

    def _cancel_all_timers(self) -> None:
        self._cancel_gap_timers()
        for handle in (
            self._playback_timer,
            self._user_cap_timer,
            self._detection_timer,
        ):
            if handle is not None:
                handle.cancel()
        self._playback_timer = None
        self._user_cap_timer = None
        self._detection_timer = None

    # --- provider dispatch (never blocks the queue; posts events back) ---

    def _call_with_retry(
        self,
        attempt: Callable[[], object],
        on_success: Callable[[object], None],
        on_failure: Callable[[ProviderError], None],
    ) -> None:
        def second() -> None:
            try:
                value = attempt()
            except ProviderError as err:
                on_failure(err)
            else:
                on_success(value)

        def first() -> None:
            try:
                value = attempt()
            except ProviderError:
                self.clock.schedule(
                    RETRY_BACKOFF_MS, lambda: self._submit(second)
                )
            else:
                on_success(value)

        self._submit(first)

    def _dispatch_transcription(self, eff: RequestTranscription) -> None:
        capture = eff.capture
        if capture.text is not None:
            # Text fallback: no audio stack involved.
            self.post(TranscriptReady(capture.text, capture, self.clock.now_ms()))
            return

        ref = capture.audio_ref or ""
        data = self._blob_resolver(ref) if self._blob_resolver else b""

        def attempt():
            return self.providers.stt.transcribe(
                AudioBlob(ref=ref, data=data), self.cfg.language
            )

        def ok(result) -> None:
            self.post(TranscriptReady(result.text, capture, self.clock.now_ms()))

        def fail(err: ProviderError) -> None:
            self.post(
                ProviderFailed("stt", err.detail, self.clock.now_ms())
            )

        self._call_with_retry(attempt, ok, fail)

    def _dispatch_moderator(self, eff: RequestModerator) -> None:
        history = eff.history
        basis = len(history)
        prompt = build_moderator_prompt(self.cfg, history, self.templates)
        req = ChatRequest(
            prompt, temperature=MODERATOR_TEMPERATURE, max_output_tokens=5,
            tag="moderator",
        )
        last_agent = history.last_agent_id()

        def attempt():
            return self.providers.chat.complete(req)

        def ok(raw) -> None:
            decision = parse_moderator_output(raw, last_agent)
            self.post(
                ModeratorChose(
                    decision.chosen_agent, basis, decision.raw_output,
                    self.clock.now_ms(),
                )
            )

        def fail(err: ProviderError) -> None:
            self.post(
                ProviderFailed(
                    "moderator", err.detail, self.clock.now_ms(), basis=basis
                )
            )

        self._call_with_retry(attempt, ok, fail)

    def _dispatch_agent_response(self, eff: RequestAgentResponse) -> None:
        agent_id, history, basis, pregen = eff.agent_id, eff.history, eff.basis, eff.pregen
        persona = self.cfg.persona(agent_id)
        prompt = build_agent_prompt(self.cfg, persona, history, self.templates)
        req = ChatRequest(
            prompt, temperature=AGENT_TEMPERATURE, tag=f"agent:{agent_id}"
        )

        def chat_attempt():
            return self.providers.chat.complete(req)

        def chat_ok(text) -> None:
            self._dispatch_tts(agent_id, text, basis, pregen)

        def chat_fail(err: ProviderError) -> None:
            self.post(
                ProviderFailed(
                    "chat", err.detail, self.clock.now_ms(),
                    agent_id=agent_id, basis=basis,
                )
            )

        self._call_with_retry(chat_attempt, chat_ok, chat_fail)

    def _dispatch_tts(self, agent_id: int, text: str, basis: int, pregen: bool) -> None:
        voice = self.cfg.persona(agent_id).voice_id

        def attempt():
            return self.providers.tts.synthesize(text, voice)

        def ok(result) -> None:
            self._durations[result.audio_ref] = result.duration_ms
            self.post(
                ResponseReady(
                    agent_id, text, result.audio_ref, result.duration_ms,
                    basis, pregen, self.clock.now_ms(),
                )
            )

        def fail(err: ProviderError) -> None:
            # The caption still counts: report the failure, then deliver the
            # utterance without audio.
            now = self.clock.now_ms()
            self.post(ProviderFailed("tts", err.detail, now, agent_id=agent_id, basis=basis))
            self.post(ResponseReady(agent_id, text, None, 0, basis, pregen, now))

        self._call_with_retry(attempt, ok, fail)


def run_session(
    cfg: SessionConfig,
    providers: ProviderSet,
    clock: SimulatedClock,
    inbound: Iterable[EngineEvent] = (),
    templates: Optional[PromptKit] = None,
    observer: Optional[RunnerObserver] = None,
    until: Optional[Callable[[ConversationHistory], bool]] = None,
    horizon_ms: Optional[int] = None,
) -> ConversationHistory:
    """Drive a whole session deterministically under a simulated clock.

    Inbound client events are injected at their at_ms timestamps. The run
    ends when the session closes, when `until(history)` holds, or at
    horizon_ms. Returns the committed history.
    """
    if not isinstance(clock, SimulatedClock):
        raise TypeError(
            "run_session needs a SimulatedClock; drive SessionRunner directly "
            "for real-time use"
        )
    runner = SessionRunner(
        cfg, providers, clock, templates=templates, observer=observer
    )
    runner.start()
    for ev in inbound:
        delay = max(0, ev.at_ms - clock.now_ms())
        clock.schedule(delay, lambda ev=ev: runner.post(ev))

    def done() -> bool:
        if runner.is_closed:
            return True
        return until is not None and until(runner.history)

    clock.run_until(done=done, horizon_ms=horizon_ms)
    return runner.history
