"""Network-facing session host.

HTTP surface:
    POST   /sessions                 create a session (400 on invalid config)
    DELETE /sessions/{id}            close it, flush the transcript, return its path
    GET    /sessions/{id}/transcript current transcript as JSON Lines
    GET    /blobs/{ref}              stored audio blobs referenced by audio messages
    WS     /sessions/{id}/ws         the learner event channel (one per session)

Server messages carry the session-clock time and mirror engine commits in
order: state, scene_ready, caption {speaker,text}, audio {speaker,blob_url,
duration_ms}, audio_stop, user_transcript {text}, error {stage,detail}.
Client messages: ptt_down, ptt_up (base64 audio or text fallback), close.

Committed utterances are appended and flushed to the transcript file one by
one, so a crash loses at most the in-flight turn. Idle sessions are garbage
collected lazily on API traffic.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import re
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from fastapi import FastAPI, Response, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse

from .clock import WallClock
from .engine import (
    EngineEffect,
    EngineEvent,
    IllegalEventError,
    PlayAudio,
    ProviderFailed,
    PttPressed,
    PttReleased,
    SceneReady,
    SpeechCapture,
    StopAudio,
    TranscriptReady,
)
from .model import (
    AgentPersona,
    LanguageTag,
    ProficiencyLevel,
    SceneContext,
    SessionConfig,
    SessionState,
    TimingParams,
    Utterance,
    encode_history,
    encode_utterance,
    validate_config,
)
from .prompts import PromptKit, load_templates
from .providers import ProviderSet, build_live_providers, build_mock_providers, load_mock_script
from .runner import RunnerObserver, SessionRunner
from .scene import default_scene_path, load_scene

GC_IDLE_MS_DEFAULT = 30 * 60 * 1000

DEFAULT_PERSONAS = (
    AgentPersona(
        agent_id=1,
        display_name="Marta",
        personality="upbeat and curious; loves asking follow-up questions",
        voice_id="alloy",
    ),
    AgentPersona(
        agent_id=2,
        display_name="Omar",
        personality="calm and bookish; gently encouraging, fond of stories",
        voice_id="verse",
    ),
)


@dataclass
class ServiceSettings:
    scene_path: Optional[Path] = None
    templates_dir: Optional[Path] = None
    providers_mode: str = "mock"  # mock | live
    mock_script_path: Optional[Path] = None
    transcript_dir: Path = Path("transcripts")
    blob_dir: Path = Path("blobs")
    gc_idle_ms: int = GC_IDLE_MS_DEFAULT
    default_personas: tuple[AgentPersona, AgentPersona] = DEFAULT_PERSONAS


class BlobStore:
    """Content-addressed blob directory; refs are safe path components."""

    _REF_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes, ext: str) -> str:
        digest = hashlib.sha256(data).hexdigest()[:16]
        ref = f"{digest}.{ext}"
        path = self.directory / ref
        if not path.exists():
            path.write_bytes(data)
        return ref

    def get(self, ref: str) -> Optional[bytes]:
        if not self._REF_RE.match(ref):
            return None
        path = self.directory / ref
        return path.read_bytes() if path.exists() else None


class TranscriptWriter:
    """Append-and-flush persistence: one JSON line per committed utterance."""

    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = path.open("a", encoding="utf-8")
        self._lock = threading.Lock()

    def append(self, u: Utterance) -> None:
        with self._lock:
            if self._fh.closed:
                return
            self._fh.write(encode_utterance(u) + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()


class _SessionObserver(RunnerObserver):
    """Turns engine activity into wire messages and transcript lines."""

    def __init__(self, session: "ManagedSession"):
        self._session = session

    def on_event(self, ev: EngineEvent) -> None:
        if isinstance(ev, SceneReady):
            self._session.push(
                {
                    "type": "scene_ready",
                    "scene_label": ev.scene.scene_label,
                    "objects": list(ev.scene.objects),
                    "at_ms": ev.at_ms,
                }
            )
        elif isinstance(ev, TranscriptReady):
            self._session.push(
                {"type": "user_transcript", "text": ev.text, "at_ms": ev.at_ms}
            )
        elif isinstance(ev, ProviderFailed):
            self._session.push(
                {
                    "type": "error",
                    "stage": ev.stage,
                    "detail": ev.detail,
                    "at_ms": ev.at_ms,
                }
            )

    def on_effect(self, effect: EngineEffect, at_ms: int) -> None:
        if isinstance(effect, PlayAudio):
            self._session.push(
                {
                    "type": "audio",
                    "speaker": f"agent:{effect.agent_id}",
                    "blob_url": f"/blobs/{effect.audio_ref}",
                    "duration_ms": self._session.runner._durations.get(
                        effect.audio_ref, 0
                    ),
                    "at_ms": at_ms,
                }
            )
        elif isinstance(effect, StopAudio):
            self._session.push({"type": "audio_stop", "at_ms": at_ms})

    def on_committed(self, utterance: Utterance) -> None:
        self._session.writer.append(utterance)
        if not utterance.speaker.is_user:
            self._session.push(
                {
                    "type": "caption",
                    "speaker": utterance.speaker.wire(),
                    "text": utterance.text,
                    "seq": utterance.seq,
                    "at_ms": utterance.started_at_ms,
                }
            )

    def on_state(self, state: SessionState, at_ms: int) -> None:
        self._session.push(
            {
                "type": "state",
                "phase": state.phase.value,
                "agent_id": state.agent_id,
                "at_ms": at_ms,
            }
        )

    def on_illegal(self, error: IllegalEventError, at_ms: int) -> None:
        self._session.push(
            {"type": "error", "stage": "engine", "detail": str(error), "at_ms": at_ms}
        )


class ManagedSession:
    """One live session: runner, message backlog, single-attach channel."""

    def __init__(self, session_id: str, runner: SessionRunner, writer: TranscriptWriter):
        self.session_id = session_id
        self.runner = runner
        self.writer = writer
        self.created_at = time.time()
        self.last_activity_ms = time.monotonic_ns() // 1_000_000
        self.attached = False
        self._messages: list[dict] = []
        self._subscriber: Optional[Callable[[dict], None]] = None
        self._lock = threading.Lock()
        self._press_at_ms: Optional[int] = None
        runner.add_observer(_SessionObserver(self))

    def touch(self) -> None:
        self.last_activity_ms = time.monotonic_ns() // 1_000_000

    def push(self, message: dict) -> None:
        with self._lock:
            self._messages.append(message)
            subscriber = self._subscriber
        if subscriber is not None:
            subscriber(message)

    def subscribe(self, callback: Callable[[dict], None]) -> list[dict]:
        """Register the channel sink; returns the backlog to deliver first."""
        with self._lock:
            backlog = list(self._messages)
            self._subscriber = callback
        return backlog

    def unsubscribe(self) -> None:
        with self._lock:
            self._subscriber = None

    def handle_client_message(self, msg: dict, blobs: BlobStore) -> None:
        """Translate one ptt_down/ptt_up/close envelope into engine events."""
        self.touch()
        now = self.runner.clock.now_ms()
        msg_type = msg.get("type")
        if msg_type == "ptt_down":
            self._press_at_ms = now
            self.runner.post(PttPressed(at_ms=now))
        elif msg_type == "ptt_up":
            started = self._press_at_ms if self._press_at_ms is not None else now
            self._press_at_ms = None
            capture = self._capture_from_payload(msg, blobs, started, now)
            self.runner.post(PttReleased(capture, at_ms=now))
        elif msg_type == "close":
            self.runner.shutdown()
        else:
            self.push(
                {
                    "type": "error",
                    "stage": "channel",
                    "detail": f"unknown message type '{msg_type}'",
                    "at_ms": now,
                }
            )

    @staticmethod
    def _capture_from_payload(
        msg: dict, blobs: BlobStore, started: int, ended: int
    ) -> SpeechCapture:
        if "text" in msg and msg["text"] is not None:
            return SpeechCapture(
                text=str(msg["text"]), started_at_ms=started, ended_at_ms=ended
            )
        audio_b64 = msg.get("audio_b64")
        if audio_b64:
            container = msg.get("container", "mp3")
            try:
                data = base64.b64decode(audio_b64)
            except Exception:
                data = b""
            if data:
                ref = blobs.put(data, container)
                return SpeechCapture(
                    audio_ref=ref, started_at_ms=started, ended_at_ms=ended
                )
        # Nothing captured: the engine treats this as an abandoned hold, and
        # the client is told its turn produced an empty transcript.
        return SpeechCapture(text="", started_at_ms=started, ended_at_ms=ended)


class SessionRegistry:
    def __init__(self, settings: ServiceSettings):
        self.settings = settings
        self._sessions: dict[str, ManagedSession] = {}
        self._lock = threading.Lock()
        self.blobs = BlobStore(settings.blob_dir)
        self.templates: PromptKit = load_templates(settings.templates_dir)
        self.default_scene: SceneContext = (
            load_scene(settings.scene_path)
            if settings.scene_path
            else load_scene(default_scene_path())
        )
        self._mock_script = (
            load_mock_script(settings.mock_script_path)
            if settings.mock_script_path
            else None
        )
        self._live_pool: Optional[ThreadPoolExecutor] = None

    def _build_providers(self) -> tuple[ProviderSet, Callable]:
        if self.settings.providers_mode == "live":
            if self._live_pool is None:
                self._live_pool = ThreadPoolExecutor(max_workers=8)
            pool = self._live_pool
            return (
                build_live_providers(blob_sink=self.blobs.put),
                lambda job: pool.submit(job),
            )
        return (
            build_mock_providers(self._mock_script, blob_sink=self.blobs.put),
            lambda job: job(),
        )

    def create(self, cfg: SessionConfig) -> ManagedSession:
        session_id = uuid.uuid4().hex
        providers, submit = self._build_providers()
        runner = SessionRunner(
            cfg,
            providers,
            WallClock(),
            templates=self.templates,
            submit=submit,
            blob_resolver=lambda ref: self.blobs.get(ref) or b"",
        )
        writer = TranscriptWriter(
            Path(self.settings.transcript_dir) / f"{session_id}.jsonl"
        )
        session = ManagedSession(session_id, runner, writer)
        with self._lock:
            self._sessions[session_id] = session
        runner.start()
        return session

    def get(self, session_id: str) -> Optional[ManagedSession]:
        with self._lock:
            return self._sessions.get(session_id)

    def remove(self, session_id: str) -> Optional[ManagedSession]:
        with self._lock:
            return self._sessions.pop(session_id, None)

    def sweep(self) -> None:
        """Drop sessions idle past the GC ttl (lazy, called on API traffic)."""
        now_ms = time.monotonic_ns() // 1_000_000
        with self._lock:
            idle = [
                sid
                for sid, s in self._sessions.items()
                if now_ms - s.last_activity_ms > self.settings.gc_idle_ms
            ]
            expired = [self._sessions.pop(sid) for sid in idle]
        for session in expired:
            session.runner.shutdown()
            session.writer.close()

    def close_all(self) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
            self._sessions.clear()
        for session in sessions:
            session.runner.shutdown()
            session.writer.close()


def parse_session_request(body: dict, settings: ServiceSettings, default_scene: SceneContext):
    """Build a SessionConfig from a create request, applying server defaults.
    Returns (config, violations); type-level problems become violations too."""
    violations: list[str] = []

    language = LanguageTag(str(body.get("language", "")).strip())
    level_raw = str(body.get("level", "")).strip()
    try:
        level = ProficiencyLevel(level_raw)
    except ValueError:
        violations.append("level must be one of beginner|intermediate|advanced")
        level = ProficiencyLevel.INTERMEDIATE

    personas = settings.default_personas
    if "personas" in body:
        try:
            personas = tuple(
                AgentPersona(
                    agent_id=int(p["agent_id"]),
                    display_name=str(p["display_name"]),
                    personality=str(p.get("personality", "")),
                    voice_id=str(p["voice_id"]),
                )
                for p in body["personas"]
            )
        except (KeyError, TypeError, ValueError):
            violations.append("personas must each carry agent_id, display_name, voice_id")

    scene = default_scene
    if "scene" in body:
        raw = body["scene"]
        try:
            scene = SceneContext(
                scene_label=str(raw["scene_label"]),
                objects=tuple(str(o) for o in raw.get("objects", [])),
                detection_delay_ms=int(raw.get("detection_delay_ms", 2000)),
            )
        except (KeyError, TypeError, ValueError):
            violations.append("scene must carry scene_label and optional objects")

    timing = TimingParams()
    if "timing" in body:
        raw = body["timing"]
        try:
            timing = TimingParams(
                gap_ms=int(raw.get("gap_ms", timing.gap_ms)),
                max_user_speech_ms=int(
                    raw.get("max_user_speech_ms", timing.max_user_speech_ms)
                ),
            )
        except (TypeError, ValueError):
            violations.append("timing fields must be integers")

    cfg = SessionConfig(
        language=language,
        level=level,
        personas=personas if len(personas) == 2 else settings.default_personas,
        scene=scene,
        timing=timing,
        user_display_name=str(body.get("user_display_name", "Student")),
        opening_agent_id=int(body.get("opening_agent_id", 1)),
    )
    if len(personas) != 2:
        violations.append("personas must have ids {1,2}")
    violations.extend(validate_config(cfg))
    # Preserve order but drop duplicates from the two validation passes.
    seen: set[str] = set()
    deduped = [v for v in violations if not (v in seen or seen.add(v))]
    return cfg, deduped


def create_app(settings: Optional[ServiceSettings] = None) -> FastAPI:
    settings = settings or ServiceSettings()
    registry = SessionRegistry(settings)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        registry.close_all()

    app = FastAPI(title="tertulia session service", lifespan=lifespan)
    app.state.registry = registry

    @app.post("/sessions", status_code=201)
    def create_session(body: dict) -> JSONResponse:
        registry.sweep()
        cfg, violations = parse_session_request(
            body, settings, registry.default_scene
        )
        if violations:
            return JSONResponse(status_code=400, content={"violations": violations})
        session = registry.create(cfg)
        return JSONResponse(
            status_code=201,
            content={
                "session_id": session.session_id,
                "state": session.runner.state.phase.value,
            },
        )

    @app.delete("/sessions/{session_id}")
    def close_session(session_id: str) -> JSONResponse:
        registry.sweep()
        session = registry.remove(session_id)
        if session is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        session.runner.shutdown()
        session.writer.close()
        return JSONResponse(
            status_code=200, content={"transcript": str(session.writer.path)}
        )

    @app.get("/sessions/{session_id}/transcript")
    def get_transcript(session_id: str) -> Response:
        session = registry.get(session_id)
        if session is not None:
            session.touch()
            return PlainTextResponse(encode_history(session.runner.history))
        path = Path(settings.transcript_dir) / f"{session_id}.jsonl"
        if path.exists():
            return PlainTextResponse(path.read_text(encoding="utf-8"))
        return JSONResponse(status_code=404, content={"detail": "unknown session"})

    @app.get("/blobs/{ref}")
    def get_blob(ref: str) -> Response:
        data = registry.blobs.get(ref)
        if data is None:
            return JSONResponse(status_code=404, content={"detail": "unknown blob"})
        return Response(content=data, media_type="application/octet-stream")

    @app.websocket("/sessions/{session_id}/ws")
    async def event_channel(websocket: WebSocket, session_id: str) -> None:
        session = registry.get(session_id)
        if session is None or session.runner.is_closed:
            await websocket.close(code=4404, reason="unknown or closed session")
            return
        if session.attached:
            # Single-learner sessions: refuse a second concurrent channel.
            await websocket.accept()
            await websocket.send_json(
                {
                    "type": "error",
                    "stage": "channel",
                    "detail": "409: a channel is already attached",
                    "at_ms": session.runner.clock.now_ms(),
                }
            )
            await websocket.close(code=4409, reason="channel already attached")
            return

        await websocket.accept()
        session.attached = True
        session.touch()
        loop = asyncio.get_running_loop()
        outbox: asyncio.Queue[dict] = asyncio.Queue()
        backlog = session.subscribe(
            lambda message: loop.call_soon_threadsafe(outbox.put_nowait, message)
        )
        for message in backlog:
            outbox.put_nowait(message)

        async def pump() -> None:
            while True:
                message = await outbox.get()
                await websocket.send_json(message)

        sender = asyncio.create_task(pump())
        try:
            while True:
                data = await websocket.receive_json()
                session.handle_client_message(data, registry.blobs)
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            session.unsubscribe()
            session.attached = False

    return app
