"""Chat, speech-to-text, and text-to-speech backends.

Each backend comes in two flavors behind one small interface: a live client
speaking the OpenAI-compatible HTTP wire format, and a deterministic mock
driven by a script file so whole sessions replay identically offline.

Secrets come only from the environment (PROVIDER_API_KEY, PROVIDER_BASE_URL),
never from config files.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import httpx

from .model import LanguageTag

AGENT_TEMPERATURE = 0.7
MODERATOR_TEMPERATURE = 0.0
DEFAULT_MAX_OUTPUT_TOKENS = 300

# Synthetic speech-rate model for mock speech: fixed so gap and
# pre-generation timing tests are meaningful in simulated time.
MOCK_MS_PER_WORD = 300

# One retry with a 500 ms backoff; the second failure surfaces to the engine.
RETRY_BACKOFF_MS = 500
MAX_ATTEMPTS = 2

ENV_API_KEY = "PROVIDER_API_KEY"
ENV_BASE_URL = "PROVIDER_BASE_URL"


class ProviderError(RuntimeError):
    """A backend call failed; stage is one of chat|stt|tts|moderator."""

    def __init__(self, stage: str, detail: str):
        self.stage = stage
        self.detail = detail
        super().__init__(f"{stage}: {detail}")


@dataclass(frozen=True)
class ChatRequest:
    prompt: str
    temperature: float = AGENT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    # Routing tag ("agent:1", "agent:2", "moderator") used by the mock to
    # key scripted responses; the live client ignores it.
    tag: str = "agent"


@dataclass(frozen=True)
class AudioBlob:
    ref: str
    data: bytes = b""
    container: str = "mp3"


@dataclass(frozen=True)
class SttResult:
    text: str
    source_audio_ref: str


@dataclass(frozen=True)
class TtsResult:
    audio_ref: str
    duration_ms: int
    voice_id: str


class ChatBackend(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


class SttBackend(Protocol):
    def transcribe(self, audio: AudioBlob, language: LanguageTag) -> SttResult: ...


class TtsBackend(Protocol):
    def synthesize(self, text: str, voice_id: str) -> TtsResult: ...


@dataclass(frozen=True)
class ProviderSet:
    """The chat/stt/tts triple a session is created with; fixed for its life."""

    chat: ChatBackend
    stt: SttBackend
    tts: TtsBackend


def mock_speech_duration_ms(text: str) -> int:
    return MOCK_MS_PER_WORD * len(text.split())


# --- mock backends -------------------------------------------------------------


@dataclass(frozen=True)
class MockScript:
    """Scripted responses: chat lines per routing tag, transcripts per blob id."""

    chat: dict[str, list[str]] = field(default_factory=dict)
    transcripts: dict[str, str] = field(default_factory=dict)


def load_mock_script(path: str | Path) -> MockScript:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    chat = {k: list(v) for k, v in raw.get("chat", {}).items()}
    transcripts = dict(raw.get("transcripts", {}))
    return MockScript(chat=chat, transcripts=transcripts)


class MockChatBackend:
    """Returns scripted lines per routing tag, in order, wrapping around.

    Lookup order: exact tag, then "agent" for any agent:N tag. Unscripted
    tags get a synthesized deterministic line (moderator tags cycle 1/2) so
    script-less mock sessions still run.
    """

    def __init__(self, script: Optional[MockScript] = None):
        self._script = script or MockScript()
        self._counters: dict[str, int] = {}
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []

    def _next_index(self, key: str) -> int:
        with self._lock:
            n = self._counters.get(key, 0)
            self._counters[key] = n + 1
            return n

    def complete(self, req: ChatRequest) -> str:
        if not req.prompt:
            raise ProviderError("chat", "prompt must be non-empty")
        with self._lock:
            self.calls.append(req)
        lines = self._script.chat.get(req.tag)
        if lines is None and req.tag.startswith("agent"):
            lines = self._script.chat.get("agent")
        if lines:
            return lines[self._next_index(req.tag) % len(lines)]
        n = self._next_index(req.tag)
        if req.tag == "moderator":
            return "1" if n % 2 == 0 else "2"
        return f"[{req.tag} mock reply #{n}]"


class MockSttBackend:
    """Maps blob ids to scripted transcripts; unscripted ids fail."""

    def __init__(self, script: Optional[MockScript] = None):
        self._transcripts = (script or MockScript()).transcripts

    def transcribe(self, audio: AudioBlob, language: LanguageTag) -> SttResult:
        if not audio.ref and not audio.data:
            raise ProviderError("stt", "audio blob must be non-empty")
        if audio.ref not in self._transcripts:
            raise ProviderError("stt", f"no scripted transcript for blob '{audio.ref}'")
        return SttResult(text=self._transcripts[audio.ref], source_audio_ref=audio.ref)


class MockTtsBackend:
    """Emits a silent placeholder blob with duration 300 ms per word."""

    def __init__(self, blob_sink: Optional[Callable[[bytes, str], str]] = None):
        self._blob_sink = blob_sink

    def synthesize(self, text: str, voice_id: str) -> TtsResult:
        if not text.strip():
            raise ProviderError("tts", "text must be non-empty")
        duration = mock_speech_duration_ms(text)
        if self._blob_sink is not None:
            ref = self._blob_sink(b"\x00" * 64, "mp3")
        else:
            digest = hashlib.sha1(f"{voice_id}:{text}".encode()).hexdigest()[:12]
            ref = f"tts-{digest}.mp3"
        return TtsResult(audio_ref=ref, duration_ms=duration, voice_id=voice_id)


# --- live backends (OpenAI-compatible wire format) ------------------------------


def _require_env(settings_value: Optional[str], env_name: str, what: str) -> str:
    value = settings_value or os.environ.get(env_name, "")
    if not value:
        raise ProviderError("chat", f"{what} not configured (set {env_name})")
    return value


@dataclass
class LiveSettings:
    base_url: str
    api_key: str
    chat_model: str = "gpt-4o"
    stt_model: str = "whisper-1"
    tts_model: str = "tts-1"
    timeout_s: float = 30.0

    @classmethod
    def from_env(
        cls, base_url: Optional[str] = None, api_key: Optional[str] = None
    ) -> "LiveSettings":
        return cls(
            base_url=_require_env(base_url, ENV_BASE_URL, "provider base URL").rstrip("/"),
            api_key=_require_env(api_key, ENV_API_KEY, "provider API key"),
        )


class _LiveBase:
    def __init__(self, settings: LiveSettings, client: Optional[httpx.Client] = None):
        self._settings = settings
        self._client = client or httpx.Client(timeout=settings.timeout_s)

    def _headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self._settings.api_key}"}

    def _post(self, stage: str, path: str, **kwargs) -> httpx.Response:
        url = f"{self._settings.base_url}{path}"
        try:
            resp = self._client.post(url, headers=self._headers(), **kwargs)
        except httpx.TimeoutException as exc:
            raise ProviderError(stage, f"timeout calling {path}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise ProviderError(stage, f"transport error calling {path}: {exc}") from exc
        if resp.status_code >= 400:
            raise ProviderError(stage, f"HTTP {resp.status_code} from {path}")
        return resp


class LiveChatBackend(_LiveBase):
    """POSTs to {base_url}/chat/completions with {model, messages[{role, content}]}."""

    def complete(self, req: ChatRequest) -> str:
        if not req.prompt:
            raise ProviderError("chat", "prompt must be non-empty")
        body = {
            "model": self._settings.chat_model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        resp = self._post("chat", "/chat/completions", json=body)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise ProviderError("chat", f"malformed chat response: {exc}") from exc


class LiveSttBackend(_LiveBase):
    """POSTs multipart {file, model} to {base_url}/audio/transcriptions."""

    def transcribe(self, audio: AudioBlob, language: LanguageTag) -> SttResult:
        if not audio.data:
            raise ProviderError("stt", "audio blob must be non-empty")
        if audio.container != "mp3":
            raise ProviderError("stt", f"unsupported container '{audio.container}'")
        files = {"file": (audio.ref or "speech.mp3", audio.data, "audio/mpeg")}
        data = {"model": self._settings.stt_model, "language": audio_language(language)}
        resp = self._post("stt", "/audio/transcriptions", files=files, data=data)
        try:
            return SttResult(text=resp.json()["text"], source_audio_ref=audio.ref)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ProviderError("stt", f"malformed transcription response: {exc}") from exc


def audio_language(language: LanguageTag) -> str:
    return language.code


class LiveTtsBackend(_LiveBase):
    """POSTs {model, input, voice} to {base_url}/audio/speech; stores the bytes
    through the blob sink. The API returns no duration, so playback length is
    estimated with the same per-word model as the mock."""

    def __init__(
        self,
        settings: LiveSettings,
        blob_sink: Callable[[bytes, str], str],
        client: Optional[httpx.Client] = None,
    ):
        super().__init__(settings, client)
        self._blob_sink = blob_sink

    def synthesize(self, text: str, voice_id: str) -> TtsResult:
        if not text.strip():
            raise ProviderError("tts", "text must be non-empty")
        body = {"model": self._settings.tts_model, "input": text, "voice": voice_id}
        resp = self._post("tts", "/audio/speech", json=body)
        ref = self._blob_sink(resp.content, "mp3")
        return TtsResult(
            audio_ref=ref,
            duration_ms=max(1, mock_speech_duration_ms(text)),
            voice_id=voice_id,
        )


def build_mock_providers(
    script: Optional[MockScript] = None,
    blob_sink: Optional[Callable[[bytes, str], str]] = None,
) -> ProviderSet:
    return ProviderSet(
        chat=MockChatBackend(script),
        stt=MockSttBackend(script),
        tts=MockTtsBackend(blob_sink),
    )


def build_live_providers(
    blob_sink: Callable[[bytes, str], str],
    base_url: Optional[str] = None,
    api_key: Optional[str] = None,
) -> ProviderSet:
    settings = LiveSettings.from_env(base_url=base_url, api_key=api_key)
    return ProviderSet(
        chat=LiveChatBackend(settings),
        stt=LiveSttBackend(settings),
        tts=LiveTtsBackend(settings, blob_sink),
    )
