"""Shared domain types: session configuration, utterances, conversation
histories, session phases, and the canonical JSON Lines transcript format.

Everything here is immutable plain data with no I/O. The transcript format
(one utterance per line, fixed key order) is the contract between the
session service and the analytics CLI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

# Languages the engine will accept, mapped to the name used in prompts.
ALLOWED_LANGUAGES: dict[str, str] = {
    "es": "Spanish",
    "en": "English",
    "fr": "French",
    "de": "German",
    "it": "Italian",
    "pt": "Portuguese",
    "ja": "Japanese",
    "ko": "Korean",
    "zh": "Mandarin Chinese",
    "ar": "Arabic",
}


class ProficiencyLevel(str, Enum):
    BEGINNER = "beginner"
    INTERMEDIATE = "intermediate"
    ADVANCED = "advanced"


class AnnotationTag(str, Enum):
    """Engagement coding tags attached by a human annotator."""

    ELABORATIVE_CLAUSE = "elaborative_clause"
    NEGOTIATION_OF_MEANING = "negotiation_of_meaning"
    BACKCHANNEL = "backchannel"


@dataclass(frozen=True)
class LanguageTag:
    code: str

    def display_name(self) -> str:
        return ALLOWED_LANGUAGES.get(self.code, self.code)


@dataclass(frozen=True)
class AgentPersona:
    agent_id: int
    display_name: str
    personality: str
    voice_id: str


@dataclass(frozen=True)
class SceneContext:
    scene_label: str
    objects: tuple[str, ...] = ()
    detection_delay_ms: int = 2000


@dataclass(frozen=True)
class TimingParams:
    gap_ms: int = 3000
    max_user_speech_ms: int = 30000


@dataclass(frozen=True)
class SessionConfig:
    language: LanguageTag
    level: ProficiencyLevel
    personas: tuple[AgentPersona, AgentPersona]
    scene: SceneContext
    timing: TimingParams = TimingParams()
    user_display_name: str = "Student"
    # Which agent opens the conversation when nobody has spoken yet.
    opening_agent_id: int = 1

    def persona(self, agent_id: int) -> AgentPersona:
        for p in self.personas:
            if p.agent_id == agent_id:
                return p
        raise KeyError(f"no persona with agent_id {agent_id}")


def other_agent(agent_id: int) -> int:
    return 2 if agent_id == 1 else 1


def validate_config(cfg: SessionConfig) -> list[str]:
    """Return every invariant violation in cfg; an empty list means valid."""
    violations: list[str] = []

    code = cfg.language.code
    if not code or code != code.lower():
        violations.append("language code must be non-empty and lowercase")
    elif code not in ALLOWED_LANGUAGES:
        violations.append(f"language '{code}' not in allow-list")

    if not isinstance(cfg.level, ProficiencyLevel):
        violations.append("level must be one of beginner|intermediate|advanced")

    ids = sorted(p.agent_id for p in cfg.personas)
    if len(cfg.personas) != 2 or ids != [1, 2]:
        violations.append("personas must have ids {1,2}")
    for p in cfg.personas:
        if not p.display_name:
            violations.append(f"persona {p.agent_id} display_name must be non-empty")
    if len(cfg.personas) == 2 and cfg.personas[0].voice_id == cfg.personas[1].voice_id:
        violations.append("personas must have distinct voice_id")

    if not cfg.scene.scene_label:
        violations.append("scene_label must be non-empty")
    if cfg.scene.detection_delay_ms < 0:
        violations.append("detection_delay_ms must be non-negative")
    elif cfg.scene.detection_delay_ms > 30000:
        violations.append("detection_delay_ms ≤ 30000")

    if cfg.timing.gap_ms < 100:
        violations.append("gap_ms ≥ 100")
    if cfg.timing.max_user_speech_ms < 1000:
        violations.append("max_user_speech_ms ≥ 1000")

    if not cfg.user_display_name:
        violations.append("user_display_name must be non-empty")
    if cfg.opening_agent_id not in (1, 2):
        violations.append("opening_agent_id must be 1 or 2")

    return violations


@dataclass(frozen=True)
class SpeakerId:
    kind: str  # "user" | "agent"
    agent_id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind == "agent" and self.agent_id not in (1, 2):
            raise ValueError("agent speaker requires agent_id in {1,2}")
        if self.kind == "user" and self.agent_id is not None:
            raise ValueError("user speaker carries no agent_id")
        if self.kind not in ("user", "agent"):
            raise ValueError(f"unknown speaker kind '{self.kind}'")

    @classmethod
    def user(cls) -> "SpeakerId":
        return cls("user")

    @classmethod
    def agent(cls, agent_id: int) -> "SpeakerId":
        return cls("agent", agent_id)

    @property
    def is_user(self) -> bool:
        return self.kind == "user"

    def wire(self) -> str:
        return "user" if self.kind == "user" else f"agent:{self.agent_id}"

    @classmethod
    def from_wire(cls, value: str) -> "SpeakerId":
        if value == "user":
            return cls.user()
        if value in ("agent:1", "agent:2"):
            return cls.agent(int(value.split(":", 1)[1]))
        raise ValueError(f"unknown speaker '{value}'")


@dataclass(frozen=True)
class Utterance:
    seq: int
    speaker: SpeakerId
    text: str
    audio_ref: Optional[str]
    started_at_ms: int
    ended_at_ms: int
    annotations: tuple[AnnotationTag, ...] = ()


class HistoryError(ValueError):
    """Raised when an append would violate a history invariant."""


@dataclass(frozen=True)
class ConversationHistory:
    entries: tuple[Utterance, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.entries)

    def append(self, u: Utterance) -> "ConversationHistory":
        """Return a new history with u committed; prior entries are shared."""
        if u.seq != len(self.entries):
            raise HistoryError(
                f"non-contiguous seq: got {u.seq}, expected {len(self.entries)}"
            )
        if self.entries and u.started_at_ms < self.entries[-1].started_at_ms:
            raise HistoryError(
                f"retrograde timestamp: {u.started_at_ms} before "
                f"{self.entries[-1].started_at_ms}"
            )
        if u.ended_at_ms < u.started_at_ms:
            raise HistoryError("ended_at_ms must be >= started_at_ms")
        if not u.text:
            raise HistoryError("committed utterances must have non-empty text")
        return ConversationHistory(self.entries + (u,))

    def last_agent_id(self) -> Optional[int]:
        """The most recent agent speaker, or None if no agent has spoken."""
        for u in reversed(self.entries):
            if u.speaker.kind == "agent":
                return u.speaker.agent_id
        return None


class Phase(str, Enum):
    INITIALIZING = "initializing"
    AGENT_SPEAKING = "agent_speaking"
    GAP = "gap"
    MODERATOR_SELECTING = "moderator_selecting"
    GENERATING_RESPONSE = "generating_response"
    USER_SPEAKING = "user_speaking"
    TRANSCRIBING = "transcribing"
    CLOSED = "closed"


_PHASES_WITH_AGENT = (Phase.AGENT_SPEAKING, Phase.GENERATING_RESPONSE)


@dataclass(frozen=True)
class SessionState:
    phase: Phase
    agent_id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.phase in _PHASES_WITH_AGENT:
            if self.agent_id not in (1, 2):
                raise ValueError(f"{self.phase.value} requires an agent_id")
        elif self.agent_id is not None:
            raise ValueError(f"{self.phase.value} carries no agent_id")

    @classmethod
    def initializing(cls) -> "SessionState":
        return cls(Phase.INITIALIZING)

    @classmethod
    def gap(cls) -> "SessionState":
        return cls(Phase.GAP)

    @classmethod
    def agent_speaking(cls, agent_id: int) -> "SessionState":
        return cls(Phase.AGENT_SPEAKING, agent_id)

    @classmethod
    def generating(cls, agent_id: int) -> "SessionState":
        return cls(Phase.GENERATING_RESPONSE, agent_id)

    @classmethod
    def moderator_selecting(cls) -> "SessionState":
        return cls(Phase.MODERATOR_SELECTING)

    @classmethod
    def user_speaking(cls) -> "SessionState":
        return cls(Phase.USER_SPEAKING)

    @classmethod
    def transcribing(cls) -> "SessionState":
        return cls(Phase.TRANSCRIBING)

    @classmethod
    def closed(cls) -> "SessionState":
        return cls(Phase.CLOSED)


# --- transcript serialization -------------------------------------------------
#
# One utterance per line, keys in this exact order:
#   seq, speaker, text, audio_ref, started_at_ms, ended_at_ms, annotations


class TranscriptParseError(ValueError):
    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


def encode_utterance(u: Utterance) -> str:
    record = {
        "seq": u.seq,
        "speaker": u.speaker.wire(),
        "text": u.text,
        "audio_ref": u.audio_ref,
        "started_at_ms": u.started_at_ms,
        "ended_at_ms": u.ended_at_ms,
        "annotations": [t.value for t in u.annotations],
    }
    return json.dumps(record, ensure_ascii=False)


def decode_utterance(line: str, line_no: Optional[int] = None) -> Utterance:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TranscriptParseError(f"invalid JSON ({exc.msg})", line_no) from exc
    if not isinstance(record, dict):
        raise TranscriptParseError("utterance line must be a JSON object", line_no)
    try:
        speaker = SpeakerId.from_wire(record["speaker"])
        tags = tuple(AnnotationTag(t) for t in record.get("annotations", []))
        return Utterance(
            seq=int(record["seq"]),
            speaker=speaker,
            text=record["text"],
            audio_ref=record.get("audio_ref"),
            started_at_ms=int(record["started_at_ms"]),
            ended_at_ms=int(record["ended_at_ms"]),
            annotations=tags,
        )
    except KeyError as exc:
        raise TranscriptParseError(f"missing field {exc}", line_no) from exc
    except (TypeError, ValueError) as exc:
        raise TranscriptParseError(str(exc), line_no) from exc


def encode_history(h: ConversationHistory) -> str:
    return "".join(encode_utterance(u) + "\n" for u in h)


def decode_history(text: str) -> ConversationHistory:
    """Parse a JSON Lines transcript, re-checking the history invariants."""
    history = ConversationHistory()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        u = decode_utterance(line.rstrip(), line_no)
        try:
            history = history.append(u)
        except HistoryError as exc:
            raise TranscriptParseError(str(exc), line_no) from exc
    return history
