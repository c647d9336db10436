"""tertulia: a group-conversation practice engine.

Two agent personas hold a spoken conversation with one language learner:
fixed alternation between agents with a silence gap the learner can claim,
push-to-talk preemption, a moderator model that picks the responder after
each user turn, and pre-generated handoffs. Providers (chat/STT/TTS) are
pluggable, with deterministic mocks for fully offline sessions.
"""

from .clock import SimulatedClock, WallClock
from .engine import TurnEngine, replay_events, schedule_pregen
from .model import (
    AgentPersona,
    AnnotationTag,
    ConversationHistory,
    LanguageTag,
    Phase,
    ProficiencyLevel,
    SceneContext,
    SessionConfig,
    SessionState,
    SpeakerId,
    TimingParams,
    Utterance,
    decode_history,
    encode_history,
    validate_config,
)
from .providers import ProviderSet, build_live_providers, build_mock_providers
from .runner import SessionRunner, run_session

__version__ = "0.1.0"

__all__ = [
    "AgentPersona",
    "AnnotationTag",
    "ConversationHistory",
    "LanguageTag",
    "Phase",
    "ProficiencyLevel",
    "ProviderSet",
    "SceneContext",
    "SessionConfig",
    "SessionRunner",
    "SessionState",
    "SimulatedClock",
    "SpeakerId",
    "TimingParams",
    "TurnEngine",
    "Utterance",
    "WallClock",
    "build_live_providers",
    "build_mock_providers",
    "decode_history",
    "encode_history",
    "replay_events",
    "run_session",
    "schedule_pregen",
    "validate_config",
]
