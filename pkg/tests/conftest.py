from __future__ import annotations

import pytest

from tertulia.model import (
    AgentPersona,
    LanguageTag,
    ProficiencyLevel,
    SceneContext,
    SessionConfig,
    TimingParams,
)

MARTA = AgentPersona(1, "Marta", "upbeat and curious", "alloy")
OMAR = AgentPersona(2, "Omar", "calm and bookish", "verse")

LIBRARY = SceneContext(
    scene_label="university library",
    objects=("bookshelf", "novel", "desk"),
    detection_delay_ms=2000,
)


def make_config(**overrides) -> SessionConfig:
    base = dict(
        language=LanguageTag("es"),
        level=ProficiencyLevel.INTERMEDIATE,
        personas=(MARTA, OMAR),
        scene=LIBRARY,
        timing=TimingParams(gap_ms=3000, max_user_speech_ms=30000),
        user_display_name="Sofia",
    )
    base.update(overrides)
    return SessionConfig(**base)


@pytest.fixture
def config() -> SessionConfig:
    return make_config()
