"""Domain type invariants and the transcript serialization contract."""

from __future__ import annotations

import json
import random

import pytest

from tertulia.model import (
    AgentPersona,
    AnnotationTag,
    ConversationHistory,
    HistoryError,
    LanguageTag,
    SceneContext,
    SessionState,
    SpeakerId,
    TimingParams,
    TranscriptParseError,
    Utterance,
    decode_history,
    decode_utterance,
    encode_history,
    encode_utterance,
    validate_config,
)

from conftest import MARTA, make_config


def u(seq, speaker, text="hola", start=None, end=None, **kw):
    start = seq * 1000 if start is None else start
    end = start + 500 if end is None else end
    return Utterance(seq, speaker, text, kw.get("audio_ref"), start, end,
                     kw.get("annotations", ()))


class TestValidateConfig:
    def test_valid_config_has_no_violations(self):
        assert validate_config(make_config()) == []

    def test_duplicate_agent_ids(self):
        clone = AgentPersona(1, "Omar", "calm", "verse")
        cfg = make_config(personas=(MARTA, clone))
        assert validate_config(cfg) == ["personas must have ids {1,2}"]

    def test_zero_gap(self):
        cfg = make_config(timing=TimingParams(gap_ms=0))
        assert validate_config(cfg) == ["gap_ms ≥ 100"]

    def test_unknown_language(self):
        cfg = make_config(language=LanguageTag("xx"))
        assert validate_config(cfg) == ["language 'xx' not in allow-list"]

    def test_duplicate_voice(self):
        cfg = make_config(personas=(MARTA, AgentPersona(2, "Omar", "calm", "alloy")))
        assert validate_config(cfg) == ["personas must have distinct voice_id"]

    def test_detection_delay_too_long(self):
        cfg = make_config(scene=SceneContext("library", (), 31000))
        assert validate_config(cfg) == ["detection_delay_ms ≤ 30000"]

    def test_short_user_cap(self):
        cfg = make_config(timing=TimingParams(max_user_speech_ms=500))
        assert validate_config(cfg) == ["max_user_speech_ms ≥ 1000"]

    def test_collects_multiple_violations(self):
        cfg = make_config(
            timing=TimingParams(gap_ms=0, max_user_speech_ms=10),
            user_display_name="",
        )
        got = validate_config(cfg)
        assert "gap_ms ≥ 100" in got
        assert "max_user_speech_ms ≥ 1000" in got
        assert "user_display_name must be non-empty" in got


class TestHistory:
    def test_append_to_empty(self):
        h = ConversationHistory().append(u(0, SpeakerId.user()))
        assert len(h) == 1

    def test_append_preserves_existing_entries(self):
        h = ConversationHistory()
        h = h.append(u(0, SpeakerId.user()))
        h = h.append(u(1, SpeakerId.agent(1)))
        first, second = h.entries
        h3 = h.append(u(2, SpeakerId.agent(2)))
        assert len(h3) == 3
        assert h3.entries[0] is first and h3.entries[1] is second
        assert len(h) == 2  # original untouched

    def test_non_contiguous_seq_rejected(self):
        h = ConversationHistory().append(u(0, SpeakerId.user()))
        h = h.append(u(1, SpeakerId.agent(1)))
        with pytest.raises(HistoryError, match="non-contiguous seq"):
            h.append(u(5, SpeakerId.agent(2)))

    def test_retrograde_timestamp_rejected(self):
        h = ConversationHistory().append(u(0, SpeakerId.user(), start=5000))
        with pytest.raises(HistoryError, match="retrograde"):
            h.append(u(1, SpeakerId.agent(1), start=4000))

    def test_empty_text_rejected(self):
        with pytest.raises(HistoryError, match="non-empty"):
            ConversationHistory().append(u(0, SpeakerId.user(), text=""))

    def test_last_agent_id(self):
        h = ConversationHistory()
        assert h.last_agent_id() is None
        h = h.append(u(0, SpeakerId.user()))
        assert h.last_agent_id() is None
        h = h.append(u(1, SpeakerId.agent(2)))
        h = h.append(u(2, SpeakerId.user(), start=2500))
        assert h.last_agent_id() == 2


class TestSpeakerId:
    def test_wire_round_trip(self):
        for s in (SpeakerId.user(), SpeakerId.agent(1), SpeakerId.agent(2)):
            assert SpeakerId.from_wire(s.wire()) == s

    def test_bad_wire_values(self):
        for bad in ("agent:3", "agent", "", "USER"):
            with pytest.raises(ValueError):
                SpeakerId.from_wire(bad)

    def test_agent_requires_valid_id(self):
        with pytest.raises(ValueError):
            SpeakerId.agent(3)


class TestSessionState:
    def test_agent_phases_require_agent_id(self):
        with pytest.raises(ValueError):
            SessionState(SessionState.agent_speaking(1).phase)

    def test_plain_phases_reject_agent_id(self):
        with pytest.raises(ValueError):
            SessionState(SessionState.gap().phase, agent_id=1)


def random_history(rng: random.Random) -> ConversationHistory:
    texts = ["hola", "¿qué tal?", 'cita: "así"', "línea\ncon salto", "café ☕", "y… eso"]
    h = ConversationHistory()
    t = 0
    for seq in range(rng.randrange(0, 12)):
        speaker = rng.choice([SpeakerId.user(), SpeakerId.agent(1), SpeakerId.agent(2)])
        t += rng.randrange(0, 4000)
        tags = tuple(
            rng.sample(list(AnnotationTag), k=rng.randrange(0, 3))
        ) if speaker.is_user else ()
        h = h.append(
            Utterance(
                seq=seq,
                speaker=speaker,
                text=rng.choice(texts),
                audio_ref=rng.choice([None, f"blob-{seq}.mp3"]),
                started_at_ms=t,
                ended_at_ms=t + rng.randrange(0, 3000),
                annotations=tags,
            )
        )
    return h


class TestSerialization:
    def test_documented_field_names_and_order(self):
        line = encode_utterance(u(0, SpeakerId.agent(1), "Hola Sofia"))
        keys = list(json.loads(line).keys())
        assert keys == [
            "seq", "speaker", "text", "audio_ref",
            "started_at_ms", "ended_at_ms", "annotations",
        ]

    def test_speaker_wire_values(self):
        assert '"speaker": "agent:1"' in encode_utterance(u(0, SpeakerId.agent(1)))
        assert '"speaker": "user"' in encode_utterance(u(0, SpeakerId.user()))

    def test_round_trip_many_random_histories(self):
        rng = random.Random(20240817)
        for _ in range(200):
            h = random_history(rng)
            text = encode_history(h)
            assert decode_history(text) == h
            assert encode_history(decode_history(text)) == text

    def test_decode_reports_line_numbers(self):
        good = encode_utterance(u(0, SpeakerId.user()))
        with pytest.raises(TranscriptParseError, match="line 2"):
            decode_history(good + "\n{not json}\n")

    def test_decode_rejects_unknown_annotation(self):
        line = encode_utterance(u(0, SpeakerId.user())).replace(
            '"annotations": []', '"annotations": ["sarcasm"]'
        )
        with pytest.raises(TranscriptParseError):
            decode_utterance(line, 1)

    def test_decode_tolerates_trailing_whitespace_and_blank_lines(self):
        h = ConversationHistory().append(u(0, SpeakerId.user()))
        text = encode_history(h).rstrip() + "   \n\n"
        assert decode_history(text) == h

    def test_unicode_survives(self):
        original = u(0, SpeakerId.user(), text="¡señor! 你好 múa\nsegunda línea")
        assert decode_utterance(encode_utterance(original)) == original
