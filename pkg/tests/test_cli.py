"""CLI surface: analytics table/json/figure outputs and event-log replay."""

from __future__ import annotations

import json

import pytest

from tertulia.cli import build_parser, main
from tertulia.clock import SimulatedClock
from tertulia.engine import (
    CloseRequested,
    PttPressed,
    PttReleased,
    SpeechCapture,
    event_to_dict,
)
from tertulia.model import (
    AnnotationTag,
    ConversationHistory,
    SpeakerId,
    Utterance,
    encode_history,
)
from tertulia.providers import MockChatBackend, MockScript, MockSttBackend, MockTtsBackend, ProviderSet
from tertulia.runner import SessionRunner

from conftest import make_config


def write_fixture(tmp_path, name, user_turns=2):
    h = ConversationHistory()
    t = 0
    for seq in range(user_turns * 2):
        speaker = SpeakerId.user() if seq % 2 == 0 else SpeakerId.agent(1)
        tags = (AnnotationTag.ELABORATIVE_CLAUSE,) if seq == 0 else ()
        h = h.append(Utterance(seq, speaker, f"texto {seq}", None, t, t + 100, tags))
        t += 500
    path = tmp_path / name
    path.write_text(encode_history(h), encoding="utf-8")
    return path


class TestAnalyticsCommand:
    def test_single_file_table_to_stdout(self, tmp_path, capsys):
        path = write_fixture(tmp_path, "p1.jsonl")
        assert main(["analytics", str(path)]) == 0
        out = capsys.readouterr().out
        assert "participant" in out and "p1" in out

    def test_directory_with_json_and_figure(self, tmp_path, capsys):
        write_fixture(tmp_path, "p1.jsonl")
        write_fixture(tmp_path, "p2.jsonl", user_turns=3)
        json_out = tmp_path / "report.json"
        fig_out = tmp_path / "report.png"
        code = main(
            [
                "analytics",
                str(tmp_path),
                "--json",
                str(json_out),
                "--figure",
                str(fig_out),
            ]
        )
        assert code == 0
        payload = json.loads(json_out.read_text(encoding="utf-8"))
        assert [r["participant_id"] for r in payload] == ["p1", "p2"]
        assert payload[1]["turns_taken"] == 3
        assert fig_out.exists() and fig_out.stat().st_size > 1000

    def test_partial_failure_exit_code(self, tmp_path, capsys):
        write_fixture(tmp_path, "good.jsonl")
        (tmp_path / "bad.jsonl").write_text("{nope\n", encoding="utf-8")
        code = main(["analytics", str(tmp_path)])
        captured = capsys.readouterr()
        assert code == 1
        assert "bad.jsonl" in captured.err
        assert "good" in captured.out  # surviving row still reported

    def test_unreadable_single_file_exits_nonzero(self, tmp_path, capsys):
        bad = tmp_path / "broken.jsonl"
        bad.write_text("not json\n", encoding="utf-8")
        assert main(["analytics", str(bad)]) == 1


class TestReplayCommand:
    def test_replay_rebuilds_transcript(self, tmp_path, capsys):
        cfg = make_config()
        script = MockScript(chat={"agent": ["dos palabras"], "moderator": ["2"]})
        providers = ProviderSet(
            chat=MockChatBackend(script), stt=MockSttBackend(script), tts=MockTtsBackend()
        )
        clock = SimulatedClock()
        runner = SessionRunner(cfg, providers, clock)
        runner.start()
        clock.schedule(3000, lambda: runner.post(PttPressed(clock.now_ms())))
        clock.schedule(
            3600,
            lambda: runner.post(
                PttReleased(
                    SpeechCapture(text="Hola a los dos", started_at_ms=3000, ended_at_ms=3600),
                    clock.now_ms(),
                )
            ),
        )
        clock.schedule(12000, lambda: runner.post(CloseRequested(clock.now_ms())))
        clock.run_until(done=lambda: runner.is_closed)
        assert len(runner.history) >= 2

        log_path = tmp_path / "session.log.jsonl"
        with log_path.open("w", encoding="utf-8") as fh:
            for ev in runner.event_log:
                fh.write(json.dumps(event_to_dict(ev)) + "\n")

        assert main(["replay", str(log_path)]) == 0
        out = capsys.readouterr().out
        assert out == encode_history(runner.history)


class TestParser:
    def test_serve_defaults(self):
        args = build_parser().parse_args(["serve"])
        assert args.providers == "mock"
        assert args.port == 8000
        assert args.transcript_dir == "transcripts"

    def test_providers_choices_enforced(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["serve", "--providers", "hybrid"])
