"""Command line entry points.

    tertulia serve     — run the session service
    tertulia analytics — engagement tallies over transcripts (table/JSON/figure)
    tertulia replay    — rebuild a transcript from a session event log
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analytics as analytics_mod
from .engine import event_from_dict, replay_events
from .model import encode_history
from .service import ServiceSettings, create_app, parse_session_request


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    settings = ServiceSettings(
        scene_path=Path(args.scene) if args.scene else None,
        templates_dir=Path(args.templates) if args.templates else None,
        providers_mode=args.providers,
        mock_script_path=Path(args.mock_script) if args.mock_script else None,
        transcript_dir=Path(args.transcript_dir),
        blob_dir=Path(args.blob_dir),
    )
    app = create_app(settings)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _cmd_analytics(args: argparse.Namespace) -> int:
    target = Path(args.path)
    if target.is_dir():
        result = analytics_mod.report_batch(target)
        reports = result.reports
        for line in result.errors:
            print(f"error: {line}", file=sys.stderr)
    else:
        try:
            reports = [analytics_mod.analyze(target)]
            result = analytics_mod.BatchResult(reports=reports, errors=[])
        except Exception as exc:
            print(f"error: {target}: {exc}", file=sys.stderr)
            return 1

    sys.stdout.write(analytics_mod.format_table(reports))
    if args.json:
        Path(args.json).write_text(
            analytics_mod.reports_to_json(reports), encoding="utf-8"
        )
        print(f"wrote {args.json}")
    if args.figure:
        if reports:
            analytics_mod.render_engagement_figure(reports, args.figure)
            print(f"wrote {args.figure}")
        else:
            print("no reports; skipping figure", file=sys.stderr)
    return 0 if result.ok else 1


def _cmd_replay(args: argparse.Namespace) -> int:
    from .model import (
        AgentPersona,
        LanguageTag,
        ProficiencyLevel,
        SceneContext,
        SessionConfig,
    )
    from .service import DEFAULT_PERSONAS

    events = []
    with open(args.log, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                events.append(event_from_dict(json.loads(line)))

    if args.config:
        body = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cfg, violations = parse_session_request(
            body, ServiceSettings(), SceneContext("replay")
        )
        if violations:
            print("invalid config: " + "; ".join(violations), file=sys.stderr)
            return 1
    else:
        cfg = SessionConfig(
            language=LanguageTag("es"),
            level=ProficiencyLevel.INTERMEDIATE,
            personas=DEFAULT_PERSONAS,
            scene=SceneContext("replay"),
        )

    history, _ = replay_events(cfg, events)
    sys.stdout.write(encode_history(history))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tertulia")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the session service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--scene", help="scene JSON file (default: packaged library)")
    serve.add_argument("--templates", help="prompt template directory")
    serve.add_argument("--providers", choices=["live", "mock"], default="mock")
    serve.add_argument("--mock-script", help="scripted mock responses (JSON)")
    serve.add_argument("--transcript-dir", default="transcripts")
    serve.add_argument("--blob-dir", default="blobs")
    serve.set_defaults(func=_cmd_serve)

    analytics = sub.add_parser(
        "analytics", help="engagement report over a transcript file or directory"
    )
    analytics.add_argument("path", help="transcript .jsonl file or directory")
    analytics.add_argument("--json", help="write machine-readable report here")
    analytics.add_argument("--figure", help="render the engagement chart here (png/svg)")
    analytics.set_defaults(func=_cmd_analytics)

    replay = sub.add_parser(
        "replay", help="rebuild a transcript from an event log (JSON Lines)"
    )
    replay.add_argument("log", help="event log file")
    replay.add_argument("--config", help="session create-request JSON for the replay")
    replay.set_defaults(func=_cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
