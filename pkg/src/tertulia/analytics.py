"""Offline engagement analytics over JSON Lines transcripts.

Counts per participant: turns taken (behavioral), elaborative clauses and
negotiations of meaning (cognitive), and backchannels (social). Turns come
from the speaker field; the other three are summed from human-annotated
tags on user utterances — tagging is deliberately not automated here.

The batch report writes an aligned text table, machine-readable JSON, and
optionally a per-participant engagement bar chart rendered to an image file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

from .model import AnnotationTag, TranscriptParseError, decode_history


@dataclass(frozen=True)
class EngagementReport:
    participant_id: str
    turns_taken: int
    elaborative_clauses: int
    negotiations_of_meaning: int
    backchannels: int


@dataclass(frozen=True)
class BatchResult:
    reports: list[EngagementReport]
    errors: list[str]  # "path: message" per unreadable transcript

    @property
    def ok(self) -> bool:
        return not self.errors


def analyze(path: str | Path, participant_id: Optional[str] = None) -> EngagementReport:
    """Tally one transcript. participant_id defaults to the filename stem;
    an empty file yields an all-zero report."""
    path = Path(path)
    pid = participant_id if participant_id is not None else path.stem
    history = decode_history(path.read_text(encoding="utf-8"))

    turns = 0
    counts = {tag: 0 for tag in AnnotationTag}
    for u in history:
        if not u.speaker.is_user:
            continue
        turns += 1
        for tag in u.annotations:
            counts[tag] += 1

    return EngagementReport(
        participant_id=pid,
        turns_taken=turns,
        elaborative_clauses=counts[AnnotationTag.ELABORATIVE_CLAUSE],
        negotiations_of_meaning=counts[AnnotationTag.NEGOTIATION_OF_MEANING],
        backchannels=counts[AnnotationTag.BACKCHANNEL],
    )


def report_batch(directory: str | Path) -> BatchResult:
    """Analyze every *.jsonl transcript in a directory. Rows come back in
    lexicographic participant order; unreadable files become errors and the
    rest are still processed."""
    directory = Path(directory)
    reports: list[EngagementReport] = []
    errors: list[str] = []
    for path in sorted(directory.glob("*.jsonl")):
        try:
            reports.append(analyze(path))
        except (TranscriptParseError, OSError, ValueError) as exc:
            errors.append(f"{path}: {exc}")
    reports.sort(key=lambda r: r.participant_id)
    return BatchResult(reports=reports, errors=errors)


_COLUMNS = (
    ("participant", "participant_id"),
    ("turns", "turns_taken"),
    ("elaborative", "elaborative_clauses"),
    ("negotiation", "negotiations_of_meaning"),
    ("backchannels", "backchannels"),
)


def format_table(reports: list[EngagementReport]) -> str:
    """Aligned plain-text table, deterministic for identical inputs."""
    rows = [[header for header, _ in _COLUMNS]]
    for r in reports:
        rows.append([str(getattr(r, attr)) for _, attr in _COLUMNS])
    widths = [max(len(row[i]) for row in rows) for i in range(len(_COLUMNS))]
    lines = []
    for n, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def reports_to_json(reports: list[EngagementReport]) -> str:
    return json.dumps([asdict(r) for r in reports], indent=2, ensure_ascii=False) + "\n"


def render_engagement_figure(reports: list[EngagementReport], out_path: str | Path) -> Path:
    """Stacked per-participant bars for the three engagement tallies."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_path = Path(out_path)
    labels = [r.participant_id for r in reports]
    turns = [r.turns_taken for r in reports]
    elaborative = [r.elaborative_clauses for r in reports]
    negotiation = [r.negotiations_of_meaning for r in reports]

    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(reports) + 2.0), 4.0))
    x = range(len(reports))
    ax.bar(x, turns, label="turns taken", color="#4878cf")
    ax.bar(x, elaborative, bottom=turns, label="elaborative clauses", color="#6acc65")
    bottom2 = [t + e for t, e in zip(turns, elaborative)]
    ax.bar(x, negotiation, bottom=bottom2, label="negotiation of meaning", color="#d65f5f")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("count")
    ax.set_title("Engagement per participant")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
