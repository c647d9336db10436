"""Prompt assembly for the two agent personas and the moderator.

Templates are plain UTF-8 text files with {curly} placeholders so operators
can iterate on wording without touching code. The agent prompt is a single
self-contained instruction block (no example dialogues); the moderator
prompt asks for a bare "1" or "2" and is parsed leniently with a
round-robin fallback so a sloppy model can never stall a session.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .model import (
    AgentPersona,
    ConversationHistory,
    SessionConfig,
    other_agent,
)

PLACEHOLDERS = frozenset(
    {
        "language",
        "level",
        "scene_label",
        "objects",
        "persona_name",
        "persona_personality",
        "user_name",
        "history",
    }
)

# Placeholders the agent template must use at least once.
REQUIRED_IN_AGENT_TEMPLATE = frozenset({"language", "level", "scene_label", "history"})


class UnboundPlaceholderError(ValueError):
    """A template references a placeholder outside the allowed set."""


class PreconditionFailedError(ValueError):
    """A prompt builder was called outside its contract."""


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    def placeholder_names(self) -> set[str]:
        names = set()
        for _, name, _, _ in string.Formatter().parse(self.body):
            if name:
                names.add(name)
        return names

    def validate(self, required: frozenset[str] = frozenset()) -> None:
        names = self.placeholder_names()
        unknown = names - PLACEHOLDERS
        if unknown:
            raise UnboundPlaceholderError(
                f"template '{self.template_id}' uses unknown placeholder(s): "
                + ", ".join(sorted(unknown))
            )
        missing = required - names
        if missing:
            raise UnboundPlaceholderError(
                f"template '{self.template_id}' must use placeholder(s): "
                + ", ".join(sorted(missing))
            )

    def render(self, values: dict[str, str]) -> str:
        try:
            return self.body.format(**values)
        except KeyError as exc:
            raise UnboundPlaceholderError(
                f"template '{self.template_id}' uses unknown placeholder {exc}"
            ) from exc


@dataclass(frozen=True)
class ModeratorDecision:
    chosen_agent: int
    raw_output: str


@dataclass(frozen=True)
class PromptKit:
    agent: PromptTemplate
    moderator: PromptTemplate


def _load_text(path: Path) -> str:
    return path.read_text(encoding="utf-8")


def load_templates(directory: Optional[str | Path] = None) -> PromptKit:
    """Load agent/moderator templates from a directory, or the packaged
    defaults when no directory is given. Templates are validated on load."""
    if directory is None:
        pkg = resources.files("tertulia") / "templates"
        agent_body = (pkg / "agent.txt").read_text(encoding="utf-8")
        moderator_body = (pkg / "moderator.txt").read_text(encoding="utf-8")
    else:
        directory = Path(directory)
        agent_body = _load_text(directory / "agent.txt")
        moderator_body = _load_text(directory / "moderator.txt")
    agent = PromptTemplate("agent", agent_body)
    moderator = PromptTemplate("moderator", moderator_body)
    agent.validate(required=REQUIRED_IN_AGENT_TEMPLATE)
    moderator.validate()
    return PromptKit(agent=agent, moderator=moderator)


def render_history(cfg: SessionConfig, history: ConversationHistory) -> str:
    """History as display-name-prefixed lines, newest last. An empty history
    renders as an instruction to open the conversation with a greeting."""
    if not len(history):
        return (
            f"(No one has spoken yet. Greet {cfg.user_display_name} by name "
            "and open the conversation.)"
        )
    lines = []
    for u in history:
        if u.speaker.is_user:
            name = cfg.user_display_name
        else:
            name = cfg.persona(u.speaker.agent_id).display_name
        lines.append(f"{name}: {u.text}")
    return "\n".join(lines)


def _common_values(cfg: SessionConfig, history: ConversationHistory) -> dict[str, str]:
    objects = ", ".join(cfg.scene.objects) if cfg.scene.objects else "(none listed)"
    return {
        "language": cfg.language.display_name(),
        "level": cfg.level.value,
        "scene_label": cfg.scene.scene_label,
        "objects": objects,
        "user_name": cfg.user_display_name,
        "history": render_history(cfg, history),
    }


def build_agent_prompt(
    cfg: SessionConfig,
    persona: AgentPersona,
    history: ConversationHistory,
    kit: Optional[PromptKit] = None,
) -> str:
    """Build the zero-shot prompt for one persona over the current history."""
    kit = kit or load_templates()
    values = _common_values(cfg, history)
    values["persona_name"] = persona.display_name
    values["persona_personality"] = persona.personality
    return kit.agent.render(values)


def build_moderator_prompt(
    cfg: SessionConfig,
    history: ConversationHistory,
    kit: Optional[PromptKit] = None,
) -> str:
    """Build the responder-selection prompt. The last entry must be a user
    utterance; the moderator is only ever consulted after the user speaks."""
    if not len(history) or not history.entries[-1].speaker.is_user:
        raise PreconditionFailedError(
            "moderator prompt requires the last utterance to be the user's"
        )
    kit = kit or load_templates()
    values = _common_values(cfg, history)
    p1, p2 = cfg.persona(1), cfg.persona(2)
    values["persona_name"] = f"1) {p1.display_name}  2) {p2.display_name}"
    values["persona_personality"] = (
        f"1) {p1.personality}  2) {p2.personality}"
    )
    return kit.moderator.render(values)


def parse_moderator_output(
    raw: str, last_agent_speaker: Optional[int] = None
) -> ModeratorDecision:
    """Total parser for moderator replies.

    The first '1' or '2' in the output wins. If neither appears, fall back
    round-robin to the agent who spoke least recently (agent 1 when no agent
    has spoken). The raw output is kept verbatim for diagnostics.
    """
    for ch in raw:
        if ch == "1":
            return ModeratorDecision(1, raw)
        if ch == "2":
            return ModeratorDecision(2, raw)
    if last_agent_speaker in (1, 2):
        return ModeratorDecision(other_agent(last_agent_speaker), raw)
    return ModeratorDecision(1, raw)
