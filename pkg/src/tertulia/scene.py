"""Operator-authored scene files and the simulated detection phase.

A scene file is a small JSON document describing where the conversation
happens and which objects are around; one file per venue, chosen by CLI
flag. The detection phase emits a single SceneReady event after a
configurable delay, standing in for an automatic object-detection pipeline.
The shipped library scene's object list is illustrative, not taken from any
particular venue inventory. A provider-backed detection path is a future
extension point and intentionally not implemented.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Callable

from .clock import TimeSource, TimerHandle
from .model import SceneContext


class SceneParseError(ValueError):
    """Scene file is not valid JSON or not a single scene object."""


class SceneValidationError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


def default_scene_path() -> Path:
    return Path(str(resources.files("tertulia") / "scenes" / "library.json"))


def parse_scene(text: str, source: str = "<scene>") -> SceneContext:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(
            f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise SceneParseError(f"{source}: scene file must contain exactly one JSON object")

    violations: list[str] = []
    label = raw.get("scene_label")
    if not isinstance(label, str) or not label:
        violations.append("scene_label must be a non-empty string")
    objects = raw.get("objects", [])
    if not isinstance(objects, list) or not all(isinstance(o, str) for o in objects):
        violations.append("objects must be an array of strings")
    delay = raw.get("detection_delay_ms", 2000)
    if not isinstance(delay, int) or isinstance(delay, bool):
        violations.append("detection_delay_ms must be an integer")
    elif not 0 <= delay <= 30000:
        violations.append("detection_delay_ms must be between 0 and 30000")
    unknown = set(raw) - {"scene_label", "objects", "detection_delay_ms"}
    if unknown:
        violations.append(f"unknown field(s): {', '.join(sorted(unknown))}")
    if violations:
        raise SceneValidationError(violations)

    return SceneContext(
        scene_label=label, objects=tuple(objects), detection_delay_ms=delay
    )


def load_scene(path: str | Path) -> SceneContext:
    """Load and validate one scene file."""
    path = Path(path)
    return parse_scene(path.read_text(encoding="utf-8"), source=str(path))


def run_detection(
    scene: SceneContext,
    clock: TimeSource,
    deliver: Callable[[SceneContext, int], None],
) -> TimerHandle:
    """Schedule the single SceneReady delivery, detection_delay_ms from now.

    deliver receives the scene and the session-clock time of readiness; the
    caller turns that into an engine event. Returns the timer handle so a
    closing session can cancel an un-fired detection.
    """

    def _fire() -> None:
        deliver(scene, clock.now_ms())

    return clock.schedule(scene.detection_delay_ms, _fire)
