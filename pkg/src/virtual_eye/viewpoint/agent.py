"""Parsing, validation and the query/verify/retry loop for viewpoint selection."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from ..codec import wrap_degrees
from ..errors import ParseError, SelectionFailed, UsageError
from ..geometry import CameraRig, RgbdFrame
from ..renderer import DISTANCE_FACTOR, VirtualCameraSpec
from .prompt import RULES, build_prompt, feedback

AXIS_TOLERANCE_DEG = 15.0
FAILING = ("NOT_ABOVE_TABLE", "BAD_FORMAT", "LABEL_SHORTCUT")
WARNING_ONLY = ("NOT_AXIS_PREFERRED",)

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PATTERN = re.compile(rf"ELEV\s*=\s*({_NUM})\s*[;,]?\s*AZIM\s*=\s*({_NUM})", re.IGNORECASE)
_LABELS = re.compile(
    r"\b(front|wrist|left[\s_-]*shoulder|right[\s_-]*shoulder|overhead)[\s_-]*(camera|cam|view)\b|\bmark\s*\d\b|\bcamera\s*\d\b",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class ViewpointResponse:
    elev: float
    azim: float
    rationale: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not any(v in FAILING for v in self.violations)

    @property
    def errors(self) -> list[str]:
        return [v for v in self.violations if v in FAILING]

    @property
    def warnings(self) -> list[str]:
        return [v for v in self.violations if v in WARNING_ONLY]


def parse_response(text: str) -> ViewpointResponse:
    """Read ``ELEV=<f>; AZIM=<f>`` anywhere in ``text`` (case and spacing are free).

    ``azim`` is wrapped into [-180, 180).  Anything else on the line or on
    later lines becomes the rationale.
    """
    m = _PATTERN.search(text or "")
    if m is None:
        raise ParseError("no 'ELEV=<number>; AZIM=<number>' found", text)
    elev, azim = float(m.group(1)), float(m.group(2))
    if not (math.isfinite(elev) and math.isfinite(azim)):
        raise ParseError("non-finite angle", text)
    if not -90.0 <= elev <= 90.0:
        raise ParseError(f"ELEV={elev:g} is outside [-90, 90]", text)
    rationale = (text[: m.start()] + " " + text[m.end() :]).strip()
    return ViewpointResponse(elev, float(wrap_degrees(azim)), rationale)


def axis_offset(azim: float) -> float:
    """Angular distance from ``azim`` to the nearest multiple of 90 degrees."""
    r = azim % 90.0
    return min(r, 90.0 - r)


def validate(resp: ViewpointResponse) -> ValidationReport:
    violations = []
    if resp.elev <= 0:
        violations.append("NOT_ABOVE_TABLE")
    if _LABELS.search(resp.rationale):
        violations.append("LABEL_SHORTCUT")
    if axis_offset(resp.azim) > AXIS_TOLERANCE_DEG:
        violations.append("NOT_AXIS_PREFERRED")
    return ValidationReport(violations)


@dataclass
class ViewSelection:
    spec: VirtualCameraSpec
    response: ViewpointResponse
    report: ValidationReport
    transcript: list[dict]

    @property
    def calls(self) -> int:
        return len(self.transcript)


def select_view(
    client,
    task: str,
    rig: CameraRig,
    frames: list[RgbdFrame],
    max_retries: int = 2,
    distance: float | None = None,
    half_extent: float = 0.5,
    resolution: int = 224,
    look_at=(0.0, 0.0, 0.0),
) -> ViewSelection:
    """Ask ``client`` for a viewpoint, re-asking with rule feedback until one validates.

    At most ``max_retries + 1`` calls are made.  ``distance`` defaults to
    1.2 times the workspace diagonal.  Every call is logged in the
    transcript; on exhaustion :class:`SelectionFailed` carries it.
    """
    if max_retries < 0:
        raise UsageError(f"max_retries must be >= 0, got {max_retries}")
    bundle = build_prompt(task, rig, frames)
    messages = bundle.messages()
    transcript: list[dict] = []
    for attempt in range(max_retries + 1):
        reply = client.complete(messages)
        entry: dict = {"attempt": attempt + 1, "response": reply}
        try:
            resp = parse_response(reply)
        except ParseError as exc:
            entry.update(parsed=None, violations=["BAD_FORMAT"], error=str(exc))
            note = feedback(["BAD_FORMAT"], str(exc))
        else:
            report = validate(resp)
            entry.update(parsed={"elev": resp.elev, "azim": resp.azim}, violations=list(report.violations))
            if report.passed:
                transcript.append(entry)
                spec = VirtualCameraSpec(
                    elev=resp.elev,
                    azim=resp.azim,
                    distance=distance if distance is not None else DISTANCE_FACTOR * rig.bounds.diagonal,
                    look_at=look_at,
                    half_extent=half_extent,
                    resolution=resolution,
                )
                return ViewSelection(spec, resp, report, transcript)
            note = feedback(report.errors)
        entry["feedback"] = note
        transcript.append(entry)
        messages = messages + [
            {"role": "assistant", "content": [{"type": "text", "text": reply}]},
            {"role": "user", "content": [{"type": "text", "text": note}]},
        ]
    raise SelectionFailed(f"no valid viewpoint after {max_retries + 1} calls", transcript)


__all__ = ["RULES", "ViewpointResponse", "ValidationReport", "ViewSelection", "parse_response", "validate", "select_view"]
