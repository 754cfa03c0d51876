"""Four-section text prompt plus five images for viewpoint selection."""

from __future__ import annotations

import base64
import hashlib
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from ..errors import UsageError
from ..geometry import CameraRig, RgbdFrame, angles_of_point
from .som import build_som_image

SECTION_TITLES = ("Environment description", "Task description", "In-context examples", "Rules")

# Rule identifiers double as validation codes.
RULES = {
    "NOT_AXIS_PREFERRED": (
        "Prefer a viewpoint aligned with the coordinate axes: choose AZIM close to a multiple of 90 degrees "
        "unless a small rotation is needed to reveal an occluded object."
    ),
    "LABEL_SHORTCUT": (
        "Decide from what the images show. Do not base or justify the choice on camera names or mark numbers."
    ),
    "NOT_ABOVE_TABLE": "The camera must look downwards from above the table, so ELEV must be greater than 0.",
    "BAD_FORMAT": (
        "Answer with one line of the form ELEV=<number>; AZIM=<number> (degrees), "
        "optionally followed by a single line of rationale."
    ),
}

IN_CONTEXT_EXAMPLES = (
    ("A camera in front of the table at table height, looking back along the x axis toward the origin.", 0.0, 180.0),
    ("A camera directly above the origin, looking straight down at the table.", 90.0, 0.0),
    ("A camera to the right of the table at table height, looking along the y axis toward the origin.", 0.0, -90.0),
)


def format_response(elev: float, azim: float) -> str:
    return f"ELEV={elev:g}; AZIM={azim:g}"


def png_bytes(image) -> bytes:
    if isinstance(image, np.ndarray):
        image = Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8))
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


@dataclass(frozen=True, eq=False)
class PromptBundle:
    sections: list[tuple[str, str]]
    images: list[tuple[str, bytes]]  # (label, PNG bytes)

    def text(self) -> str:
        return "\n\n".join(f"## {title}\n{body}" for title, body in self.sections)

    def to_text(self) -> str:
        """Canonical dump: section text plus each image's label and SHA-256."""
        lines = [self.text(), "", "## Images"]
        lines += [f"{label}: sha256={hashlib.sha256(data).hexdigest()}" for label, data in self.images]
        return "\n".join(lines) + "\n"

    def messages(self) -> list[dict]:
        """Chat-completion ``messages`` with one user turn carrying text and images."""
        parts: list[dict] = [{"type": "text", "text": self.text()}]
        for label, data in self.images:
            parts.append({"type": "text", "text": label})
            url = "data:image/png;base64," + base64.b64encode(data).decode("ascii")
            parts.append({"type": "image_url", "image_url": {"url": url}})
        return [{"role": "user", "content": parts}]


def _environment(rig: CameraRig) -> str:
    lo, hi = rig.bounds.min, rig.bounds.max
    lines = [
        "The first image is a schematic of the workspace. The origin is at the center of the table surface. "
        "The x axis (red arrow) and y axis (green arrow) lie in the table plane and the z axis (blue arrow) points up.",
        f"The workspace box spans x in [{lo[0]:g}, {hi[0]:g}] m, y in [{lo[1]:g}, {hi[1]:g}] m and z in [{lo[2]:g}, {hi[2]:g}] m.",
        "Numbered marks show where the fixed cameras are:",
    ]
    for n, cam in enumerate(rig.cameras, start=1):
        e, a, d = angles_of_point(cam.extrinsics.translation)
        lines.append(f"  mark {n}: about {d:.2f} m from the origin, {e:.0f} degrees above the table, horizontal direction {a:.0f} degrees.")
    lines.append("The remaining images are the current RGB views from these cameras, in mark order.")
    return "\n".join(lines)


def _task(task: str) -> str:
    return "\n".join(
        [
            f"The robot must: {task}",
            "Pick one virtual camera that shows everything needed for this task with as little occlusion as possible.",
            "The virtual camera sits at a fixed distance from the origin and looks at it. Its pose is given by two angles:",
            "  ELEV: angle in degrees between the origin-to-camera vector and the table plane (90 = straight above).",
            "  AZIM: angle in degrees of that vector's projection onto the table plane, counterclockwise from the +x axis.",
        ]
    )


def _examples() -> str:
    return "\n".join(f"{i}. {desc}\n   {format_response(e, a)}" for i, (desc, e, a) in enumerate(IN_CONTEXT_EXAMPLES, 1))


def _rules() -> str:
    return "\n".join(f"{i}. {text}" for i, text in enumerate(RULES.values(), 1))


def build_prompt(task: str, rig: CameraRig, frames: list[RgbdFrame]) -> PromptBundle:
    if not task or not task.strip():
        raise UsageError("task description must be non-empty")
    if len(frames) != 4:
        raise UsageError(f"expected 4 camera frames, got {len(frames)}")
    som = build_som_image(rig)
    sections = [
        (SECTION_TITLES[0], _environment(rig)),
        (SECTION_TITLES[1], _task(task.strip())),
        (SECTION_TITLES[2], _examples()),
        (SECTION_TITLES[3], _rules()),
    ]
    images = [("environment", png_bytes(som.image))]
    images += [(f"mark {n} view", png_bytes(f.rgb)) for n, f in enumerate(frames, start=1)]
    return PromptBundle(sections, images)


def feedback(violations: list[str], parse_error: str | None = None) -> str:
    """Corrective message quoting each violated rule."""
    lines = ["Your answer broke these rules:"]
    for v in violations:
        lines.append(f"- {RULES[v]}")
    if parse_error:
        lines.append(f"(parser: {parse_error})")
    lines.append("Please answer again.")
    return "\n".join(lines)
