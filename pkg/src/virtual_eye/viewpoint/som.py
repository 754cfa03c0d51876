"""Set-of-mark overview of the workspace: box outline, axes and numbered camera marks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from ..geometry import CameraRig
from ..renderer import VirtualCameraSpec, world_to_pixel

SOM_SIZE = 512
SOM_VIEW = (30.0, -60.0)  # elev, azim of the overview projection
SOM_HALF_EXTENT = 1.5
SOM_LOOK_AT = (0.0, 0.0, 0.5)
AXIS_LEN = 0.6
BG = (255, 255, 255)
BOX_COLOR = (120, 120, 120)
AXIS_COLORS = {"x": (220, 30, 30), "y": (30, 160, 30), "z": (30, 60, 220)}
MARK_COLOR = (250, 170, 0)


@dataclass(frozen=True)
class Mark:
    number: int
    camera: str
    pixel: tuple[float, float]


@dataclass(frozen=True)
class SomImage:
    image: Image.Image
    marks: list[Mark]
    axis_labels: list[str]


def _spec(size: int) -> VirtualCameraSpec:
    return VirtualCameraSpec(
        SOM_VIEW[0], SOM_VIEW[1], distance=5.0, look_at=SOM_LOOK_AT, half_extent=SOM_HALF_EXTENT, resolution=size
    )


def _px(spec, p) -> tuple[float, float]:
    u, v, _ = world_to_pixel(spec, np.asarray(p, dtype=np.float64))
    return float(u), float(v)


def _arrow(draw: ImageDraw.ImageDraw, a, b, color, width=3, head=12.0):
    draw.line([a, b], fill=color, width=width)
    d = np.subtract(b, a)
    n = np.linalg.norm(d)
    if n == 0:
        return
    d = d / n
    perp = np.array([-d[1], d[0]])
    base = np.asarray(b) - d * head
    draw.polygon([tuple(b), tuple(base + perp * head * 0.45), tuple(base - perp * head * 0.45)], fill=color)


def build_som_image(rig: CameraRig, size: int = SOM_SIZE) -> SomImage:
    """Draw the workspace box, x/y/z axes from the origin and one numbered mark per camera.

    Marks are numbered from 1 in rig order.  Output is a pure function of
    the rig and ``size``.
    """
    spec = _spec(size)
    img = Image.new("RGB", (size, size), BG)
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()

    lo, hi = rig.bounds.min, rig.bounds.max
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    for i in range(8):
        for j in range(i + 1, 8):
            if np.count_nonzero(corners[i] != corners[j]) == 1:
                draw.line([_px(spec, corners[i]), _px(spec, corners[j])], fill=BOX_COLOR, width=1)

    origin = _px(spec, [0.0, 0.0, 0.0])
    labels = []
    for k, name in enumerate("xyz"):
        tip = np.zeros(3)
        tip[k] = AXIS_LEN
        end = _px(spec, tip)
        _arrow(draw, origin, end, AXIS_COLORS[name])
        draw.text((end[0] + 6, end[1] - 6), name, fill=AXIS_COLORS[name], font=font)
        labels.append(name)

    marks = []
    r = 10
    for n, cam in enumerate(rig.cameras, start=1):
        u, v = _px(spec, cam.extrinsics.translation)
        draw.ellipse([u - r, v - r, u + r, v + r], fill=MARK_COLOR, outline=(0, 0, 0))
        draw.text((u - 3, v - 6), str(n), fill=(0, 0, 0), font=font)
        marks.append(Mark(n, cam.name, (u, v)))
    return SomImage(img, marks, labels)
