"""Binary demonstration files.

Layout (all integers and floats little-endian)::

    "VEDS"  u32 version=1  u32 n_demos  u64 offset[n_demos]
    demo block, repeated:
        str instruction  str task_name  str variation  u64 seed  u32 n_steps
        step, repeated:
            u32 n_frames
            frame, repeated:
                str name
                f64 fx fy cx cy  u32 width height
                f64 quaternion[4] (wxyz)  f64 translation[3]      camera -> world
                u32 png_len  png_bytes (rgb)
                f32 depth[height * width]                          row-major
            f64 position[3]  f64 quaternion[4]  u8 gripper_open  u8 collision_allowed
            f64 joint_velocity_norm  u8 gripper_state

``str`` is a u32 byte length followed by UTF-8.  Offsets are absolute byte
positions of each demo block and are cross-checked on read.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from ..codec import ActionVector
from ..errors import CorruptDatasetError
from ..geometry import CameraIntrinsics, RgbdFrame, RigidTransform
from ..keypoints import Trajectory, TrajectoryStep
from .demos import Demonstration

MAGIC = b"VEDS"
VERSION = 1
_HEAD = struct.Struct("<4sII")


def _str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _png(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode="RGB").save(buf, format="PNG", compress_level=1)
    return buf.getvalue()


def _frame_bytes(f: RgbdFrame) -> bytes:
    k = f.intrinsics
    depth = np.ascontiguousarray(f.depth, dtype="<f4")
    if depth.shape != (k.height, k.width):
        raise ValueError(f"frame {f.name!r}: depth shape {depth.shape} does not match intrinsics")
    png = _png(f.rgb)
    return b"".join(
        [
            _str(f.name),
            struct.pack("<4d2I", k.fx, k.fy, k.cx, k.cy, k.width, k.height),
            struct.pack("<7d", *f.extrinsics.rotation, *f.extrinsics.translation),
            struct.pack("<I", len(png)),
            png,
            depth.tobytes(),
        ]
    )


def demo_bytes(demo: Demonstration) -> bytes:
    parts = [
        _str(demo.instruction),
        _str(demo.task_name),
        _str(demo.variation),
        struct.pack("<QI", demo.seed, len(demo.trajectory)),
    ]
    for step in demo.trajectory.steps:
        parts.append(struct.pack("<I", len(step.frames)))
        parts.extend(_frame_bytes(f) for f in step.frames)
        a = step.action
        parts.append(struct.pack("<7d2B", *a.position, *a.rotation, a.gripper_open, a.collision_allowed))
        parts.append(struct.pack("<dB", step.joint_velocity_norm, step.gripper_open))
    return b"".join(parts)


def header_size(n_demos: int) -> int:
    return _HEAD.size + 8 * n_demos


def write_dataset(path, demos: list[Demonstration]) -> list[int]:
    """Write ``demos``; returns the block offsets stored in the index table."""
    blocks = [demo_bytes(d) for d in demos]
    offsets = []
    pos = header_size(len(blocks))
    for b in blocks:
        offsets.append(pos)
        pos += len(b)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(blocks)))
        fh.write(struct.pack(f"<{len(offsets)}Q", *offsets))
        for b in blocks:
            fh.write(b)
    return offsets


class _Reader:
    def __init__(self, data: bytes, pos: int, path):
        self.data, self.pos, self.path = data, pos, path

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptDatasetError(f"{self.path}: truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptDatasetError(f"{self.path}: bad UTF-8 at byte {self.pos - n}") from exc


def _read_frame(r: _Reader) -> RgbdFrame:
    name = r.string()
    fx, fy, cx, cy, w, h = r.unpack("<4d2I")
    vals = r.unpack("<7d")
    (png_len,) = r.unpack("<I")
    png = r.take(png_len)
    try:
        rgb = np.array(Image.open(io.BytesIO(png)).convert("RGB"))
    except Exception as exc:  # PIL raises a zoo of types on bad input
        raise CorruptDatasetError(f"{r.path}: undecodable PNG in frame {name!r}") from exc
    depth = np.frombuffer(r.take(4 * w * h), dtype="<f4").reshape(h, w).astype(np.float32)
    if rgb.shape != (h, w, 3):
        raise CorruptDatasetError(f"{r.path}: frame {name!r} PNG is {rgb.shape}, header says {h}x{w}")
    try:
        k = CameraIntrinsics(fx, fy, cx, cy, w, h)
        pose = RigidTransform(vals[:4], vals[4:])
    except ValueError as exc:
        raise CorruptDatasetError(f"{r.path}: invalid camera header in frame {name!r}: {exc}") from exc
    return RgbdFrame(name, rgb, depth, k, pose)


def _read_demo(r: _Reader) -> Demonstration:
    instruction, task, variation = r.string(), r.string(), r.string()
    seed, n_steps = r.unpack("<QI")
    steps = []
    for _ in range(n_steps):
        (n_frames,) = r.unpack("<I")
        frames = [_read_frame(r) for _ in range(n_frames)]
        vals = r.unpack("<7d2B")
        vel, grip = r.unpack("<dB")
        try:
            action = ActionVector(np.array(vals[:3]), np.array(vals[3:7]), vals[7], vals[8])
        except ValueError as exc:
            raise CorruptDatasetError(f"{r.path}: invalid action at byte {r.pos}: {exc}") from exc
        steps.append(TrajectoryStep(frames, action, vel, grip))
    return Demonstration(Trajectory(steps, instruction), task, variation, seed, scene=None)


def _open(path) -> tuple[bytes, list[int]]:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise CorruptDatasetError(f"{path}: too short for a dataset header")
    magic, version, n = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CorruptDatasetError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CorruptDatasetError(f"{path}: unsupported version {version}, expected {VERSION}")
    if len(data) < header_size(n):
        raise CorruptDatasetError(f"{path}: truncated index table")
    offsets = list(struct.unpack_from(f"<{n}Q", data, _HEAD.size))
    return data, offsets


def read_index(path) -> list[int]:
    return _open(path)[1]


def iter_dataset(path):
    data, offsets = _open(path)
    pos = header_size(len(offsets))
    for i, off in enumerate(offsets):
        if off != pos:
            raise CorruptDatasetError(f"{path}: index entry {i} is {off}, block starts at {pos}")
        r = _Reader(data, off, path)
        yield _read_demo(r)
        pos = r.pos
    if pos != len(data):
        raise CorruptDatasetError(f"{path}: {len(data) - pos} trailing bytes after the last demo")


def read_dataset(path) -> list[Demonstration]:
    return list(iter_dataset(path))


def read_demo(path, index: int) -> Demonstration:
    """Random access through the index table."""
    data, offsets = _open(path)
    if not 0 <= index < len(offsets):
        raise IndexError(f"demo {index} out of range ({len(offsets)} demos)")
    return _read_demo(_Reader(data, offsets[index], path))


def demos_equal(a: Demonstration, b: Demonstration) -> bool:
    """Bit-exact comparison of everything the file format stores."""
    if (a.instruction, a.task_name, a.variation, a.seed, len(a)) != (b.instruction, b.task_name, b.variation, b.seed, len(b)):
        return False
    for sa, sb in zip(a.trajectory.steps, b.trajectory.steps):
        if demo_step_bytes(sa) != demo_step_bytes(sb):
            return False
        for fa, fb in zip(sa.frames, sb.frames):
            if not (np.array_equal(fa.rgb, fb.rgb) and fa.depth.dtype == fb.depth.dtype and np.array_equal(fa.depth, fb.depth)):
                return False
    return True


def demo_step_bytes(step: TrajectoryStep) -> bytes:
    """Everything in a step except pixel payloads, packed as on disk."""
    a = step.action
    head = [struct.pack("<I", len(step.frames))]
    for f in step.frames:
        k = f.intrinsics
        head.append(_str(f.name) + struct.pack("<4d2I", k.fx, k.fy, k.cx, k.cy, k.width, k.height))
        head.append(struct.pack("<7d", *f.extrinsics.rotation, *f.extrinsics.translation))
    head.append(struct.pack("<7d2B", *a.position, *a.rotation, a.gripper_open, a.collision_allowed))
    head.append(struct.pack("<dB", step.joint_velocity_norm, step.gripper_open))
    return b"".join(head)
