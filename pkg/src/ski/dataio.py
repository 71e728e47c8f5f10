"""Self-describing binary container for generated datasets, plus split files.

Layout (all integers little-endian; all floats IEEE-754 binary64 LE):

    header:
      magic          8 bytes  b"SKITRIP1"
      version        u32      currently 1
      num_triplets   u32
      T_s, J         u32, u32
      T_v, C, H, W   u32 x4
    record (repeated num_triplets times):
      class_id       i32
      subject_id     i32
      camera         f64 x2   (azimuth, elevation) reproducing `video` from `skeleton`
      source_camera  f64 x2   generation-time viewpoint (provenance)
      background     f64 x3
      figure         f64 x3
      skeleton       f64 x (T_s*J*3), C-order
      video          f64 x (T_v*C*H*W), C-order
      prompt_text    u32 length + UTF-8 bytes
      template_id    u32 length + UTF-8 bytes
      caption        u32 length + UTF-8 bytes

The split file is plain text: a line "seen", one class id per line, a line
"unseen", one class id per line.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import DataFormatError, SkeletonSequence, TextPrompt, VideoClip
from .synthdata import Appearance, SplitSpec, Triplet

MAGIC = b"SKITRIP1"
VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataFormatError("truncated dataset file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def read_str(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def read_f64(self, count: int, shape) -> np.ndarray:
        arr = np.frombuffer(self.take(count * 8), dtype="<f8").astype(np.float64)
        return arr.reshape(shape)


def dataset_bytes(triplets: list[Triplet]) -> bytes:
    if not triplets:
        raise DataFormatError("refusing to serialize an empty dataset")
    first = triplets[0]
    T_s, J, _ = first.skeleton.frames.shape
    T_v, C, H, W = first.video.frames.shape
    chunks = [MAGIC, struct.pack("<IIIIIIII", VERSION, len(triplets), T_s, J, T_v, C, H, W)]
    for t in triplets:
        if t.skeleton.frames.shape != (T_s, J, 3) or t.video.frames.shape != (T_v, C, H, W):
            raise DataFormatError("all triplets in a container must share dimensions")
        chunks.append(struct.pack("<ii", t.prompt.class_id, t.skeleton.subject_id))
        chunks.append(struct.pack("<2d", *t.camera))
        chunks.append(struct.pack("<2d", *t.source_camera))
        chunks.append(struct.pack("<3d", *t.appearance.background))
        chunks.append(struct.pack("<3d", *t.appearance.figure))
        chunks.append(np.ascontiguousarray(t.skeleton.frames, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(t.video.frames, dtype="<f8").tobytes())
        chunks.append(_pack_str(t.prompt.text))
        chunks.append(_pack_str(t.prompt.template_id))
        chunks.append(_pack_str(t.caption))
    return b"".join(chunks)


def write_dataset(path, triplets: list[Triplet]):
    Path(path).write_bytes(dataset_bytes(triplets))


def read_dataset(path) -> list[Triplet]:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a dataset container")
    version, n, T_s, J, T_v, C, H, W = r.unpack("<IIIIIIII")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported container version {version}")
    triplets = []
    for _ in range(n):
        class_id, subject_id = r.unpack("<ii")
        camera = r.unpack("<2d")
        source_camera = r.unpack("<2d")
        background = r.unpack("<3d")
        figure = r.unpack("<3d")
        skeleton = r.read_f64(T_s * J * 3, (T_s, J, 3))
        video = r.read_f64(T_v * C * H * W, (T_v, C, H, W))
        prompt_text = r.read_str()
        template_id = r.read_str()
        caption = r.read_str()
        triplets.append(
            Triplet(
                video=VideoClip(frames=video, class_id=class_id),
                skeleton=SkeletonSequence(frames=skeleton, subject_id=subject_id, class_id=class_id),
                prompt=TextPrompt(text=prompt_text, class_id=class_id, template_id=template_id),
                caption=caption,
                appearance=Appearance(background=background, figure=figure),
                camera=camera,
                source_camera=source_camera,
            )
        )
    if r.pos != len(r.data):
        raise DataFormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return triplets


def write_split(path, split: SplitSpec):
    lines = ["seen"]
    lines += [str(c) for c in sorted(split.seen_class_ids)]
    lines.append("unseen")
    lines += [str(c) for c in sorted(split.unseen_class_ids)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split(path) -> SplitSpec:
    seen: list[int] = []
    unseen: list[int] = []
    target = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line == "seen":
            target = seen
        elif line == "unseen":
            target = unseen
        else:
            if target is None:
                raise DataFormatError(f"{path}:{lineno}: class id before any section header")
            try:
                target.append(int(line))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: expected a class id, got {line!r}") from None
    return SplitSpec(seen_class_ids=frozenset(seen), unseen_class_ids=frozenset(unseen))
