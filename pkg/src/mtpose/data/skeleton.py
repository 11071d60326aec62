"""Line-oriented skeleton clip files.

Header::

    #skc v1 njoints=<N> dim=<D> fps=<f> label=<idx|none>

then one line per frame: N*D decimals (``nan`` for an invalid joint, all of
its coordinates) followed by N visibility flags (0/1), space separated.
Parsing is strict; any malformed line raises :class:`ClipFormatError` with
its line number.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..volumetric import Pose

_HEADER = re.compile(r"#skc v1 njoints=(\d+) dim=([23]) fps=(\S+) label=(\d+|none)")
_DECIMAL = re.compile(r"-?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?|nan")


class ClipFormatError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass
class SkeletonClip:
    frames: list[Pose]
    action_label: int | None = None
    dataset_tag: str = ""
    fps: float = 30.0
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.frames:
            return
        shapes = {(f.n_joints, f.dim, f.label_dim) for f in self.frames}
        if len(shapes) != 1:
            raise ValueError(f"clip frames disagree on (N_J, D, label_dim): {sorted(shapes)}")

    @property
    def n_joints(self) -> int:
        return self.frames[0].n_joints

    @property
    def dim(self) -> int:
        return self.frames[0].dim

    def __len__(self) -> int:
        return len(self.frames)

    def coords(self) -> np.ndarray:
        return np.stack([f.coords for f in self.frames])


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def format_clip(clip: SkeletonClip) -> str:
    if not clip.frames:
        raise ValueError("cannot write an empty clip")
    label = "none" if clip.action_label is None else str(int(clip.action_label))
    lines = [f"#skc v1 njoints={clip.n_joints} dim={clip.dim} fps={_fmt(clip.fps)} label={label}"]
    for f in clip.frames:
        vals = []
        for j in range(f.n_joints):
            if f.valid[j]:
                vals.extend(_fmt(v) for v in f.coords[j])
            else:
                vals.extend(["nan"] * f.dim)
        flags = ["1" if v >= 0.5 else "0" for v in f.visibility]
        lines.append(" ".join(vals + flags))
    return "\n".join(lines) + "\n"


def parse_clip(text: str, dataset_tag: str = "") -> SkeletonClip:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ClipFormatError(1, "empty file")
    m = _HEADER.fullmatch(lines[0])
    if not m:
        raise ClipFormatError(1, f"bad header {lines[0]!r}")
    n, d = int(m.group(1)), int(m.group(2))
    if n == 0:
        raise ClipFormatError(1, "njoints must be positive")
    try:
        fps = float(m.group(3))
    except ValueError:
        raise ClipFormatError(1, f"bad fps {m.group(3)!r}") from None
    if not math.isfinite(fps) or fps <= 0:
        raise ClipFormatError(1, f"fps must be positive, got {m.group(3)!r}")
    label = None if m.group(4) == "none" else int(m.group(4))
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        toks = line.split(" ")
        if len(toks) != n * d + n:
            raise ClipFormatError(lineno, f"expected {n * d + n} fields, got {len(toks)}")
        for tok in toks[: n * d]:
            if not _DECIMAL.fullmatch(tok):
                raise ClipFormatError(lineno, f"bad decimal {tok!r}")
        coords = np.array([float(t) for t in toks[: n * d]]).reshape(n, d)
        flags = toks[n * d :]
        if any(f not in ("0", "1") for f in flags):
            raise ClipFormatError(lineno, "visibility flags must be 0 or 1")
        nan = np.isnan(coords)
        partial = nan.any(axis=1) & ~nan.all(axis=1)
        if partial.any():
            raise ClipFormatError(lineno, f"joint {int(np.argmax(partial))} is partially nan")
        valid = ~nan.all(axis=1)
        frames.append(Pose(coords, np.array([float(f) for f in flags]), valid, d))
    if not frames:
        raise ClipFormatError(2, "clip has no frames")
    return SkeletonClip(frames, label, dataset_tag, fps)


def write_clip(path, clip: SkeletonClip) -> None:
    Path(path).write_text(format_clip(clip), encoding="utf-8", newline="\n")


def read_clip(path) -> SkeletonClip:
    p = Path(path)
    return parse_clip(p.read_text(encoding="utf-8"), dataset_tag=p.stem)
