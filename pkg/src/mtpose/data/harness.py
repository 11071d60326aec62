"""Clip bounding boxes and deterministic mixed-dataset batching."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ..volumetric import Pose


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def contains(self, coords, tol: float = 0.0) -> bool:
        c = np.asarray(coords, dtype=np.float64)[..., :2]
        return bool(np.all((c[..., 0] >= self.x0 - tol) & (c[..., 0] <= self.x1 + tol)
                           & (c[..., 1] >= self.y0 - tol) & (c[..., 1] <= self.y1 + tol)))


FULL_FRAME = BBox(0.0, 0.0, 1.0, 1.0)


def key_frame_indices(n: int) -> list[int]:
    """First, middle and last frame (deduplicated)."""
    if n < 1:
        raise ValueError("clip has no frames")
    return sorted({0, (n - 1) // 2, n - 1})


def estimate_clip_bbox(frames: Sequence, predict: Callable[[object], Pose], margin: float = 0.1, clip_to_frame: bool = True) -> BBox:
    """Box enclosing the poses predicted on the first, middle and last frames.

    ``predict`` maps one frame (an image, or anything the caller uses as a
    frame) to a normalised :class:`Pose`. The tight box is grown by
    ``margin`` of its width/height (split evenly between both sides). Falls
    back to the full frame when no valid joint is predicted.
    """
    pts = []
    for i in key_frame_indices(len(frames)):
        pose = predict(frames[i])
        pts.append(pose.coords[pose.valid, :2])
    pts = np.concatenate(pts) if pts else np.empty((0, 2))
    pts = pts[np.isfinite(pts).all(axis=1)]
    if len(pts) == 0:
        return FULL_FRAME
    (x0, y0), (x1, y1) = pts.min(axis=0), pts.max(axis=0)
    dx, dy = (x1 - x0) * margin / 2, (y1 - y0) * margin / 2
    box = BBox(x0 - dx, y0 - dy, x1 + dx, y1 + dy)
    if clip_to_frame:
        box = BBox(max(box.x0, 0.0), max(box.y0, 0.0), min(box.x1, 1.0), min(box.y1, 1.0))
    return box


def interleave(ratios: Mapping[str, float], n: int) -> list[str]:
    """Deterministic source sequence of length ``n`` honouring ``ratios``.

    At every slot the source furthest behind its quota is chosen (ties go to
    the first listed source), so any prefix deviates from the ratio by less
    than one sample per source.
    """
    names = list(ratios)
    w = np.array([ratios[k] for k in names], dtype=np.float64)
    if len(w) == 0 or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("ratios must be non-negative with a positive sum")
    w = w / w.sum()
    taken = np.zeros(len(w))
    out = []
    for i in range(n):
        deficit = w * (i + 1) - taken
        k = int(np.argmax(deficit))
        taken[k] += 1
        out.append(names[k])
    return out


def mixed_batches(sizes: Mapping[str, int], ratios: Mapping[str, float], batch_size: int, n_batches: int) -> list[list[tuple[str, int]]]:
    """Batches of (source, index) pairs; each source is walked cyclically in order."""
    seq = interleave(ratios, batch_size * n_batches)
    cursor = {k: 0 for k in sizes}
    flat = []
    for name in seq:
        if sizes[name] <= 0:
            raise ValueError(f"source {name!r} is empty")
        flat.append((name, cursor[name] % sizes[name]))
        cursor[name] += 1
    return [flat[i : i + batch_size] for i in range(0, len(flat), batch_size)]
