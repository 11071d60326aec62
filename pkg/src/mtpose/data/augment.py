"""Geometric and temporal augmentation applied consistently to images and poses.

Pixel (u, v) = (column, row); a normalised coordinate x maps to pixel x * W.
Rotation and scaling act about the image centre ((W-1)/2, (H-1)/2); a
horizontal flip maps column u to W-1-u.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from ..volumetric import Pose, visibility_targets
from .skeleton import SkeletonClip


@dataclass
class AugmentationConfig:
    rotation_deg: float = 45.0
    scale_range: tuple[float, float] = (0.7, 1.3)
    translation_px: float = 40.0
    reference_extent: int = 256  # translation_px is expressed at this crop size
    subsample_range: tuple[int, int] = (1, 3)
    flip_prob: float = 0.5

    def __post_init__(self):
        lo, hi = self.scale_range
        if self.rotation_deg < 0 or self.translation_px < 0:
            raise ValueError("rotation and translation ranges must be non-negative")
        if not 0 < lo <= hi:
            raise ValueError(f"bad scale range {self.scale_range}")
        a, b = self.subsample_range
        if not 1 <= a <= b:
            raise ValueError(f"bad subsample range {self.subsample_range}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")


@dataclass
class AugmentParams:
    angle_deg: float = 0.0
    scale: float = 1.0
    tx: float = 0.0  # pixels at the working extent
    ty: float = 0.0
    flip: bool = False
    subsample: int = 1

    @property
    def is_identity(self) -> bool:
        return self.angle_deg == 0 and self.scale == 1 and self.tx == 0 and self.ty == 0 and not self.flip


def sample_params(cfg: AugmentationConfig, rng: np.random.Generator, extent: int) -> AugmentParams:
    t = cfg.translation_px * extent / cfg.reference_extent
    return AugmentParams(
        angle_deg=float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)),
        scale=float(rng.uniform(*cfg.scale_range)),
        tx=float(rng.uniform(-t, t)),
        ty=float(rng.uniform(-t, t)),
        flip=bool(rng.random() < cfg.flip_prob),
        subsample=int(rng.integers(cfg.subsample_range[0], cfg.subsample_range[1] + 1)),
    )


def _forward_points(uv: np.ndarray, p: AugmentParams, h: int, w: int) -> np.ndarray:
    c = np.array([(w - 1) / 2, (h - 1) / 2])
    th = np.deg2rad(p.angle_deg)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    out = p.scale * (uv - c) @ rot.T + c + np.array([p.tx, p.ty])
    if p.flip:
        out[:, 0] = w - 1 - out[:, 0]
    return out


def warp_image(image: np.ndarray, p: AugmentParams) -> np.ndarray:
    """Resample [H, W, C] under the augmentation (bilinear, zero fill)."""
    if p.is_identity:
        return image.copy()
    h, w = image.shape[:2]
    out = image
    if p.angle_deg != 0 or p.scale != 1 or p.tx != 0 or p.ty != 0:
        c = np.array([(w - 1) / 2, (h - 1) / 2])
        th = np.deg2rad(p.angle_deg)
        inv = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]]) / p.scale
        vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
        q = np.stack([uu.ravel(), vv.ravel()], axis=1) - c - np.array([p.tx, p.ty])
        src = q @ inv.T + c
        out = np.stack(
            [
                map_coordinates(image[..., ch], [src[:, 1], src[:, 0]], order=1, mode="constant", cval=0.0).reshape(h, w)
                for ch in range(image.shape[2])
            ],
            axis=-1,
        )
    if p.flip:
        out = out[:, ::-1].copy()
    return out


def _swap(order_len: int, flip_pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    order = np.arange(order_len)
    for a, b in flip_pairs:
        order[a], order[b] = b, a
    return order


def transform_pose(pose: Pose, p: AugmentParams, extent: int, flip_pairs=()) -> Pose:
    """Apply the image-space transform to a normalised pose; joints leaving the crop get visibility 0."""
    coords = pose.coords.copy()
    if not p.is_identity:
        uv = coords[:, :2] * extent
        coords[:, :2] = _forward_points(uv, p, extent, extent) / extent
    vis = pose.visibility.copy()
    valid = pose.valid.copy()
    if p.flip:
        order = _swap(pose.n_joints, flip_pairs)
        coords, vis, valid = coords[order], vis[order], valid[order]
    vis = np.minimum(vis, visibility_targets(coords, valid))
    return Pose(coords, vis, valid, pose.label_dim)


def augment(sample, cfg: AugmentationConfig, rng: np.random.Generator, flip_pairs=(), params: AugmentParams | None = None):
    """Augment an (image, Pose) pair or a (frames, SkeletonClip) pair.

    For clips the frames are temporally subsampled (every k-th frame) and the
    same spatial transform is applied to every frame. ``frames`` may be None
    for skeleton-only clips.
    """
    image, target = sample
    if isinstance(target, SkeletonClip):
        extent = image.shape[1] if image is not None else cfg.reference_extent
        p = params or sample_params(cfg, rng, extent)
        k = p.subsample
        poses = [transform_pose(f, p, extent, flip_pairs) for f in target.frames[::k]]
        clip = SkeletonClip(poses, target.action_label, target.dataset_tag, target.fps / k)
        frames = None if image is None else np.stack([warp_image(f, p) for f in image[::k]])
        return frames, clip
    extent = image.shape[1]
    p = params or sample_params(cfg, rng, extent)
    return warp_image(image, p), transform_pose(target, p, extent, flip_pairs)
