"""Seeded synthetic stand-ins for the image and skeleton datasets.

Images are sums of coloured Gaussian bumps, one per joint, at the target
locations. Action clips are skeletons whose classes differ in which joint
oscillates and along which axis.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from ..volumetric import Pose
from .skeleton import SkeletonClip

# Normalised range for synthetic joints; keeps every target reachable by a
# soft-argmax over an eighth-resolution heat map ((W-1)/W = 0.75 at W = 4).
COORD_RANGE = (0.15, 0.68)


def joint_colors(n_joints: int) -> np.ndarray:
    """Evenly spaced hues, one RGB colour per joint."""
    return np.array([colorsys.hsv_to_rgb(j / n_joints, 1.0, 1.0) for j in range(n_joints)])


def depth_amplitude(z) -> np.ndarray:
    """Bump brightness encoding the (normalised) depth of a joint."""
    return 0.6 + 0.8 * np.asarray(z, dtype=np.float64)


def render_bumps(coords, extent: int, sigma: float = 1.5, amplitudes=None, valid=None, colors=None) -> np.ndarray:
    """Render [H, W, 3] with one Gaussian bump per joint.

    ``coords`` are normalised (x, y[, z]); the bump of joint j is centred on
    pixel (x * extent, y * extent). If ``amplitudes`` is None and coords carry
    z, brightness encodes depth.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    colors = joint_colors(n) if colors is None else colors
    if amplitudes is None:
        amplitudes = depth_amplitude(coords[:, 2]) if coords.shape[1] > 2 else np.ones(n)
    valid = np.ones(n, bool) if valid is None else np.asarray(valid, bool)
    grid = np.arange(extent, dtype=np.float64)
    img = np.zeros((extent, extent, 3))
    for j in range(n):
        if not valid[j]:
            continue
        u, v = coords[j, 0] * extent, coords[j, 1] * extent
        gx = np.exp(-((grid - u) ** 2) / (2 * sigma**2))
        gy = np.exp(-((grid - v) ** 2) / (2 * sigma**2))
        img += amplitudes[j] * np.outer(gy, gx)[:, :, None] * colors[j]
    return img


@dataclass
class PoseDataset:
    images: np.ndarray  # [N, H, W, 3]
    coords: np.ndarray  # [N, J, D] normalised
    valid: np.ndarray  # [N, J]
    head_sizes: np.ndarray  # [N], normalised units
    label_dims: np.ndarray  # [N]

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "PoseDataset":
        idx = np.asarray(idx)
        return PoseDataset(self.images[idx], self.coords[idx], self.valid[idx], self.head_sizes[idx], self.label_dims[idx])

    def poses(self) -> list[Pose]:
        return [Pose(c, valid=v, label_dim=int(d)) for c, v, d in zip(self.coords, self.valid, self.label_dims)]


def synth_pose_dataset(
    seed: int,
    count: int,
    extent: int = 32,
    n_joints: int = 4,
    label_dim: int = 3,
    sigma: float = 1.5,
    noise: float = 0.02,
    head_size: float = 0.2,
) -> PoseDataset:
    """``count`` images of coloured bumps with their joint targets; a pure function of ``seed``."""
    if count <= 0 or extent <= 0 or n_joints <= 0:
        raise ValueError("count, extent and n_joints must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = COORD_RANGE
    xy = rng.uniform(lo, hi, size=(count, n_joints, 2))
    z = rng.uniform(0.15, 0.8, size=(count, n_joints, 1))
    coords = np.concatenate([xy, z], axis=-1)
    images = np.stack([render_bumps(c, extent, sigma) for c in coords])
    images += noise * rng.standard_normal(images.shape)
    if label_dim == 2:
        coords = coords[..., :2]
    return PoseDataset(
        images,
        coords,
        np.ones((count, n_joints), bool),
        np.full(count, head_size),
        np.full(count, label_dim),
    )


def train_test_split(n: int, n_test: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint index sets covering range(n)."""
    if not 0 <= n_test <= n:
        raise ValueError(f"n_test must be in [0, {n}]")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# -- action clips ------------------------------------------------------------------
@dataclass
class ActionDataset:
    clips: list[SkeletonClip]
    features: np.ndarray | None = None  # [N, T, H_f, W_f, N_f]
    prob_maps: np.ndarray | None = None  # [N, T, H_f, W_f, N_J]

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.action_label for c in self.clips])

    def sequences(self, dim: int | None = None) -> np.ndarray:
        """[N, T, J, D] joint coordinates."""
        out = np.stack([np.stack([f.coords for f in c.frames]) for c in self.clips])
        return out if dim is None else out[..., :dim]

    def subset(self, idx) -> "ActionDataset":
        idx = list(np.asarray(idx))
        sel = lambda a: None if a is None else a[np.asarray(idx)]  # noqa: E731
        return ActionDataset([self.clips[i] for i in idx], sel(self.features), sel(self.prob_maps))


def class_motion(label: int, n_joints: int, dim: int) -> tuple[int, int, int]:
    """(moving joint, axis, cycles per clip) that define an action class."""
    joint = label % n_joints
    axis = (label + label // n_joints) % dim
    freq = 1 + label // (n_joints * dim)
    return joint, axis, freq


def gaussian_prob_maps(coords, size: int, sigma: float = 0.6) -> np.ndarray:
    """Per-joint normalised maps [size, size, J] peaked at each joint (cell c sits at c / size)."""
    coords = np.asarray(coords, dtype=np.float64)
    grid = np.arange(size, dtype=np.float64)
    u = coords[:, 0] * size
    v = coords[:, 1] * size
    gx = np.exp(-((grid[None, :] - u[:, None]) ** 2) / (2 * sigma**2))  # [J, W]
    gy = np.exp(-((grid[None, :] - v[:, None]) ** 2) / (2 * sigma**2))  # [J, H]
    m = gy[:, :, None] * gx[:, None, :]  # [J, H, W]
    m /= m.sum(axis=(1, 2), keepdims=True)
    return np.transpose(m, (1, 2, 0))


def synth_action_dataset(
    seed: int,
    n_classes: int = 4,
    clips_per_class: int = 24,
    n_frames: int = 16,
    n_joints: int = 4,
    dim: int = 2,
    clip_length: int | None = None,
    noise: float = 0.006,
    with_features: bool = False,
    feature_size: int = 4,
    n_features: int = 16,
    appearance_strength: float = 3.0,
    appearance_noise: float = 1.0,
    fps: float = 30.0,
    embedding_seed: int = 0,
) -> ActionDataset:
    """Balanced skeleton clips; each class moves one joint along one axis.

    Clips have ``clip_length`` frames (default ``n_frames``) and the motion
    period is ``n_frames / freq``. With ``with_features`` every frame also gets
    a feature map whose cell under joint 0 carries a noisy class embedding,
    and Gaussian probability maps around the joints. The class embeddings
    depend only on ``embedding_seed``, so datasets drawn with different
    seeds share them.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    length = clip_length or n_frames
    t = np.arange(length, dtype=np.float64)
    angles = 2 * np.pi * np.arange(n_joints) / n_joints
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1) * 0.12
    embed = np.random.default_rng(embedding_seed).standard_normal((n_classes, n_features))
    embed /= np.linalg.norm(embed, axis=1, keepdims=True)

    clips, feats, probs = [], [], []
    labels = np.repeat(np.arange(n_classes), clips_per_class)
    for label in labels:
        joint, axis, freq = class_motion(int(label), n_joints, dim)
        base = np.zeros((n_joints, dim))
        base[:, :2] = 0.42 + ring + rng.uniform(-0.04, 0.04, size=2)
        if dim == 3:
            base[:, 2] = 0.45
        seq = np.repeat(base[None], length, axis=0)
        amp = rng.uniform(0.06, 0.1)
        phase = rng.uniform(0, 2 * np.pi)
        seq[:, joint, axis] += amp * np.sin(2 * np.pi * freq * t / n_frames + phase)
        seq += noise * rng.standard_normal(seq.shape)
        frames = [Pose(seq[i]) for i in range(length)]
        clips.append(SkeletonClip(frames, int(label), "synthetic", fps))
        if with_features:
            m = np.stack([gaussian_prob_maps(seq[i], feature_size) for i in range(length)])
            f = appearance_noise * rng.standard_normal((length, feature_size, feature_size, n_features))
            cells = np.clip((seq[:, 0, :2] * feature_size).round().astype(int), 0, feature_size - 1)
            for i in range(length):
                f[i, cells[i, 1], cells[i, 0]] += appearance_strength * embed[label]
            feats.append(f)
            probs.append(m)
    return ActionDataset(
        clips,
        np.stack(feats) if with_features else None,
        np.stack(probs) if with_features else None,
    )


def render_clip(clip: SkeletonClip, extent: int = 32, sigma: float = 1.5, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """Frames [T, H, W, 3] showing the clip's joints as bumps."""
    rng = np.random.default_rng(seed)
    frames = np.stack([render_bumps(f.coords, extent, sigma, valid=f.valid) for f in clip.frames])
    if noise:
        frames += noise * rng.standard_normal(frames.shape)
    return frames
