"""Volumetric 2D/3D pose head and its losses.

A joint is predicted from a stack of ``N_d`` depth-sliced heat maps. The
(x, y) estimate is the soft-argmax of the depth-averaged logits and z is the
1-D soft-argmax of the spatially averaged logits. Averaging happens on the
raw logits, before any softmax.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, as_tensor, backward, clip, concat, log, reduce_max, reduce_mean, reduce_sum, sigmoid
from .softargmax import _finite, expectation_2d, probability_map, soft_argmax_1d

BCE_EPS = 1e-7


@dataclass
class Pose:
    """One skeleton in normalised units: coords [N_J, D] with D in {2, 3}."""

    coords: np.ndarray
    visibility: np.ndarray | None = None
    valid: np.ndarray | None = None
    label_dim: int | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] not in (2, 3):
            raise ValueError(f"pose coords must be [N_J, 2|3], got {self.coords.shape}")
        n = self.coords.shape[0]
        if self.valid is None:
            self.valid = np.isfinite(self.coords).all(axis=1)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(n)
        if self.visibility is None:
            self.visibility = self.valid.astype(np.float64)
        self.visibility = np.asarray(self.visibility, dtype=np.float64).reshape(n)
        if self.label_dim is None:
            self.label_dim = self.coords.shape[1]
        if self.label_dim not in (2, 3) or self.label_dim > self.coords.shape[1]:
            raise ValueError(f"label_dim {self.label_dim} incompatible with coords {self.coords.shape}")

    @property
    def n_joints(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


@dataclass
class PoseOutput:
    """Differentiable head output for a batch: coords [..., J, 3], visibility [..., J],
    prob_maps [..., J, H, W] (the depth-averaged 2D probability maps)."""

    coords: Tensor
    visibility: Tensor
    prob_maps: Tensor
    logits_2d: Tensor = field(repr=False)
    logits_depth: Tensor = field(repr=False)


def volume_to_pose(vol) -> PoseOutput:
    """Read a pose out of volumetric heat maps ``vol[..., J, N_d, H, W]``."""
    vol = _finite(vol, "volume_to_pose")
    if vol.ndim < 4:
        raise ValueError(f"volume must be [..., J, N_d, H, W], got shape {vol.shape}")
    logits_2d = reduce_mean(vol, -3)
    logits_depth = reduce_mean(vol, (-2, -1))
    prob = probability_map(logits_2d)
    xy = expectation_2d(prob)
    z = soft_argmax_1d(logits_depth)
    coords = concat([xy, z.reshape(z.shape + (1,))], axis=-1)
    vis = sigmoid(reduce_max(logits_2d, (-2, -1)))
    return PoseOutput(coords, vis, prob, logits_2d, logits_depth)


def _coord_mask(shape: tuple[int, ...], valid, label_dims) -> np.ndarray:
    """Boolean [..., J, D] mask of supervised coordinates."""
    lead, d = shape[:-1], shape[-1]
    valid = np.ones(lead, dtype=bool) if valid is None else np.broadcast_to(np.asarray(valid, dtype=bool), lead)
    dims = np.arange(d)
    if label_dims is None:
        dim_ok = np.ones(lead + (d,), dtype=bool)
    else:
        ld = np.asarray(label_dims).reshape(np.shape(label_dims) + (1,) * (len(lead) - np.ndim(label_dims)))
        dim_ok = dims < ld[..., None]
    return valid[..., None] & dim_ok


def elastic_net_loss(pred, target, valid=None, label_dims=None, reduction: str = "mean") -> Tensor:
    """Per-joint L1 + squared L2 error averaged over valid joints.

    ``pred`` is [..., J, D]; ``target`` matches it (a 2-column target against a
    3-column prediction supervises x, y only). ``label_dims`` gives 2 or 3 per
    sample (or one value); coordinates beyond it carry no supervision and
    receive exactly zero gradient. Invalid targets are never read, so they may
    hold NaN. ``reduction`` is applied over leading sample axes: "mean", "sum"
    or "none".
    """
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    d = pred.shape[-1]
    if target.shape[-1] < d:
        pad = np.zeros(target.shape[:-1] + (d - target.shape[-1],))
        target = np.concatenate([target, pad], axis=-1)
        if label_dims is None:
            label_dims = 2
    if target.shape != pred.shape:
        raise ValueError(f"target shape {target.shape} does not match prediction {pred.shape}")
    mask = _coord_mask(pred.shape, valid, label_dims)
    joint_valid = mask.any(axis=-1)
    counts = joint_valid.sum(axis=-1)
    if np.any(counts == 0):
        raise ValueError("elastic_net_loss: a sample has zero valid joints")
    clean = np.where(mask, target, 0.0)
    delta = (pred - clean) * mask
    per_joint = reduce_sum(delta.abs(), -1) + reduce_sum(delta * delta, -1)
    per_sample = reduce_sum(per_joint, -1) / counts.astype(np.float64)
    return _reduce(per_sample, reduction)


def _reduce(t: Tensor, reduction: str) -> Tensor:
    if reduction == "none":
        return t
    if reduction == "sum":
        return reduce_sum(t)
    if reduction == "mean":
        return reduce_mean(t)
    raise ValueError(f"unknown reduction {reduction!r}")


def visibility_loss(pred, target, valid=None, eps: float = BCE_EPS) -> Tensor:
    """Binary cross-entropy averaged over valid joints; predictions are clamped to [eps, 1-eps]."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    mask = np.ones(pred.shape, dtype=bool) if valid is None else np.broadcast_to(np.asarray(valid, bool), pred.shape)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("visibility_loss: zero valid joints")
    t = np.where(mask, target, 0.0)
    p = clip(pred, eps, 1.0 - eps)
    ll = log(p) * t + log(1.0 - p) * (1.0 - t)
    return -reduce_sum(ll * mask) / n


def visibility_targets(coords, valid=None) -> np.ndarray:
    """1 where a normalised (x, y) lies inside the crop [0, 1)^2, else 0."""
    c = np.asarray(coords, dtype=np.float64)[..., :2]
    with np.errstate(invalid="ignore"):
        inside = np.all((c >= 0.0) & (c < 1.0), axis=-1)
    if valid is not None:
        inside &= np.asarray(valid, bool)
    return inside.astype(np.float64)


def masked_backward(coords: Tensor, target, valid=None, label_dims=None) -> dict[Tensor, np.ndarray]:
    """Backward pass of the summed elastic-net loss over a mixed 2D/3D batch.

    Samples with ``label_dims == 2`` contribute no gradient at all to the z
    coordinate (exact zeros), so nothing upstream of the depth readout is
    touched by them.
    """
    return backward(elastic_net_loss(coords, target, valid, label_dims, reduction="sum"))


# -- multi-crop test-time averaging ----------------------------------------------
@dataclass
class CropPrediction:
    """A pose predicted inside a crop.

    ``box`` is (x0, y0, w, h) of the crop in the common frame (normalised);
    ``extent`` is the crop width in pixels, which fixes the mirror
    convention x -> (extent - 1) / extent - x for flipped crops.
    """

    pose: Pose
    box: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    flipped: bool = False
    extent: int = 32


def flip_pose(pose: Pose, extent: int, flip_pairs: Sequence[tuple[int, int]] = ()) -> Pose:
    """Horizontal mirror in normalised crop coordinates, swapping left/right joints."""
    coords = pose.coords.copy()
    coords[:, 0] = (extent - 1) / extent - coords[:, 0]
    order = np.arange(pose.n_joints)
    for a, b in flip_pairs:
        order[a], order[b] = b, a
    return Pose(coords[order], pose.visibility[order], pose.valid[order], pose.label_dim)


def to_crop(pose: Pose, box, flipped: bool = False, extent: int = 32, flip_pairs=()) -> Pose:
    """Map a common-frame pose into crop coordinates (inverse of the averaging transform)."""
    x0, y0, w, h = box
    coords = pose.coords.copy()
    coords[:, 0] = (coords[:, 0] - x0) / w
    coords[:, 1] = (coords[:, 1] - y0) / h
    out = Pose(coords, pose.visibility.copy(), pose.valid.copy(), pose.label_dim)
    return flip_pose(out, extent, flip_pairs) if flipped else out


def from_crop(pred: CropPrediction, flip_pairs=()) -> Pose:
    pose = flip_pose(pred.pose, pred.extent, flip_pairs) if pred.flipped else pred.pose
    x0, y0, w, h = pred.box
    coords = pose.coords.copy()
    coords[:, 0] = x0 + coords[:, 0] * w
    coords[:, 1] = y0 + coords[:, 1] * h
    return Pose(coords, pose.visibility.copy(), pose.valid.copy(), pose.label_dim)


def multi_crop_average(preds: Sequence[CropPrediction], flip_pairs=()) -> Pose:
    """Undo each crop (and flip) and average per joint over the valid entries."""
    if not preds:
        raise ValueError("multi_crop_average: empty prediction list")
    if len(preds) == 1 and not preds[0].flipped and tuple(preds[0].box) == (0.0, 0.0, 1.0, 1.0):
        return preds[0].pose
    poses = [from_crop(p, flip_pairs) for p in preds]
    coords = np.stack([p.coords for p in poses])
    valid = np.stack([p.valid for p in poses])
    vis = np.stack([p.visibility for p in poses])
    counts = valid.sum(axis=0)
    summed = np.where(valid[..., None], coords, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = summed / counts[:, None]
        vis_mean = np.where(valid, vis, 0.0).sum(axis=0) / counts
    ok = counts > 0
    mean[~ok] = np.nan
    vis_mean[~ok] = 0.0
    return Pose(mean, vis_mean, ok, min(p.label_dim for p in poses))
