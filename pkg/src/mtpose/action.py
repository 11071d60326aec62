"""Action recognition from pose sequences and probability-map pooled appearance features."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    as_tensor,
    clip,
    concat,
    log,
    matmul,
    no_grad,
    reduce_max,
    reduce_mean,
    reduce_min,
    reduce_sum,
    relu,
    softmax,
    transpose,
)
from .layers import Conv, ParamSet
from .network import PoseNetwork
from .volumetric import Pose

CE_EPS = 1e-7


# -- pose sequence encoding --------------------------------------------------------
def encode_pose_sequence(poses: Sequence[Pose], dim: int | None = None, validity_channel: bool = False, sentinel: float = -1.0) -> np.ndarray:
    """Stack T poses into a [T, N_J, D] image (time rows, joint columns, coordinate channels).

    Invalid joints get ``sentinel`` in every channel; ``validity_channel``
    appends a 0/1 channel.
    """
    if not poses:
        raise ValueError("empty pose sequence")
    shapes = {(p.n_joints, p.dim) for p in poses}
    if len(shapes) != 1:
        raise ValueError(f"ragged pose sequence: {sorted(shapes)}")
    d = poses[0].dim if dim is None else dim
    coords = np.stack([p.coords[:, :d] for p in poses])
    valid = np.stack([p.valid for p in poses])
    out = np.where(valid[..., None], coords, sentinel)
    if validity_channel:
        out = np.concatenate([out, valid[..., None].astype(np.float64)], axis=-1)
    return out


def sequence_from_frames(coords: Tensor, n_frames: int, dim: int) -> Tensor:
    """Differentiable variant: per-frame network coords [B*T, J, 3] -> [B, T, J, dim]."""
    bt, j, _ = coords.shape
    if bt % n_frames:
        raise ShapeError(f"{bt} frames is not a multiple of T={n_frames}")
    return coords[..., :dim].reshape(bt // n_frames, n_frames, j, dim)


def center_pose_sequence(seq, sentinel: float = -1.0) -> Tensor:
    """Subtract each clip's mean coordinate over its valid (time, joint) entries.

    ``seq`` is [B, T, J, D]; a joint is invalid when every channel equals
    ``sentinel``, and invalid entries keep the sentinel. The class signal in
    skeleton motion is the displacement pattern, not where the subject stands,
    so removing the offset makes the stream's first layer far easier to fit.
    Differentiable with respect to the valid coordinates.
    """
    x = as_tensor(seq)
    if x.ndim != 4:
        raise ShapeError(f"center_pose_sequence expects [B,T,J,D], got {x.shape}")
    valid = ~np.all(x.data == sentinel, axis=-1, keepdims=True)
    mask = valid.astype(np.float64)
    count = np.maximum(mask.sum(axis=(1, 2), keepdims=True), 1.0)
    mean = reduce_sum(x * mask, (1, 2), keepdims=True) / count
    return (x - mean) * mask + sentinel * (1.0 - mask)


# -- appearance --------------------------------------------------------------------
def extract_appearance(features, prob_maps) -> Tensor:
    """out[..., j, f] = sum_{h,w} M[..., h, w, j] * F[..., h, w, f].

    ``features`` is [..., H_f, W_f, N_f] and ``prob_maps`` [..., H_f, W_f, N_J].
    """
    f, m = as_tensor(features), as_tensor(prob_maps)
    if f.shape[:-1] != m.shape[:-1]:
        raise ShapeError(f"extract_appearance: spatial extents differ, features {f.shape} vs maps {m.shape}")
    lead = f.shape[:-3]
    hw = f.shape[-3] * f.shape[-2]
    f2 = f.reshape(lead + (hw, f.shape[-1]))
    m2 = m.reshape(lead + (hw, m.shape[-1]))
    nd = len(lead) + 2
    perm = tuple(range(nd - 2)) + (nd - 1, nd - 2)
    return matmul(transpose(m2, perm), f2)


# -- pooling, aggregation, loss -------------------------------------------------------
def max_plus_min(maps) -> Tensor:
    """Per-channel global max + global min over the two axes preceding the channel axis."""
    maps = as_tensor(maps)
    if maps.ndim < 3 or maps.shape[-3] * maps.shape[-2] == 0:
        raise ShapeError(f"max_plus_min needs [..., T, J, N_a] maps, got {maps.shape}")
    return reduce_max(maps, (-3, -2)) + reduce_min(maps, (-3, -2))


def max_plus_min_pool(maps) -> Tensor:
    """Softmax over actions of the max-plus-min pooled action maps."""
    return softmax(max_plus_min(maps), -1)


def aggregate(pose_probs, appearance_probs, weight, bias) -> Tensor:
    """softmax(W . [pose ; appearance] + b); ``weight`` is [N_a, 2 N_a]."""
    p, a = as_tensor(pose_probs), as_tensor(appearance_probs)
    if p.shape != a.shape:
        raise ShapeError(f"aggregate: stream lengths differ, {p.shape} vs {a.shape}")
    x = concat([p, a], axis=-1)
    lead = x.shape[:-1]
    x2 = x.reshape((-1, x.shape[-1]))
    z = matmul(x2, transpose(as_tensor(weight))) + bias
    return softmax(z, -1).reshape(lead + (z.shape[-1],))


def action_loss(pred, labels, eps: float = CE_EPS) -> Tensor:
    """Mean categorical cross-entropy -ln(pred[label]) with pred clamped at ``eps``."""
    pred = as_tensor(pred)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    n_a = pred.shape[-1]
    if np.any(labels < 0) or np.any(labels >= n_a):
        raise ValueError(f"label out of range [0, {n_a})")
    onehot = np.eye(n_a)[labels].reshape(pred.shape)
    picked = clip(reduce_sum(pred * onehot, -1), eps, 1.0)
    return -reduce_mean(log(picked))


def multi_clip_average(probs: Sequence) -> np.ndarray:
    """Mean of per-clip action distributions (renormalised only if it drifted from 1)."""
    if len(probs) == 0:
        raise ValueError("multi_clip_average: no clips")
    arr = np.stack([np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in probs])
    mean = arr.mean(axis=0)
    s = mean.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > 1e-12):
        mean = mean / s
    return mean


def clip_starts(length: int, n_frames: int, multi: bool) -> list[int]:
    """Window starts: the centred clip, or clips spaced n_frames/2 apart."""
    if length < n_frames:
        raise ValueError(f"sequence of {length} frames is shorter than T={n_frames}")
    if not multi:
        return [(length - n_frames) // 2]
    step = max(n_frames // 2, 1)
    return list(range(0, length - n_frames + 1, step))


# -- networks ------------------------------------------------------------------------
@dataclass
class ActionConfig:
    n_actions: int = 4
    n_blocks: int = 4
    n_joints: int = 4
    pose_dim: int = 2
    n_features: int = 64  # appearance input channels (N_f of the pose network)
    width: int = 32  # appearance stream width; the pose stream uses half
    kernel: int = 3
    init_std: float | None = None
    seed: int = 1
    center_poses: bool = True

    def to_meta(self) -> dict[str, str]:
        return {f"action.{k}": str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "ActionConfig":
        kw = {}
        for f in fields(cls):
            raw = meta.get("action." + f.name)
            if raw is None:
                continue
            if f.name == "init_std":
                kw[f.name] = None if raw == "None" else float(raw)
            elif f.name == "center_poses":
                kw[f.name] = raw == "True"
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


@dataclass
class StreamOutput:
    maps: list[Tensor]  # per block, [B, T, J, N_a]
    probs: list[Tensor]  # per block, [B, N_a]

    @property
    def final(self) -> Tensor:
        return self.probs[-1]


class ActionStream:
    """Fully convolutional stack over the (time, joint) plane with K refining blocks.

    Each block emits N_a-channel action maps that are pooled into a
    prediction and re-injected (1x1 projection, additive) into the next block.
    """

    def __init__(self, ps: ParamSet, name: str, cin: int, width: int, n_actions: int, n_blocks: int, kernel: int = 3):
        self.cin = cin
        self.stem = Conv(ps, f"{name}.stem", kernel, cin, width)
        self.blocks = []
        for k in range(n_blocks):
            c1 = Conv(ps, f"{name}.block{k}.c1", kernel, width, width)
            c2 = Conv(ps, f"{name}.block{k}.c2", kernel, width, width)
            head = Conv(ps, f"{name}.block{k}.maps", kernel, width, n_actions)
            back = Conv(ps, f"{name}.block{k}.reinject", 1, n_actions, width) if k < n_blocks - 1 else None
            self.blocks.append((c1, c2, head, back))

    def action_block(self, k: int, x: Tensor) -> tuple[Tensor, Tensor]:
        """One block: returns (action maps, features for the next block)."""
        c1, c2, head, back = self.blocks[k]
        h = relu(c2(relu(c1(x))))
        maps = head(h)
        nxt = x + h + back(maps) if back is not None else x + h
        return maps, nxt

    def __call__(self, seq) -> StreamOutput:
        x = as_tensor(seq)
        if x.ndim != 4 or x.shape[-1] != self.cin:
            raise ShapeError(f"action stream expects [B,T,J,{self.cin}], got {x.shape}")
        x = relu(self.stem(x))
        maps, probs = [], []
        for k in range(len(self.blocks)):
            m, x = self.action_block(k, x)
            maps.append(m)
            probs.append(max_plus_min_pool(m))
        return StreamOutput(maps, probs)


@dataclass
class ActionOutput:
    pose: StreamOutput
    appearance: StreamOutput
    aggregate: Tensor

    def all_predictions(self) -> list[Tensor]:
        return self.pose.probs + self.appearance.probs + [self.aggregate]


class ActionModel:
    def __init__(self, cfg: ActionConfig | None = None, params: ParamSet | None = None, prefix: str = "action."):
        self.cfg = c = cfg or ActionConfig()
        self.params = params or ParamSet(c.seed, c.init_std)
        self.prefix = prefix
        with self.params.scope(c.init_std, c.seed) as ps:
            self.pose_stream = ActionStream(ps, f"{prefix}pose", c.pose_dim, max(c.width // 2, 1), c.n_actions, c.n_blocks, c.kernel)
            self.appearance_stream = ActionStream(ps, f"{prefix}app", c.n_features, c.width, c.n_actions, c.n_blocks, c.kernel)
            self.agg_w = ps.add(f"{prefix}agg.w", (c.n_actions, 2 * c.n_actions), "zeros")
            self.agg_b = ps.add(f"{prefix}agg.b", (c.n_actions,), "zeros")
        self.agg_w.data = np.hstack([np.eye(c.n_actions), np.eye(c.n_actions)]) / 2

    def __call__(self, pose_seq, appearance) -> ActionOutput:
        if self.cfg.center_poses:
            pose_seq = center_pose_sequence(pose_seq)
        p = self.pose_stream(pose_seq)
        a = self.appearance_stream(appearance)
        return ActionOutput(p, a, aggregate(p.final, a.final, self.agg_w, self.agg_b))

    def trainable(self) -> list[Tensor]:
        return [t for n, t in self.params.items() if n.startswith(self.prefix) and t.requires_grad]


def total_action_loss(out: ActionOutput, labels) -> Tensor:
    """Equal-weight cross-entropy over every block of both streams and the aggregate."""
    loss = None
    for pred in out.all_predictions():
        term = action_loss(pred, labels)
        loss = term if loss is None else loss + term
    return loss


# -- full multitask model ---------------------------------------------------------------
class MultitaskModel:
    """Pose network shared by both action streams: frames -> poses, F_t, M_t -> actions."""

    def __init__(self, pose_net: PoseNetwork, action_cfg: ActionConfig):
        self.pose_net = pose_net
        self.params = pose_net.params
        self.action = ActionModel(action_cfg, self.params, prefix="action.")
        self.cfg = action_cfg

    def frame_outputs(self, frames) -> tuple[Tensor, Tensor, Tensor]:
        """frames [B, T, H, W, 3] -> (pose sequence [B,T,J,D], appearance V [B,T,J,N_f], coords [B*T,J,3])."""
        f = as_tensor(frames)
        b, t = f.shape[:2]
        out = self.pose_net(f.reshape((b * t,) + f.shape[2:]))
        coords = out.final.coords
        seq = sequence_from_frames(coords, t, self.cfg.pose_dim)
        v = extract_appearance(out.features, out.prob_maps)
        v = v.reshape((b, t) + v.shape[1:])
        return seq, v, coords

    def cached_inputs(self, frames) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Action-stream inputs with the pose network treated as frozen (no tape)."""
        with no_grad():
            seq, v, coords = self.frame_outputs(frames)
        return seq.data, v.data, coords.data

    def __call__(self, frames) -> tuple[ActionOutput, Tensor]:
        seq, v, coords = self.frame_outputs(frames)
        return self.action(seq, v), coords

    def pose_parameters(self) -> list[Tensor]:
        return [t for n, t in self.params.items() if not n.startswith("action.") and not n.endswith((".mean", ".var"))]

    def action_parameters(self) -> list[Tensor]:
        return self.action.trainable()
