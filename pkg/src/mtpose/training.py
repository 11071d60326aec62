"""Toy training loops, checkpoint plumbing and dataset files shared by the CLI and tests."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .action import ActionConfig, ActionModel, MultitaskModel, clip_starts, extract_appearance, multi_clip_average, total_action_loss
from .autodiff import backward, no_grad
from .data import ActionDataset, PoseDataset, SkeletonClip, read_clip, render_clip, synth_action_dataset, synth_pose_dataset, write_clip
from .layers import ParamSet
from .network import NetworkConfig, PoseNetwork
from .optim import PlateauScheduler, RMSProp, SGDNesterov
from .spkt import FormatError, load_checkpoint, save_checkpoint
from .volumetric import elastic_net_loss, visibility_loss, visibility_targets

Logger = Callable[[str], None]


def _from_flat(cls, cfg: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}; known keys: {', '.join(sorted(known))}")
    kw = {}
    for f in fields(cls):
        if f.name not in cfg:
            continue
        v, default = cfg[f.name], getattr(cls, f.name, None)
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ValueError(f"{f.name} must be true or false")
        elif isinstance(default, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValueError(f"{f.name} must be an integer, got {v!r}")
        elif isinstance(default, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValueError(f"{f.name} must be a number, got {v!r}")
            v = float(v)
        elif isinstance(default, str) and not isinstance(v, str):
            v = str(v)
        kw[f.name] = v
    return cls(**kw)


def _make_optimizer(kind: str, params, lr: float, momentum: float = 0.98):
    if kind == "rmsprop":
        return RMSProp(params, lr)
    if kind == "sgd_nesterov":
        return SGDNesterov(params, lr, momentum)
    raise ValueError(f"unknown optimizer {kind!r}")


# -- pose ------------------------------------------------------------------------------
@dataclass
class PoseTrainConfig:
    seed: int = 0  # weight initialisation
    data_seed: int = 1
    n_images: int = 16
    n_joints: int = 4
    n_blocks: int = 2
    n_depth: int = 16
    n_features: int = 64
    input_size: int = 32
    label_dim: int = 2
    steps: int = 300
    optimizer: str = "rmsprop"
    lr: float = 0.01
    patience: int = 15
    batch_size: int = 16
    visibility_weight: float = 0.0
    log_every: int = 0

    @classmethod
    def from_flat(cls, cfg: dict) -> "PoseTrainConfig":
        return _from_flat(cls, cfg)

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            n_blocks=self.n_blocks,
            n_joints=self.n_joints,
            n_depth=self.n_depth,
            n_features=self.n_features,
            input_size=self.input_size,
            seed=self.seed,
        )

    def dataset(self) -> PoseDataset:
        return synth_pose_dataset(self.data_seed, self.n_images, self.input_size, self.n_joints, self.label_dim)


@dataclass
class PoseTrainResult:
    net: PoseNetwork
    losses: list[float] = field(default_factory=list)  # final-block loss before each step

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def pose_training_loss(net: PoseNetwork, ds: PoseDataset, idx=None, visibility_weight: float = 0.0):
    """Sum of per-block elastic-net losses (plus optional visibility BCE); returns (loss, final-block loss)."""
    if idx is not None:
        ds = ds.subset(idx)
    out = net(ds.images)
    label_dims = ds.label_dims
    total = None
    for blk in out.blocks:
        term = elastic_net_loss(blk.coords, ds.coords, ds.valid, label_dims)
        if visibility_weight:
            term = term + visibility_weight * visibility_loss(blk.visibility, visibility_targets(ds.coords, ds.valid))
        total = term if total is None else total + term
    final = elastic_net_loss(out.final.coords, ds.coords, ds.valid, label_dims).item()
    return total, final


def train_pose(cfg: PoseTrainConfig, data: PoseDataset | None = None, log: Logger | None = None) -> PoseTrainResult:
    """Fit the pose network; the learning rate drops on training-loss plateaus."""
    ds = data if data is not None else cfg.dataset()
    net = PoseNetwork(cfg.network_config())
    opt = _make_optimizer(cfg.optimizer, net.params.trainable(), cfg.lr)
    sched = PlateauScheduler(cfg.lr, patience=cfg.patience, mode="min")
    rng = np.random.default_rng(cfg.seed)
    full = cfg.batch_size >= len(ds)
    res = PoseTrainResult(net)
    for step in range(cfg.steps):
        idx = None if full else np.sort(rng.choice(len(ds), cfg.batch_size, replace=False))
        loss, final = pose_training_loss(net, ds, idx, cfg.visibility_weight)
        res.losses.append(final)
        backward(loss)
        opt.lr = sched.step(loss.item())
        opt.step()
        if log and cfg.log_every and step % cfg.log_every == 0:
            log(f"step {step} loss {final:.6f} lr {opt.lr:.2e}")
    with no_grad():
        res.losses.append(pose_training_loss(net, ds)[1])
    return res


def predict_poses(net: PoseNetwork, images, chunk: int = 64):
    """(coords [N, J, 3], visibility [N, J]) from the last block, without a tape."""
    coords, vis = [], []
    with no_grad():
        for i in range(0, len(images), chunk):
            out = net(images[i : i + chunk])
            coords.append(out.final.coords.data)
            vis.append(out.final.visibility.data)
    return np.concatenate(coords), np.concatenate(vis)


# -- checkpoints -------------------------------------------------------------------------
def save_pose_checkpoint(path, net: PoseNetwork) -> None:
    save_checkpoint(path, net.params.state(), {"kind": "pose", **net.cfg.to_meta()})


def load_pose_network(path) -> PoseNetwork:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") not in ("pose", "multitask"):
        raise FormatError(f"{path}: not a pose or multitask checkpoint")
    net = PoseNetwork(NetworkConfig.from_meta(meta))
    net.params.load_state({k: v for k, v in tensors.items() if not k.startswith("action.")})
    return net


def save_multitask_checkpoint(path, model: MultitaskModel, extra: dict[str, str] | None = None) -> None:
    meta = {"kind": "multitask", **model.pose_net.cfg.to_meta(), **model.cfg.to_meta(), **(extra or {})}
    save_checkpoint(path, model.params.state(), meta)


def load_multitask(path) -> tuple[MultitaskModel, dict[str, str]]:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "multitask":
        raise FormatError(f"{path}: not a multitask checkpoint")
    net = PoseNetwork(NetworkConfig.from_meta(meta))
    model = MultitaskModel(net, ActionConfig.from_meta(meta))
    model.params.load_state(tensors)
    return model, meta


# -- dataset files -------------------------------------------------------------------------
def save_pose_data(path, ds: PoseDataset) -> None:
    tensors = {
        "images": ds.images,
        "coords": ds.coords,
        "valid": ds.valid.astype(np.float64),
        "head_sizes": ds.head_sizes,
        "label_dims": ds.label_dims.astype(np.float64),
    }
    save_checkpoint(path, tensors, {"kind": "pose-data"})


def load_pose_data(path) -> PoseDataset:
    t, meta = load_checkpoint(path)
    if meta.get("kind") != "pose-data":
        raise FormatError(f"{path}: not a pose dataset file")
    return PoseDataset(t["images"], t["coords"], t["valid"] > 0.5, t["head_sizes"], t["label_dims"].astype(int))


def save_pose_predictions(path, coords, visibility) -> None:
    save_checkpoint(path, {"coords": np.asarray(coords, float), "visibility": np.asarray(visibility, float)}, {"kind": "pose-predictions"})


def load_pose_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    t, meta = load_checkpoint(path)
    if meta.get("kind") != "pose-predictions":
        raise FormatError(f"{path}: not a pose prediction file")
    return t["coords"], t["visibility"]


def write_clip_dir(directory, clips: list[SkeletonClip]) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, c in enumerate(clips):
        p = d / f"clip{i:04d}.skc"
        write_clip(p, c)
        paths.append(p)
    return paths


def read_clip_dir(directory) -> list[SkeletonClip]:
    paths = sorted(Path(directory).glob("*.skc"))
    if not paths:
        raise FileNotFoundError(f"no .skc clips in {directory}")
    return [read_clip(p) for p in paths]


# -- action ---------------------------------------------------------------------------------
@dataclass
class ActionTrainConfig:
    seed: int = 1  # action weight initialisation
    data_seed: int = 10
    n_classes: int = 4
    clips_per_class: int = 16
    n_frames: int = 16
    n_joints: int = 4
    pose_dim: int = 2
    n_blocks: int = 4
    width: int = 32
    steps: int = 500
    optimizer: str = "rmsprop"
    lr: float = 1e-3
    patience: int = 15
    batch_size: int = 8
    finetune_steps: int = 40
    finetune_lr_divisor: float = 10.0
    finetune_batch_size: int = 2
    render_noise: float = 0.02
    log_every: int = 0

    @classmethod
    def from_flat(cls, cfg: dict) -> "ActionTrainConfig":
        return _from_flat(cls, cfg)

    def action_config(self, n_features: int) -> ActionConfig:
        return ActionConfig(
            n_actions=self.n_classes,
            n_blocks=self.n_blocks,
            n_joints=self.n_joints,
            pose_dim=self.pose_dim,
            n_features=n_features,
            width=self.width,
            seed=self.seed,
        )

    def dataset(self, seed: int | None = None, clips_per_class: int | None = None, clip_length: int | None = None, **kw) -> ActionDataset:
        return synth_action_dataset(
            self.data_seed if seed is None else seed,
            n_classes=self.n_classes,
            clips_per_class=clips_per_class or self.clips_per_class,
            n_frames=self.n_frames,
            n_joints=self.n_joints,
            dim=self.pose_dim,
            clip_length=clip_length,
            **kw,
        )


def fit_action(
    model: ActionModel,
    seq: np.ndarray,
    appearance: np.ndarray,
    labels: np.ndarray,
    cfg: ActionTrainConfig,
    log: Logger | None = None,
) -> list[float]:
    """Train both streams and the aggregator on fixed inputs; returns per-step losses."""
    opt = _make_optimizer(cfg.optimizer, model.trainable(), cfg.lr)
    sched = PlateauScheduler(cfg.lr, patience=cfg.patience, mode="min")
    rng = np.random.default_rng(cfg.seed)
    n = len(labels)
    bs = min(cfg.batch_size, n)
    losses = []
    for step in range(cfg.steps):
        idx = rng.choice(n, bs, replace=False)
        loss = total_action_loss(model(seq[idx], appearance[idx]), labels[idx])
        losses.append(loss.item())
        backward(loss)
        opt.lr = sched.step(loss.item())
        opt.step()
        if log and cfg.log_every and step % cfg.log_every == 0:
            log(f"step {step} loss {losses[-1]:.6f} lr {opt.lr:.2e}")
    return losses


def action_probs(model: ActionModel, seq, appearance, chunk: int = 64) -> dict[str, np.ndarray]:
    """Final pose-stream, appearance-stream and aggregate distributions, without a tape."""
    parts: dict[str, list] = {"pose": [], "appearance": [], "aggregate": []}
    with no_grad():
        for i in range(0, len(seq), chunk):
            out = model(seq[i : i + chunk], appearance[i : i + chunk])
            parts["pose"].append(out.pose.final.data)
            parts["appearance"].append(out.appearance.final.data)
            parts["aggregate"].append(out.aggregate.data)
    return {k: np.concatenate(v) for k, v in parts.items()}


def windowed_probs(model: ActionModel, seq, appearance, n_frames: int, multi: bool) -> dict[str, np.ndarray]:
    """Per-clip distributions from the centred window or the average over T/2-spaced windows."""
    starts = clip_starts(seq.shape[1], n_frames, multi)
    per = [action_probs(model, seq[:, s : s + n_frames], appearance[:, s : s + n_frames]) for s in starts]
    return {k: np.stack([multi_clip_average([p[k][i] for p in per]) for i in range(len(seq))]) for k in per[0]}


def skeleton_inputs(ds: ActionDataset, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Pose sequences and appearance features straight from a synthetic dataset with features."""
    if ds.features is None:
        raise ValueError("dataset has no feature maps")
    return ds.sequences(dim), extract_appearance(ds.features, ds.prob_maps).data


def render_clips(clips: list[SkeletonClip], extent: int, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """[N, T, H, W, 3] frames; every clip must have the same length."""
    lengths = {len(c) for c in clips}
    if len(lengths) != 1:
        raise ValueError(f"clips differ in length: {sorted(lengths)}")
    return np.stack([render_clip(c, extent, noise=noise, seed=seed + i) for i, c in enumerate(clips)])


def frames_to_inputs(model: MultitaskModel, frames: np.ndarray, chunk: int = 4) -> tuple[np.ndarray, np.ndarray]:
    seqs, apps = [], []
    for i in range(0, len(frames), chunk):
        s, v, _ = model.cached_inputs(frames[i : i + chunk])
        seqs.append(s)
        apps.append(v)
    return np.concatenate(seqs), np.concatenate(apps)


def finetune(model: MultitaskModel, frames: np.ndarray, labels: np.ndarray, cfg: ActionTrainConfig, log: Logger | None = None) -> list[float]:
    """End-to-end steps through the pose network at the reduced rate."""
    params = model.pose_parameters() + model.action_parameters()
    for p in params:
        p.requires_grad = True
    opt = _make_optimizer(cfg.optimizer, params, cfg.lr / cfg.finetune_lr_divisor)
    rng = np.random.default_rng(cfg.seed + 1)
    bs = min(cfg.finetune_batch_size, len(labels))
    losses = []
    for step in range(cfg.finetune_steps):
        idx = np.sort(rng.choice(len(labels), bs, replace=False))
        out, _ = model(frames[idx])
        loss = total_action_loss(out, labels[idx])
        losses.append(loss.item())
        backward(loss)
        opt.step()
        if log and cfg.log_every and step % cfg.log_every == 0:
            log(f"finetune step {step} loss {losses[-1]:.6f}")
    return losses


@dataclass
class ActionTrainResult:
    model: MultitaskModel
    frozen_losses: list[float]
    finetune_losses: list[float]
    train_accuracy_frozen: float
    train_accuracy_final: float


def train_action(
    cfg: ActionTrainConfig,
    pose_net: PoseNetwork,
    clips: list[SkeletonClip] | None = None,
    do_finetune: bool = True,
    log: Logger | None = None,
) -> ActionTrainResult:
    """Frozen-pose training on cached network outputs, then optional end-to-end fine-tuning."""
    if clips is None:
        clips = cfg.dataset().clips
    labels = np.array([c.action_label for c in clips])
    if np.any(labels == None):  # noqa: E711
        raise ValueError("training clips need action labels")
    labels = labels.astype(int)
    if clips[0].n_joints != pose_net.cfg.n_joints:
        raise ValueError(f"clips have {clips[0].n_joints} joints, the pose network predicts {pose_net.cfg.n_joints}")
    model = MultitaskModel(pose_net, cfg.action_config(pose_net.cfg.n_features))
    frames = render_clips(clips, pose_net.cfg.input_size, cfg.render_noise, cfg.data_seed)
    seq, app = frames_to_inputs(model, frames)
    frozen = fit_action(model.action, seq, app, labels, cfg, log)
    acc0 = float((action_probs(model.action, seq, app)["aggregate"].argmax(-1) == labels).mean())
    ft: list[float] = []
    acc1 = acc0
    if do_finetune and cfg.finetune_steps > 0:
        ft = finetune(model, frames, labels, cfg, log)
        seq, app = frames_to_inputs(model, frames)
        acc1 = float((action_probs(model.action, seq, app)["aggregate"].argmax(-1) == labels).mean())
    return ActionTrainResult(model, frozen, ft, acc0, acc1)


def config_meta(cfg) -> dict[str, str]:
    return {f"train.{k}": str(v) for k, v in asdict(cfg).items()}
