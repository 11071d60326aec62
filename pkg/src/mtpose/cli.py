"""Command-line harness: gradient checks, toy training, evaluation and prediction.

Exit codes: 0 success, 1 validation failure (failed check, bad file or
config), 2 usage error. Reports go to stdout as CSV; progress goes to stderr.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .data import ClipFormatError, SkeletonClip, read_clip, render_clip, synth_action_dataset, synth_pose_dataset
from .gradsuite import GROUPS, run_suite
from .metrics import EvalReport, accuracy, mpjpe, per_joint_mpjpe, pckh, pckh_auc, reports_to_csv, rows_to_csv
from .spkt import FormatError
from .training import (
    ActionTrainConfig,
    PoseTrainConfig,
    config_meta,
    frames_to_inputs,
    load_multitask,
    load_pose_data,
    load_pose_network,
    load_pose_predictions,
    predict_poses,
    read_clip_dir,
    save_multitask_checkpoint,
    save_pose_checkpoint,
    save_pose_data,
    train_action,
    train_pose,
    windowed_probs,
    write_clip_dir,
)


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _emit(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


# -- subcommands ----------------------------------------------------------------------
def cmd_gradcheck(args) -> int:
    groups = GROUPS if args.module == "all" else (args.module,)
    results = run_suite(groups, seed=args.seed, tol=args.tol)
    rows = [[r.group, r.name, f"{r.max_error:.3e}", "pass" if r.passed else "FAIL"] for r in results]
    _emit(rows_to_csv(["module", "op", "max_rel_error", "status"], rows))
    return 0 if all(r.passed for r in results) else 1


def cmd_make_data(args) -> int:
    if args.kind == "pose":
        ds = synth_pose_dataset(args.seed, args.count, n_joints=args.joints, label_dim=args.label_dim)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        save_pose_data(args.out, ds)
        _log(f"wrote {len(ds)} images to {args.out}")
    else:
        per_class = max(args.count // args.classes, 1)
        ds = synth_action_dataset(args.seed, args.classes, per_class, args.frames, args.joints, args.label_dim, clip_length=args.length)
        paths = write_clip_dir(args.out, ds.clips)
        _log(f"wrote {len(paths)} clips to {args.out}")
    return 0


def cmd_train_pose(args) -> int:
    cfg = PoseTrainConfig.from_flat(load_config(args.config))
    res = train_pose(cfg, log=_log)
    save_pose_checkpoint(args.out, res.net)
    _emit(rows_to_csv(["initial_loss", "final_loss", "steps"], [[res.initial_loss, res.final_loss, str(cfg.steps)]]))
    return 0


def cmd_train_action(args) -> int:
    if args.freeze_pose and args.finetune:
        raise UsageError("--freeze-pose and --finetune are mutually exclusive")
    cfg = ActionTrainConfig.from_flat(load_config(args.config))
    net = load_pose_network(args.pose_ckpt)
    clips = read_clip_dir(args.data) if args.data else None
    res = train_action(cfg, net, clips, do_finetune=not args.freeze_pose, log=_log)
    save_multitask_checkpoint(args.out, res.model, config_meta(cfg))
    rows = [[f"{100 * res.train_accuracy_frozen:.6f}", f"{100 * res.train_accuracy_final:.6f}", str(len(res.frozen_losses)), str(len(res.finetune_losses))]]
    _emit(rows_to_csv(["train_accuracy_frozen", "train_accuracy_final", "frozen_steps", "finetune_steps"], rows))
    return 0


def _pose_reports(pred: np.ndarray, ds) -> list[EvalReport]:
    d = ds.coords.shape[-1]
    pred = pred[..., :d]
    xy_p, xy_g = pred[..., :2], ds.coords[..., :2]
    n = int(ds.valid.sum())
    per_joint = per_joint_mpjpe(pred, ds.coords, ds.valid)
    return [
        EvalReport("pckh@0.5", pckh(xy_p, xy_g, ds.head_sizes, 0.5, ds.valid), n),
        EvalReport("pckh@0.2", pckh(xy_p, xy_g, ds.head_sizes, 0.2, ds.valid), n),
        EvalReport("auc@0.5", pckh_auc(xy_p, xy_g, ds.head_sizes, 0.5, ds.valid), n),
        EvalReport("mpjpe", mpjpe(pred, ds.coords, ds.valid), n, {f"joint{j}": float(v) for j, v in enumerate(per_joint)}),
    ]


def cmd_eval_pose(args) -> int:
    if (args.ckpt is None) == (args.pred is None):
        raise UsageError("eval-pose needs exactly one of --ckpt or --pred")
    ds = load_pose_data(args.data)
    if args.ckpt is not None:
        net = load_pose_network(args.ckpt)
        if ds.images.shape[1] != net.cfg.input_size:
            raise ValueError(f"images are {ds.images.shape[1]} px, the network expects {net.cfg.input_size}")
        pred, _ = predict_poses(net, ds.images)
    else:
        pred, _ = load_pose_predictions(args.pred)
    if pred.shape[:2] != ds.coords.shape[:2]:
        raise ValueError(f"predictions {pred.shape} do not match dataset {ds.coords.shape}")
    _emit(reports_to_csv(_pose_reports(pred, ds)))
    return 0


def _clip_probs(model, clip: SkeletonClip, n_frames: int, multi: bool) -> dict[str, np.ndarray]:
    frames = render_clip(clip, model.pose_net.cfg.input_size)
    if len(frames) < n_frames:
        # short clips are padded by repeating their last frame
        frames = np.concatenate([frames, np.repeat(frames[-1:], n_frames - len(frames), axis=0)])
    seq, app = frames_to_inputs(model, frames[None])
    return {k: v[0] for k, v in windowed_probs(model.action, seq, app, n_frames, multi).items()}


def cmd_eval_action(args) -> int:
    model, meta = load_multitask(args.ckpt)
    n_frames = int(meta.get("train.n_frames", 16))
    clips = read_clip_dir(args.data)
    labels = np.array([c.action_label if c.action_label is not None else -1 for c in clips])
    if np.any(labels < 0):
        raise ValueError("every evaluation clip needs an action label")
    preds = {"pose": [], "appearance": [], "aggregate": []}
    for c in clips:
        p = _clip_probs(model, c, n_frames, args.multi_clip)
        for k in preds:
            preds[k].append(int(np.argmax(p[k])))
    reports = []
    for k, v in preds.items():
        v = np.array(v)
        per_class = {f"class{a}": accuracy(v[labels == a], labels[labels == a]) for a in np.unique(labels)}
        reports.append(EvalReport(f"accuracy_{k}", accuracy(v, labels), len(labels), per_class))
    _emit(reports_to_csv(reports))
    return 0


def cmd_predict(args) -> int:
    model, meta = load_multitask(args.ckpt)
    n_frames = int(meta.get("train.n_frames", 16))
    clip = read_clip(args.clip)
    frames = render_clip(clip, model.pose_net.cfg.input_size)
    coords, vis = predict_poses(model.pose_net, frames)
    n_j = coords.shape[1]
    header = ["record", "index"] + [f"j{j}_{c}" for j in range(n_j) for c in ("x", "y", "z", "vis")] + ["probability"]
    blank = [""] * (4 * n_j)
    rows = []
    for t in range(len(clip)):
        values = [float(v) for j in range(n_j) for v in (*coords[t, j], vis[t, j])]
        rows.append(["pose", str(t), *values, ""])
    probs = _clip_probs(model, clip, n_frames, multi=len(clip) >= 2 * n_frames)["aggregate"]
    rows += [["action", str(a), *blank, float(p)] for a, p in enumerate(probs)]
    _emit(rows_to_csv(header, rows))
    return 0


# -- parser ------------------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtpose", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mtpose {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable op")
    g.add_argument("--module", choices=("all",) + GROUPS, default="all")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("make-data", help="write a synthetic pose dataset or a directory of skeleton clips")
    m.add_argument("kind", choices=("pose", "action"))
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--count", type=int, default=32)
    m.add_argument("--joints", type=int, default=4)
    m.add_argument("--label-dim", type=int, choices=(2, 3), default=2)
    m.add_argument("--classes", type=int, default=4)
    m.add_argument("--frames", type=int, default=16)
    m.add_argument("--length", type=int, default=None, help="clip length (default: --frames)")
    m.set_defaults(func=cmd_make_data)

    tp = sub.add_parser("train-pose", help="train the pose network on synthetic images")
    tp.add_argument("--config", required=True)
    tp.add_argument("--out", required=True)
    tp.set_defaults(func=cmd_train_pose)

    ta = sub.add_parser("train-action", help="train the action streams on top of a pose checkpoint")
    ta.add_argument("--config", required=True)
    ta.add_argument("--pose-ckpt", required=True)
    ta.add_argument("--out", required=True)
    ta.add_argument("--data", default=None, help="directory of labelled .skc clips (default: synthetic)")
    ta.add_argument("--freeze-pose", action="store_true", help="only the frozen-pose phase")
    ta.add_argument("--finetune", action="store_true", help="frozen phase followed by end-to-end fine-tuning (default)")
    ta.set_defaults(func=cmd_train_action)

    ep = sub.add_parser("eval-pose", help="PCKh, AUC and MPJPE report as CSV")
    ep.add_argument("--ckpt", default=None)
    ep.add_argument("--pred", default=None, help="stored predictions instead of a checkpoint")
    ep.add_argument("--data", required=True)
    ep.set_defaults(func=cmd_eval_pose)

    ea = sub.add_parser("eval-action", help="per-stream accuracy report as CSV")
    ea.add_argument("--ckpt", required=True)
    ea.add_argument("--data", required=True)
    ea.add_argument("--multi-clip", action="store_true")
    ea.set_defaults(func=cmd_eval_action)

    pr = sub.add_parser("predict", help="per-frame poses and the action distribution as CSV")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--clip", required=True)
    pr.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"mtpose: usage error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, FormatError, ClipFormatError, ValueError, KeyError, OSError) as e:
        print(f"mtpose: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
