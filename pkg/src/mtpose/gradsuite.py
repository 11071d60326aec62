"""Finite-difference checks for every differentiable operation, grouped by module.

Each check builds its own random fixture from the seed, so a run is fully
determined by (seed, directions, h).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .action import ActionConfig, ActionModel, aggregate, action_loss, center_pose_sequence, extract_appearance, max_plus_min_pool, total_action_loss
from .autodiff import directional_errors, parameter_errors
from .layers import ParamSet, SeparableResidual
from .network import NetworkConfig, PoseNetwork
from .softargmax import joint_visibility, probability_map, soft_argmax_1d, soft_argmax_2d
from .volumetric import elastic_net_loss, visibility_loss, volume_to_pose

GROUPS = ("core", "softargmax", "pose", "action")


@dataclass
class CheckResult:
    group: str
    name: str
    max_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tol)


def _normal(rng, *shape):
    return rng.standard_normal(shape)


def _distribution(rng, *shape):
    e = np.exp(rng.standard_normal(shape))
    return e / e.sum(-1, keepdims=True)


def _input_checks(rng) -> list[tuple[str, str, Callable, list]]:
    """(group, name, fn, inputs) for checks over freshly created leaves."""
    r = lambda *s: _normal(rng, *s)  # noqa: E731
    mixed_target = rng.uniform(0, 1, (3, 4, 3))
    mixed_target[0, 1] = np.nan  # invalid joint: never read
    mixed_valid = np.ones((3, 4), bool)
    mixed_valid[0, 1] = False
    label_dims = np.array([3, 2, 3])
    vis_t = (rng.uniform(size=(2, 4)) > 0.5).astype(float)
    labels = np.array([0, 2, 1])
    bn = (rng.uniform(0.5, 1.5, 3), r(3), r(3), rng.uniform(0.5, 2.0, 3))
    return [
        ("core", "add_mul_div", lambda a, b: (a * b + a) / (b * b + 2.0), [r(3, 4), r(3, 4)]),
        ("core", "exp_log_power", lambda a: ad.log(ad.exp(a * 0.5) + 1.0) + ad.power(a * a + 1.0, 1.5), [r(5)]),
        ("core", "abs_clip_sigmoid", lambda a: ad.absolute(a) + ad.clip(a, -0.5, 0.5) + ad.sigmoid(a), [r(6)]),
        ("core", "matmul", lambda a, b: ad.matmul(a, b), [r(2, 3, 4), r(4, 5)]),
        ("core", "softmax", lambda a: ad.softmax(a, (-2, -1)), [r(2, 3, 4)]),
        ("core", "reductions", lambda a: ad.reduce_max(a, 1) + ad.reduce_min(a, 0).sum() + ad.reduce_mean(a, 1), [r(4, 5)]),
        ("core", "shape_ops", lambda a, b: ad.concat([ad.transpose(a, (1, 0)), b], 0)[1:, ::2].reshape(-1), [r(3, 4), r(2, 3)]),
        ("core", "conv2d", lambda x, k: ad.conv2d(x, k, 1, "same"), [r(2, 5, 6, 3), r(3, 3, 3, 4)]),
        ("core", "conv2d_stride2", lambda x, k: ad.conv2d(x, k, 2, "same"), [r(1, 7, 8, 2), r(3, 3, 2, 3)]),
        ("core", "depthwise_conv2d", lambda x, k: ad.depthwise_conv2d(x, k), [r(2, 5, 5, 3), r(3, 3, 3)]),
        ("core", "separable_conv2d", lambda x, d, p: ad.separable_conv2d(x, d, p), [r(2, 5, 5, 3), r(3, 3, 3), r(1, 1, 3, 4)]),
        ("core", "maxpool_upsample", lambda x: ad.upsample2x(ad.maxpool2x(x)), [r(2, 6, 6, 3)]),
        ("core", "batchnorm_inference", lambda x, g, b: ad.batchnorm_inference(x, g, b, bn[2], bn[3]), [r(2, 4, 4, 3), bn[0], bn[1]]),
        (
            "core",
            "conv_stack",
            lambda x, k1, d, p: ad.relu(ad.separable_conv2d(ad.relu(ad.conv2d(x, k1, 2, "same")), d, p)),
            [r(1, 8, 8, 3), r(3, 3, 3, 4), r(3, 3, 4), r(1, 1, 4, 5)],
        ),
        ("softargmax", "probability_map", probability_map, [r(2, 5, 6)]),
        ("softargmax", "soft_argmax_2d", soft_argmax_2d, [2 * r(3, 6, 5)]),
        ("softargmax", "soft_argmax_1d", soft_argmax_1d, [2 * r(4, 7)]),
        ("softargmax", "joint_visibility", joint_visibility, [r(3, 4, 4)]),
        ("pose", "volume_to_pose_coords", lambda v: volume_to_pose(v).coords, [r(2, 3, 4, 4, 4)]),
        ("pose", "volume_to_pose_visibility", lambda v: volume_to_pose(v).visibility, [r(2, 3, 4, 4, 4)]),
        ("pose", "elastic_net_loss", lambda p: elastic_net_loss(p, mixed_target, mixed_valid, label_dims), [rng.uniform(0, 1, (3, 4, 3))]),
        ("pose", "visibility_loss", lambda z: visibility_loss(ad.sigmoid(z), vis_t), [r(2, 4)]),
        ("action", "extract_appearance", extract_appearance, [r(2, 4, 4, 5), _distribution(rng, 2, 4, 4, 3)]),
        ("action", "max_plus_min_pool", max_plus_min_pool, [r(2, 6, 4, 3)]),
        (
            "action",
            "aggregate",
            lambda p, a, w, b: aggregate(p, a, w, b),
            [_distribution(rng, 3, 4), _distribution(rng, 3, 4), r(4, 8), r(4)],
        ),
        ("action", "action_loss", lambda z: action_loss(ad.softmax(z, -1), labels), [r(3, 4)]),
        ("action", "center_pose_sequence", center_pose_sequence, [rng.uniform(0, 1, (2, 5, 4, 2))]),
    ]


def _pose_network_check(seed: int, directions: int, h: float) -> list[tuple[str, str, np.ndarray]]:
    rng = np.random.default_rng(seed)
    cfg = NetworkConfig(n_blocks=2, n_joints=2, n_depth=4, n_features=8, stem_widths=(4, 6), init_std=0.3, seed=seed)
    net = PoseNetwork(cfg)
    img = rng.uniform(0, 1, (1, 32, 32, 3))
    target = rng.uniform(0.2, 0.6, (1, 2, 3))

    def loss():
        out = net(img)
        return sum((elastic_net_loss(b.coords, target) for b in out.blocks[1:]), elastic_net_loss(out.blocks[0].coords, target))

    params = net.params.trainable()
    res = [("pose", "pose_network_params", parameter_errors(loss, params, directions=directions, h=h, seed=seed))]
    ps = ParamSet(seed, 0.3)
    sr = SeparableResidual(ps, "sr", 3, 5)
    res.append(("core", "separable_residual", directional_errors(sr, [rng.standard_normal((1, 6, 6, 3))], directions=directions, h=h, seed=seed)))
    return res


def _action_model_check(seed: int, directions: int, h: float) -> list[tuple[str, str, np.ndarray]]:
    rng = np.random.default_rng(seed)
    model = ActionModel(ActionConfig(n_actions=3, n_blocks=2, n_joints=3, pose_dim=2, n_features=4, width=6, seed=seed))
    seq = rng.uniform(0.2, 0.7, (2, 6, 3, 2))
    app = rng.standard_normal((2, 6, 3, 4))
    labels = np.array([0, 2])
    errs = parameter_errors(lambda: total_action_loss(model(seq, app), labels), model.trainable(), directions=directions, h=h, seed=seed)
    return [("action", "action_model_params", errs)]


def run_suite(groups=GROUPS, seed: int = 1, tol: float = 1e-4, directions: int = 10, h: float = 1e-5) -> list[CheckResult]:
    """Worst directional relative error per check for the selected groups."""
    groups = tuple(groups)
    unknown = set(groups) - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown gradcheck groups: {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    out = []
    for group, name, fn, inputs in _input_checks(rng):
        if group in groups:
            errs = directional_errors(fn, inputs, directions=directions, h=h, seed=seed)
            out.append(CheckResult(group, name, float(errs.max()), tol))
    extra = []
    if "pose" in groups or "core" in groups:
        extra += _pose_network_check(seed, directions, h)
    if "action" in groups:
        extra += _action_model_check(seed, directions, h)
    out += [CheckResult(g, n, float(e.max()), tol) for g, n, e in extra if g in groups]
    return out
