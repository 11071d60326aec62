from .augment import AugmentationConfig, AugmentParams, augment, sample_params, transform_pose, warp_image
from .harness import BBox, FULL_FRAME, estimate_clip_bbox, interleave, key_frame_indices, mixed_batches
from .layout import LayoutMap, merge_layouts
from .skeleton import ClipFormatError, SkeletonClip, format_clip, parse_clip, read_clip, write_clip
from .synthetic import (
    ActionDataset,
    PoseDataset,
    class_motion,
    gaussian_prob_maps,
    joint_colors,
    render_bumps,
    render_clip,
    synth_action_dataset,
    synth_pose_dataset,
    train_test_split,
)

__all__ = [
    "ActionDataset",
    "AugmentParams",
    "AugmentationConfig",
    "BBox",
    "ClipFormatError",
    "FULL_FRAME",
    "LayoutMap",
    "PoseDataset",
    "SkeletonClip",
    "augment",
    "class_motion",
    "estimate_clip_bbox",
    "format_clip",
    "gaussian_prob_maps",
    "interleave",
    "joint_colors",
    "key_frame_indices",
    "merge_layouts",
    "mixed_batches",
    "parse_clip",
    "read_clip",
    "render_bumps",
    "render_clip",
    "sample_params",
    "synth_action_dataset",
    "synth_pose_dataset",
    "train_test_split",
    "transform_pose",
    "warp_image",
    "write_clip",
]
