"""Differentiable multitask pose estimation and action recognition at toy scale."""

__version__ = "0.1.0"
