"""Differentiable heat map to coordinate conversion.

Coordinates are normalised: a map of width W puts column ``c`` at ``c / W``,
so the reachable range along x is ``[0, (W - 1) / W]``. Multiply by the
extent to get pixels. All functions operate on the trailing axes and
broadcast over any leading (batch, joint) axes.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor, reduce_max, reduce_sum, sigmoid, softmax, stack


class NonFiniteError(ValueError):
    pass


def _finite(h: Tensor, what: str) -> Tensor:
    h = as_tensor(h)
    if not np.all(np.isfinite(h.data)):
        raise NonFiniteError(f"{what}: input contains NaN or Inf")
    return h


def probability_map(h) -> Tensor:
    """Softmax over the two trailing (row, column) axes."""
    h = _finite(h, "probability_map")
    if h.ndim < 2:
        raise ValueError(f"probability_map needs a [..., H, W] input, got shape {h.shape}")
    return softmax(h, (-2, -1))


def expectation_2d(prob: Tensor) -> Tensor:
    """(x, y) expectation of a normalised [..., H, W] map; returns [..., 2]."""
    rows, cols = prob.shape[-2:]
    cgrid = np.arange(cols, dtype=np.float64)[None, :] / cols
    lgrid = np.arange(rows, dtype=np.float64)[:, None] / rows
    x = reduce_sum(prob * cgrid, (-2, -1))
    y = reduce_sum(prob * lgrid, (-2, -1))
    return stack([x, y], axis=-1)


def soft_argmax_2d(h) -> Tensor:
    """Expected (x, y) of the softmax-normalised heat map ``h[..., H, W]``."""
    return expectation_2d(probability_map(h))


def soft_argmax_1d(v) -> Tensor:
    """Expected index / N of softmax(v) over the trailing axis."""
    v = _finite(v, "soft_argmax_1d")
    n = v.shape[-1]
    if n < 1:
        raise ValueError("soft_argmax_1d needs at least one bin")
    grid = np.arange(n, dtype=np.float64) / n
    return reduce_sum(softmax(v, -1) * grid, -1)


def joint_visibility(h) -> Tensor:
    """Sigmoid of the heat map maximum (gradient reaches the first argmax only)."""
    h = _finite(h, "joint_visibility")
    return sigmoid(reduce_max(h, (-2, -1)))
