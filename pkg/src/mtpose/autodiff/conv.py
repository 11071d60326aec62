"""Spatial ops on NHWC tensors: convolutions, pooling, resampling, batch norm."""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor

PADDINGS = ("same", "valid")


def _geometry(n: int, size: int, stride: int, padding: str) -> tuple[int, int, int]:
    """(pad_before, pad_after, out_extent) along one spatial axis."""
    if padding == "valid":
        if n < size:
            raise ShapeError(f"valid convolution: extent {n} smaller than kernel {size}")
        return 0, 0, (n - size) // stride + 1
    if padding == "same":
        out = -(-n // stride)
        total = max((out - 1) * stride + size - n, 0)
        return total // 2, total - total // 2, out
    raise ValueError(f"padding must be one of {PADDINGS}, got {padding!r}")


def _check_input(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: input must be [B,H,W,C], got rank {x.ndim}")


def _prepare(x: np.ndarray, size: int, stride: int, padding: str):
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if size % 2 != 1:
        raise ShapeError(f"kernel extent must be odd, got {size}")
    _, h, w, _ = x.shape
    pt, pb, ho = _geometry(h, size, stride, padding)
    pl, pr, wo = _geometry(w, size, stride, padding)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt or pb or pl or pr else x
    return xp, (pt, pl), (ho, wo)


def _window(xp: np.ndarray, i: int, j: int, ho: int, wo: int, stride: int) -> np.ndarray:
    return xp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :]


def conv2d(x, kernel, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of x[B,H,W,Cin] with kernel[S,S,Cin,Cout].

    "same" zero-pads so the output extent is ceil(H/stride).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_input(x, "conv2d")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be [S,S,Cin,Cout], got rank {kernel.ndim}")
    s, s2, cin, cout = kernel.shape
    if s != s2:
        raise ShapeError(f"conv2d: kernel must be square, got {s}x{s2}")
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input channels (dim 3) = {x.shape[3]} but kernel Cin (dim 2) = {cin}")
    k = kernel.data
    xp, (pt, pl), (ho, wo) = _prepare(x.data, s, stride, padding)
    b = xp.shape[0]

    if s == 1 and stride == 1:
        flat = xp.reshape(-1, cin)
        out = (flat @ k[0, 0]).reshape(b, ho, wo, cout)

        def bw(g):
            g2 = g.reshape(-1, cout)
            return (g2 @ k[0, 0].T).reshape(xp.shape), (flat.T @ g2)[None, None]

        return Tensor._from_op(out, (x, kernel), bw)

    out = np.zeros((b, ho, wo, cout))
    for i in range(s):
        for j in range(s):
            out += _window(xp, i, j, ho, wo, stride) @ k[i, j]
    h, w = x.shape[1:3]

    def bw(g):
        gk = np.empty_like(k)
        gxp = np.zeros(xp.shape)
        g2 = g.reshape(-1, cout)
        for i in range(s):
            for j in range(s):
                win = _window(xp, i, j, ho, wo, stride)
                gk[i, j] = win.reshape(-1, cin).T @ g2
                _window(gxp, i, j, ho, wo, stride)[...] += g @ k[i, j].T
        return gxp[:, pt : pt + h, pl : pl + w, :], gk

    return Tensor._from_op(out, (x, kernel), bw)


def depthwise_conv2d(x, kernel, stride: int = 1, padding: str = "same") -> Tensor:
    """Per-channel spatial filtering: x[B,H,W,C] with kernel[S,S,C]."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_input(x, "depthwise_conv2d")
    if kernel.ndim != 3:
        raise ShapeError(f"depthwise_conv2d: kernel must be [S,S,C], got rank {kernel.ndim}")
    s, s2, c = kernel.shape
    if s != s2:
        raise ShapeError(f"depthwise_conv2d: kernel must be square, got {s}x{s2}")
    if x.shape[3] != c:
        raise ShapeError(
            f"depthwise_conv2d: input channels (dim 3) = {x.shape[3]} but kernel has {c} filters (dim 2)"
        )
    k = kernel.data
    xp, (pt, pl), (ho, wo) = _prepare(x.data, s, stride, padding)
    out = np.zeros((xp.shape[0], ho, wo, c))
    for i in range(s):
        for j in range(s):
            out += _window(xp, i, j, ho, wo, stride) * k[i, j]
    h, w = x.shape[1:3]

    def bw(g):
        gk = np.empty_like(k)
        gxp = np.zeros(xp.shape)
        for i in range(s):
            for j in range(s):
                gk[i, j] = (_window(xp, i, j, ho, wo, stride) * g).sum(axis=(0, 1, 2))
                _window(gxp, i, j, ho, wo, stride)[...] += g * k[i, j]
        return gxp[:, pt : pt + h, pl : pl + w, :], gk

    return Tensor._from_op(out, (x, kernel), bw)


def separable_conv2d(x, depthwise_kernel, pointwise_kernel, stride: int = 1, padding: str = "same") -> Tensor:
    """Depthwise conv (kernel [S,S,Cin]) followed by a 1x1 conv (kernel [1,1,Cin,Cout])."""
    depthwise_kernel, pointwise_kernel = as_tensor(depthwise_kernel), as_tensor(pointwise_kernel)
    if pointwise_kernel.ndim != 4 or pointwise_kernel.shape[:2] != (1, 1):
        raise ShapeError(f"separable_conv2d: pointwise kernel must be [1,1,Cin,Cout], got {pointwise_kernel.shape}")
    if depthwise_kernel.ndim == 3 and pointwise_kernel.shape[2] != depthwise_kernel.shape[2]:
        raise ShapeError(
            f"separable_conv2d: depthwise has {depthwise_kernel.shape[2]} channels, "
            f"pointwise expects Cin (dim 2) = {pointwise_kernel.shape[2]}"
        )
    h = depthwise_conv2d(x, depthwise_kernel, stride, padding)
    return conv2d(h, pointwise_kernel, 1, "same")


def maxpool2x(x) -> Tensor:
    """2x2 max pooling with stride 2 (odd trailing rows/columns are dropped)."""
    x = as_tensor(x)
    _check_input(x, "maxpool2x")
    b, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise ShapeError(f"maxpool2x: spatial extent {h}x{w} too small")
    win = x.data[:, : 2 * ho, : 2 * wo].reshape(b, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, ho, wo, c, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros(win.shape)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(b, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * ho, 2 * wo, c)
        gx = np.zeros((b, h, w, c))
        gx[:, : 2 * ho, : 2 * wo] = gw
        return (gx,)

    return Tensor._from_op(out, (x,), bw)


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling."""
    x = as_tensor(x)
    _check_input(x, "upsample2x")
    b, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),))


def batchnorm_inference(x, gamma, beta, mean, var, eps: float = 0.0) -> Tensor:
    """Affine batch norm with frozen statistics: gamma * (x - mean) / sqrt(var + eps) + beta.

    ``mean`` and ``var`` are constants; gamma and beta are differentiable.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mean = np.asarray(mean.data if isinstance(mean, Tensor) else mean, dtype=np.float64)
    var = np.asarray(var.data if isinstance(var, Tensor) else var, dtype=np.float64)
    if gamma.shape[-1] != x.shape[-1]:
        raise ShapeError(f"batchnorm: {gamma.shape[-1]} scales for {x.shape[-1]} channels (last dim)")
    inv = 1.0 / np.sqrt(var + eps)
    return (x - mean) * (gamma * inv) + beta
