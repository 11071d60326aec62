"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def _scalarize(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * weights).sum() if out.size != 1 else out.reshape(())


def directional_errors(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    *,
    directions: int = 10,
    h: float = 1e-5,
    seed: int = 0,
) -> np.ndarray:
    """Relative errors |g_ad . u - fd_u| / max(1, |fd_u|) along random unit directions.

    Non-scalar outputs are contracted with a fixed random weight tensor first.
    """
    rng = np.random.default_rng(seed)
    base = [np.asarray(x, dtype=np.float64) for x in inputs]
    params = [Tensor(x, requires_grad=True) for x in base]
    out = fn(*params)
    weights = rng.standard_normal(out.shape)
    loss = _scalarize(out, weights)
    backward(loss)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    def f(xs):
        with no_grad():
            return _scalarize(fn(*[Tensor(x) for x in xs]), weights).item()

    errs = np.empty(directions)
    for k in range(directions):
        us = [rng.standard_normal(x.shape) for x in base]
        norm = np.sqrt(sum(float((u * u).sum()) for u in us))
        us = [u / norm for u in us]
        fp = f([x + h * u for x, u in zip(base, us)])
        fm = f([x - h * u for x, u in zip(base, us)])
        fd = (fp - fm) / (2 * h)
        ad = sum(float((g * u).sum()) for g, u in zip(grads, us))
        errs[k] = abs(ad - fd) / max(1.0, abs(fd))
    return errs


def max_gradient_error(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], **kw) -> float:
    return float(directional_errors(fn, inputs, **kw).max())


def coordinate_fd(fn: Callable[..., Tensor], x: np.ndarray, index: tuple, h: float = 1e-5) -> float:
    """Central difference of scalar ``fn`` with respect to one coordinate of ``x``."""
    xp, xm = x.copy(), x.copy()
    xp[index] += h
    xm[index] -= h
    with no_grad():
        return (fn(Tensor(xp)).item() - fn(Tensor(xm)).item()) / (2 * h)


def parameter_errors(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    *,
    directions: int = 10,
    h: float = 1e-5,
    seed: int = 0,
) -> np.ndarray:
    """Directional checks over existing leaf tensors (e.g. network weights).

    ``loss_fn`` rebuilds a scalar from the current ``params`` values; the
    parameters are perturbed in place and restored afterwards.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    backward(loss_fn())
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    saved = [p.data.copy() for p in params]

    def f(us, sign):
        for p, x, u in zip(params, saved, us):
            p.data = x + sign * h * u
        with no_grad():
            return loss_fn().item()

    errs = np.empty(directions)
    try:
        for k in range(directions):
            us = [rng.standard_normal(x.shape) for x in saved]
            norm = np.sqrt(sum(float((u * u).sum()) for u in us))
            us = [u / norm for u in us]
            fd = (f(us, 1.0) - f(us, -1.0)) / (2 * h)
            ad = sum(float((g * u).sum()) for g, u in zip(grads, us))
            errs[k] = abs(ad - fd) / max(1.0, abs(fd))
    finally:
        for p, x in zip(params, saved):
            p.data = x
    return errs
