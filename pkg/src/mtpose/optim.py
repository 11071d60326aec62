"""Optimizers and the plateau learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor


class RMSProp:
    """cache = decay * cache + (1 - decay) * g^2;  theta -= lr * g / (sqrt(cache) + eps)."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, decay: float = 0.9, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.decay, self.eps = lr, decay, eps
        self.cache = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, c in zip(self.params, self.cache):
            if p.grad is None or not p.requires_grad:
                continue
            c *= self.decay
            c += (1 - self.decay) * p.grad**2
            p.data = p.data - self.lr * p.grad / (np.sqrt(c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class SGDNesterov:
    """SGD with Nesterov momentum in the look-ahead-free form:

    v = mu * v + g;  theta -= lr * (g + mu * v)
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4, momentum: float = 0.98):
        self.params = list(params)
        self.lr, self.momentum = lr, momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        mu = self.momentum
        for p, v in zip(self.params, self.velocity):
            if p.grad is None or not p.requires_grad:
                continue
            v *= mu
            v += p.grad
            p.data = p.data - self.lr * (p.grad + mu * v)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def rmsprop_step(theta: np.ndarray, grad: np.ndarray, cache: np.ndarray, lr: float, decay: float = 0.9, eps: float = 1e-8):
    """Functional RMSProp update; returns (theta, cache)."""
    cache = decay * cache + (1 - decay) * grad**2
    return theta - lr * grad / (np.sqrt(cache) + eps), cache


def sgd_nesterov_step(theta: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, momentum: float = 0.98):
    """Functional Nesterov update; returns (theta, velocity)."""
    velocity = momentum * velocity + grad
    return theta - lr * (grad + momentum * velocity), velocity


class PlateauScheduler:
    """Multiply the rate by ``factor`` after ``patience`` evaluations without a new best.

    The no-improvement counter resets after each reduction. The rate never
    drops below ``floor``.
    """

    def __init__(self, lr: float, factor: float = 0.2, patience: int = 3, floor: float = 1e-7, mode: str = "max"):
        if not 0 < factor < 1:
            raise ValueError("factor must be in (0, 1)")
        if mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        self.lr, self.factor, self.patience, self.floor, self.mode = lr, factor, patience, floor, mode
        self.best: float | None = None
        self.bad = 0

    def step(self, score: float) -> float:
        better = self.best is None or (score > self.best if self.mode == "max" else score < self.best)
        if better:
            self.best, self.bad = score, 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr = max(self.lr * self.factor, self.floor)
                self.bad = 0
        return self.lr


def plateau_scheduler(history: Sequence[float], lr: float, factor: float = 0.2, patience: int = 3, floor: float = 1e-7, mode: str = "max") -> float:
    """Learning rate after replaying a history of validation scores."""
    sched = PlateauScheduler(lr, factor, patience, floor, mode)
    for s in history:
        sched.step(s)
    return sched.lr


@dataclass
class TrainSchedule:
    optimizer: str = "rmsprop"  # or "sgd_nesterov"
    lr: float = 1e-3
    plateau_factor: float = 0.2
    patience: int = 3
    batch_size: int = 24
    momentum: float = 0.98
    rmsprop_decay: float = 0.9
    finetune_lr_divisor: float = 10.0
    finetune_epochs: int = 5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau factor must be in (0, 1)")

    @classmethod
    def pose(cls) -> "TrainSchedule":
        return cls("rmsprop", 1e-3, batch_size=24)

    @classmethod
    def action(cls) -> "TrainSchedule":
        return cls("sgd_nesterov", 2e-4, batch_size=2)

    def make(self, params: Sequence[Tensor], lr: float | None = None):
        lr = self.lr if lr is None else lr
        if self.optimizer == "rmsprop":
            return RMSProp(params, lr, self.rmsprop_decay)
        if self.optimizer == "sgd_nesterov":
            return SGDNesterov(params, lr, self.momentum)
        raise ValueError(f"unknown optimizer {self.optimizer!r}")
