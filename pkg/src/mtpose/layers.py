"""Parameter registry and the small layer set the networks are built from."""
from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

import numpy as np

from .autodiff import Tensor, batchnorm_inference, conv2d, relu, separable_conv2d


def truncated_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until they lie within ``bound`` standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


class ParamSet:
    """Ordered named tensors; creation order is the checkpoint order."""

    def __init__(self, seed: int = 0, init_std: float | None = 0.01):
        self.rng = np.random.default_rng(seed)
        self.init_std = init_std
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, shape, init: str = "normal", trainable: bool = True, fan_in: int | None = None) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "normal":
            # init_std=None selects He scaling from fan-in
            std = self.init_std if self.init_std is not None else np.sqrt(2.0 / max(fan_in or 1, 1))
            data = truncated_normal(self.rng, shape, std)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=trainable, name=name)
        self._tensors[name] = t
        return t

    @contextmanager
    def scope(self, init_std: float | None, seed: int):
        """Temporarily draw initial values with another scale and generator."""
        saved = self.init_std, self.rng
        self.init_std, self.rng = init_std, np.random.default_rng(seed)
        try:
            yield self
        finally:
            self.init_std, self.rng = saved

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def trainable(self) -> list[Tensor]:
        return [t for t in self._tensors.values() if t.requires_grad]

    def set_trainable(self, flag: bool, prefix: str = "") -> None:
        for name, t in self._tensors.items():
            if name.startswith(prefix) and not name.endswith((".mean", ".var")):
                t.requires_grad = flag

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, t in self._tensors.items():
            key = prefix + name
            if key not in state:
                raise KeyError(f"checkpoint is missing {key!r}")
            if state[key].shape != t.shape:
                raise ValueError(f"{key}: checkpoint shape {state[key].shape} != model shape {t.shape}")
            t.data = np.array(state[key], dtype=np.float64)


class Conv:
    def __init__(self, ps: ParamSet, name: str, size: int, cin: int, cout: int, stride: int = 1, bias: bool = True):
        self.stride = stride
        self.kernel = ps.add(f"{name}.w", (size, size, cin, cout), fan_in=size * size * cin)
        self.bias = ps.add(f"{name}.b", (cout,), "zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.kernel, self.stride, "same")
        return y + self.bias if self.bias is not None else y


class SepConv:
    def __init__(self, ps: ParamSet, name: str, size: int, cin: int, cout: int):
        self.depthwise = ps.add(f"{name}.dw", (size, size, cin), fan_in=size * size)
        self.pointwise = ps.add(f"{name}.pw", (1, 1, cin, cout), fan_in=cin)

    def __call__(self, x: Tensor) -> Tensor:
        return separable_conv2d(x, self.depthwise, self.pointwise)


class BatchNorm:
    """Inference-mode batch norm; identity at initialisation."""

    def __init__(self, ps: ParamSet, name: str, channels: int):
        self.gamma = ps.add(f"{name}.gamma", (channels,), "ones")
        self.beta = ps.add(f"{name}.beta", (channels,), "zeros")
        self.mean = ps.add(f"{name}.mean", (channels,), "zeros", trainable=False)
        self.var = ps.add(f"{name}.var", (channels,), "ones", trainable=False)

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm_inference(x, self.gamma, self.beta, self.mean.data, self.var.data)


class SeparableResidual:
    """Two separable convs with batch norm, plus an identity or 1x1-projected shortcut."""

    def __init__(self, ps: ParamSet, name: str, cin: int, cout: int, size: int = 3):
        self.sc1 = SepConv(ps, f"{name}.sc1", size, cin, cout)
        self.bn1 = BatchNorm(ps, f"{name}.bn1", cout)
        self.sc2 = SepConv(ps, f"{name}.sc2", size, cout, cout)
        self.bn2 = BatchNorm(ps, f"{name}.bn2", cout)
        self.proj = Conv(ps, f"{name}.proj", 1, cin, cout, bias=False) if cin != cout else None

    def __call__(self, x: Tensor) -> Tensor:
        h = relu(self.bn1(self.sc1(x)))
        h = self.bn2(self.sc2(h))
        skip = self.proj(x) if self.proj is not None else x
        return relu(h + skip)
