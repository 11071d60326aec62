"""Toy-scale pose regression CNN: entry flow plus K refining prediction blocks."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import ShapeError, Tensor, as_tensor, maxpool2x, transpose, upsample2x
from .layers import BatchNorm, Conv, ParamSet, SeparableResidual
from .autodiff import relu
from .volumetric import PoseOutput, volume_to_pose


@dataclass
class NetworkConfig:
    n_blocks: int = 8
    n_joints: int = 16
    n_depth: int = 16
    n_features: int = 64
    input_size: int = 32
    stem_widths: tuple[int, int] = (16, 32)
    kernel: int = 3
    init_std: float | None = 0.01
    seed: int = 0

    def __post_init__(self):
        self.stem_widths = tuple(int(w) for w in self.stem_widths)
        for f in ("n_blocks", "n_joints", "n_depth", "n_features", "input_size", "kernel"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.input_size % 32:
            raise ValueError(f"input_size must be a multiple of 32, got {self.input_size}")
        if len(self.stem_widths) != 2 or min(self.stem_widths) <= 0:
            raise ValueError("stem_widths needs two positive widths")

    @property
    def feature_size(self) -> int:
        return self.input_size // 8

    def to_meta(self) -> dict[str, str]:
        d = asdict(self)
        d["stem_widths"] = ",".join(str(w) for w in self.stem_widths)
        return {f"pose.{k}": str(v) for k, v in d.items()}

    @classmethod
    def from_meta(cls, meta: dict[str, str], prefix: str = "pose.") -> "NetworkConfig":
        kw = {}
        for f in fields(cls):
            key = prefix + f.name
            if key not in meta:
                continue
            raw = meta[key]
            if f.name == "stem_widths":
                kw[f.name] = tuple(int(v) for v in raw.split(","))
            elif f.name == "init_std":
                kw[f.name] = None if raw == "None" else float(raw)
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


@dataclass
class PoseNetOutput:
    blocks: list[PoseOutput]
    features: Tensor  # F_t: [B, H_f, W_f, N_f]
    states: list[Tensor] = field(default_factory=list, repr=False)

    @property
    def final(self) -> PoseOutput:
        return self.blocks[-1]

    @property
    def prob_maps(self) -> Tensor:
        """M_t of the last block laid out as [B, H_f, W_f, N_J]."""
        return transpose(self.final.prob_maps, (0, 2, 3, 1))


class EntryFlow:
    """conv/2 -> SR + pool -> SR + pool: features at one eighth of the input extent."""

    def __init__(self, ps: ParamSet, cfg: NetworkConfig):
        w1, w2 = cfg.stem_widths
        self.cfg = cfg
        self.conv = Conv(ps, "entry.conv", cfg.kernel, 3, w1, stride=2)
        self.bn = BatchNorm(ps, "entry.bn", w1)
        self.sr1 = SeparableResidual(ps, "entry.sr1", w1, w2, cfg.kernel)
        self.sr2 = SeparableResidual(ps, "entry.sr2", w2, cfg.n_features, cfg.kernel)

    def __call__(self, image) -> Tensor:
        x = as_tensor(image)
        n = self.cfg.input_size
        if x.ndim != 4 or x.shape[1:] != (n, n, 3):
            raise ShapeError(f"entry_flow expects [B,{n},{n},3], got {x.shape}")
        h = relu(self.bn(self.conv(x)))
        h = maxpool2x(self.sr1(h))
        return maxpool2x(self.sr2(h))


class PredictionBlock:
    """Eight separable residual units across three resolutions, a 1x1 heat-map head,
    and additive re-injection of the heat maps into the feature path."""

    def __init__(self, ps: ParamSet, name: str, cfg: NetworkConfig, reinject: bool):
        nf, k = cfg.n_features, cfg.kernel
        self.cfg = cfg
        self.sr = [SeparableResidual(ps, f"{name}.sr{i}", nf, nf, k) for i in range(1, 9)]
        self.head = Conv(ps, f"{name}.heat", 1, nf, cfg.n_joints * cfg.n_depth)
        self.back = Conv(ps, f"{name}.reinject", 1, cfg.n_joints * cfg.n_depth, nf) if reinject else None

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        fs = self.cfg.feature_size
        if x.ndim != 4 or x.shape[1:] != (fs, fs, self.cfg.n_features):
            raise ShapeError(f"prediction_block expects [B,{fs},{fs},{self.cfg.n_features}], got {x.shape}")
        r = self.sr
        a = r[0](x)
        b = r[1](maxpool2x(a))
        c = r[2](maxpool2x(b))
        c = r[3](c)
        b = r[5](r[4](b) + upsample2x(c))
        a = r[7](r[6](a) + upsample2x(b))
        heat = self.head(a)
        nxt = x + a + self.back(heat) if self.back is not None else x + a
        return heat, nxt

    def volume(self, heat: Tensor) -> Tensor:
        """[B,H,W,J*N_d] heat channels -> [B,J,N_d,H,W] volume."""
        b, h, w, _ = heat.shape
        v = heat.reshape(b, h, w, self.cfg.n_joints, self.cfg.n_depth)
        return transpose(v, (0, 3, 4, 1, 2))


class PoseNetwork:
    def __init__(self, cfg: NetworkConfig | None = None, params: ParamSet | None = None, prefix: str = ""):
        self.cfg = cfg or NetworkConfig()
        self.params = params or ParamSet(self.cfg.seed, self.cfg.init_std)
        ps = _Prefixed(self.params, prefix)
        self.entry = EntryFlow(ps, self.cfg)
        k = self.cfg.n_blocks
        self.blocks = [PredictionBlock(ps, f"block{i}", self.cfg, reinject=i < k - 1) for i in range(k)]

    def entry_flow(self, image) -> Tensor:
        return self.entry(image)

    def prediction_block(self, index: int, x: Tensor) -> tuple[PoseOutput, Tensor]:
        blk = self.blocks[index]
        heat, nxt = blk(x)
        return volume_to_pose(blk.volume(heat)), nxt

    def forward(self, image) -> PoseNetOutput:
        feats = self.entry(image)
        x = feats
        outs, states = [], []
        for i in range(len(self.blocks)):
            out, x = self.prediction_block(i, x)
            outs.append(out)
            states.append(x)
        return PoseNetOutput(outs, feats, states)

    __call__ = forward

    def state(self) -> dict[str, np.ndarray]:
        return self.params.state()


class _Prefixed:
    """ParamSet view that prefixes every parameter name."""

    def __init__(self, ps: ParamSet, prefix: str):
        self._ps, self._prefix = ps, prefix

    def add(self, name, *args, **kw):
        return self._ps.add(self._prefix + name, *args, **kw)


def forward_pose(net: PoseNetwork, image) -> PoseNetOutput:
    return net.forward(image)
