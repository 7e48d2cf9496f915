"""Residual backbone with per-stage shared attention units.

Per block t of a stage::

    a_t     = f(x_t)                            residual branch
    h_t     = attention(a_t, h_{t-1}, c_{t-1})  shared DIA unit / per-block SE / none
    x_{t+1} = relu(skip(x_t) + a_t * h_t)       skip dropped for removed shortcuts

The recurrent state starts at zero at every stage entry of every forward pass.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .cells import AttentionUnit, DiaState, OUTPUT_ACTIVATIONS, SeParams, se_forward
from .errors import ConfigError, NumericalExplosion
from .layers import BatchNorm, Conv2d, Linear
from .module import Module
from .tensor import Tensor

ATTENTION_KINDS = ("none", "se", "dia_lstm", "standard_lstm")
BLOCK_KINDS = ("basic", "bottleneck")
F_EXT_KINDS = ("gap", "bn_gap")


@dataclass
class StageSpec:
    channels: int
    blocks: int
    stride: int = 1


def _default_stages() -> list[StageSpec]:
    return [StageSpec(16, 2, 1), StageSpec(32, 2, 2), StageSpec(64, 2, 2)]


@dataclass
class NetworkConfig:
    stages: list[StageSpec] = field(default_factory=_default_stages)
    block: str = "basic"
    attention: str = "dia_lstm"
    reduction: int = 4
    cells: int = 1
    output_activation: str = "sigmoid"
    f_ext: str = "gap"
    use_batch_norm: bool = True
    skip_removal_fraction: float = 0.0
    dia_stages: tuple[int, ...] | None = None  # None -> every stage
    num_classes: int = 10
    in_channels: int = 3
    stem_channels: int = 16

    def __post_init__(self):
        self.stages = [s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages]
        if self.dia_stages is not None:
            self.dia_stages = tuple(sorted(set(int(s) for s in self.dia_stages)))
        self.validate()

    @classmethod
    def from_depth(cls, depth: int, widths=(16, 32, 64), block: str = "basic", **kw) -> "NetworkConfig":
        """CIFAR-style depth: basic blocks give (depth-2)/6 blocks per stage, bottlenecks (depth-2)/9."""
        per = 6 if block == "basic" else 9
        if (depth - 2) % per or depth <= 2:
            raise ConfigError(f"depth {depth} is not valid for {block} blocks ({per}n+2)")
        n = (depth - 2) // per
        stages = [StageSpec(w, n, 1 if i == 0 else 2) for i, w in enumerate(widths)]
        return cls(stages=stages, block=block, **kw)

    def validate(self) -> None:
        if not self.stages:
            raise ConfigError("at least one stage is required")
        for i, s in enumerate(self.stages):
            if s.blocks < 1 or s.channels < 1 or s.stride < 1:
                raise ConfigError(f"stage {i}: channels, blocks and stride must be >= 1, got {s}")
            if self.block == "bottleneck" and s.channels % 4:
                raise ConfigError(f"stage {i}: bottleneck channels must be divisible by 4")
        checks = [(self.block, BLOCK_KINDS, "block"), (self.attention, ATTENTION_KINDS, "attention"),
                  (self.f_ext, F_EXT_KINDS, "f_ext"),
                  (self.output_activation, OUTPUT_ACTIVATIONS, "output_activation")]
        for value, allowed, key in checks:
            if value not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {value!r}")
        if self.reduction < 1:
            raise ConfigError("reduction ratio must be >= 1")
        if self.cells < 1:
            raise ConfigError("cells must be >= 1")
        if not 0.0 <= self.skip_removal_fraction <= 1.0:
            raise ConfigError("skip_removal_fraction must lie in [0, 1]")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.dia_stages is not None and any(s < 0 or s >= len(self.stages) for s in self.dia_stages):
            raise ConfigError(f"dia_stages {self.dia_stages} out of range for {len(self.stages)} stages")

    def attention_in_stage(self, stage: int) -> str:
        if self.dia_stages is not None and stage not in self.dia_stages:
            return "none"
        return self.attention

    def skips_removed(self, blocks: int) -> int:
        return math.floor(self.skip_removal_fraction * blocks + 1e-9)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dia_stages"] = list(self.dia_stages) if self.dia_stages is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["stages"] = [StageSpec(**s) for s in d["stages"]]
        if d.get("dia_stages") is not None:
            d["dia_stages"] = tuple(d["dia_stages"])
        return cls(**d)


@dataclass
class BlockOutputs:
    a: Tensor
    h: Tensor | None
    x_next: Tensor
    norms: dict[str, float]


@dataclass
class ForwardResult:
    logits: Tensor
    traces: list[list[Tensor] | None]       # top-cell hidden state per block, per stage
    stage_outputs: list[Tensor]
    blocks: list[list[BlockOutputs]] | None = None


def _check_finite(t: Tensor, stage: int, block: int, what: str) -> None:
    if not np.isfinite(t.data).all():
        raise NumericalExplosion(what, stage, block)


class ResidualBlock(Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int, cfg: NetworkConfig, attention: str,
                 keep_skip: bool, *, name: str, seed: int, dtype):
        bn = cfg.use_batch_norm
        self.kind = cfg.block
        self.attention = attention
        self.keep_skip = keep_skip
        if cfg.block == "basic":
            self.convs = [Conv2d(in_ch, out_ch, 3, stride, 1, name=f"{name}.conv1", seed=seed, dtype=dtype),
                          Conv2d(out_ch, out_ch, 3, 1, 1, name=f"{name}.conv2", seed=seed, dtype=dtype)]
            widths = [out_ch, out_ch]
        else:
            mid = out_ch // 4
            self.convs = [Conv2d(in_ch, mid, 1, 1, 0, name=f"{name}.conv1", seed=seed, dtype=dtype),
                          Conv2d(mid, mid, 3, stride, 1, name=f"{name}.conv2", seed=seed, dtype=dtype),
                          Conv2d(mid, out_ch, 1, 1, 0, name=f"{name}.conv3", seed=seed, dtype=dtype)]
            widths = [mid, mid, out_ch]
        self.bns = [BatchNorm(w, name=f"{name}.bn{i + 1}", dtype=dtype) for i, w in enumerate(widths)] if bn else []
        self.proj = None
        self.proj_bn = None
        if keep_skip and (stride != 1 or in_ch != out_ch):
            self.proj = Conv2d(in_ch, out_ch, 1, stride, 0, name=f"{name}.proj", seed=seed, dtype=dtype)
            if bn:
                self.proj_bn = BatchNorm(out_ch, name=f"{name}.proj_bn", dtype=dtype)
        self.se = SeParams(out_ch, cfg.reduction, name=f"{name}.se", seed=seed, dtype=dtype) if attention == "se" else None
        self.fext_bn = None
        if attention in ("dia_lstm", "standard_lstm") and cfg.f_ext == "bn_gap":
            self.fext_bn = BatchNorm(out_ch, affine=False, name=f"{name}.fext_bn", dtype=dtype)

    def residual(self, x: Tensor) -> Tensor:
        """The residual branch a_t = f(x_t)."""
        out = x
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            out = conv(out)
            if self.bns:
                out = self.bns[i](out)
            if i < last:
                out = ops.relu(out)
        return out

    def pooled(self, a: Tensor) -> Tensor:
        """Feature extraction feeding the recurrent cell (GAP, or BN then GAP)."""
        if self.fext_bn is not None:
            a = self.fext_bn(a)
        return ops.global_average_pool(a)

    def shortcut(self, x: Tensor) -> Tensor | None:
        if not self.keep_skip:
            return None
        if self.proj is None:
            return x
        s = self.proj(x)
        return self.proj_bn(s) if self.proj_bn is not None else s

    def combine(self, x: Tensor, a: Tensor, h: Tensor | None) -> Tensor:
        out = a if h is None else ops.channelwise_mul(a, h)
        skip = self.shortcut(x)
        if skip is not None:
            out = skip + out
        return ops.relu(out)


def residual_block_forward(block: ResidualBlock, x: Tensor, unit: AttentionUnit | None = None,
                           states: list[DiaState] | None = None, force_attention: float | None = None):
    """One block; returns (BlockOutputs, new recurrent states)."""
    a = block.residual(x)
    h = None
    if block.attention in ("dia_lstm", "standard_lstm"):
        h, states = unit(block.pooled(a), states)
    elif block.attention == "se":
        h = se_forward(a, block.se)
    if force_attention is not None and h is not None:
        h = Tensor(np.full(h.shape, force_attention, dtype=h.dtype))
    x_next = block.combine(x, a, h)
    norms = {"a": float(np.sqrt(np.mean(a.data ** 2))), "x_next": float(np.sqrt(np.mean(x_next.data ** 2)))}
    return BlockOutputs(a, h, x_next, norms), states


class Stage(Module):
    def __init__(self, in_ch: int, spec: StageSpec, cfg: NetworkConfig, index: int, *, seed: int, dtype):
        self.index = index
        self.attention = cfg.attention_in_stage(index)
        n_removed = cfg.skips_removed(spec.blocks)
        self.blocks = []
        for t in range(spec.blocks):
            keep = t < spec.blocks - n_removed
            self.blocks.append(ResidualBlock(in_ch if t == 0 else spec.channels, spec.channels,
                                             spec.stride if t == 0 else 1, cfg, self.attention, keep,
                                             name=f"stage{index}.block{t}", seed=seed, dtype=dtype))
        self.unit = None
        if self.attention in ("dia_lstm", "standard_lstm"):
            self.unit = AttentionUnit(self.attention, spec.channels, cfg.reduction, cfg.cells,
                                      cfg.output_activation, name=f"stage{index}.dia", seed=seed, dtype=dtype)

    def attention_parameters(self):
        params = list(self.unit.parameters()) if self.unit is not None else []
        for b in self.blocks:
            if b.se is not None:
                params += b.se.parameters()
        return params

    def forward(self, x: Tensor, capture: bool = False, force_attention: float | None = None,
                check_finite: bool = True):
        states = self.unit.init_states(x.shape[0], x.dtype) if self.unit is not None else None
        trace = [] if self.unit is not None else None
        outputs = [] if capture else None
        for t, block in enumerate(self.blocks):
            try:
                out, states = residual_block_forward(block, x, self.unit, states, force_attention)
            except NumericalExplosion as e:
                if e.stage is None:
                    raise NumericalExplosion(e.where, self.index, t) from None
                raise
            if check_finite:
                _check_finite(out.a, self.index, t, "residual branch")
                _check_finite(out.x_next, self.index, t, "block output")
            if trace is not None:
                trace.append(out.h)
            if outputs is not None:
                outputs.append(out)
            x = out.x_next
        return x, trace, outputs


def stage_forward(stage: Stage, x: Tensor, capture: bool = False):
    """(features, list of hidden states per block or None)."""
    x, trace, _ = stage.forward(x, capture)
    return x, trace


class Network(Module):
    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        c0 = config.stem_channels
        self.stem = Conv2d(config.in_channels, c0, 3, 1, 1, name="stem.conv", seed=seed, dtype=dtype)
        self.stem_bn = BatchNorm(c0, name="stem.bn", dtype=dtype) if config.use_batch_norm else None
        self.stages = []
        in_ch = c0
        for i, spec in enumerate(config.stages):
            self.stages.append(Stage(in_ch, spec, config, i, seed=seed, dtype=dtype))
            in_ch = spec.channels
        self.fc = Linear(in_ch, config.num_classes, name="fc", seed=seed, dtype=dtype)

    def forward(self, images, capture: bool = False, force_attention: float | None = None,
                check_finite: bool = True) -> ForwardResult:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        x = self.stem(x)
        if self.stem_bn is not None:
            x = self.stem_bn(x)
        x = ops.relu(x)
        traces, stage_outputs, blocks = [], [], []
        for stage in self.stages:
            x, trace, outs = stage.forward(x, capture, force_attention, check_finite)
            traces.append(trace)
            stage_outputs.append(x)
            blocks.append(outs)
        logits = self.fc(ops.global_average_pool(x))
        if check_finite and not np.isfinite(logits.data).all():
            raise NumericalExplosion("logits")
        return ForwardResult(logits, traces, stage_outputs, blocks if capture else None)

    __call__ = forward


def network_forward(net: Network, images, capture: bool = False):
    res = net.forward(images, capture)
    return res.logits, res.traces


@dataclass
class ParamReport:
    stem: int
    classifier: int
    stages: list[dict[str, int]]    # per stage: backbone, attention, attention_weights

    @property
    def attention_total(self) -> int:
        return sum(s["attention"] for s in self.stages)

    @property
    def total(self) -> int:
        return self.stem + self.classifier + sum(s["backbone"] + s["attention"] for s in self.stages)


def count_model_params(config: NetworkConfig) -> ParamReport:
    """Exact per-stage parameter enumeration, attention increment reported separately."""
    net = Network(config, seed=0, dtype=np.float32)
    stem = net.stem.num_params() + (net.stem_bn.num_params() if net.stem_bn is not None else 0)
    stages = []
    for st in net.stages:
        attn = st.attention_parameters()
        total = sum(p.size for p in attn)
        weights = sum(p.size for p in attn if p.ndim == 2)
        stages.append({"backbone": st.num_params() - total, "attention": total, "attention_weights": weights})
    return ParamReport(stem, net.fc.num_params(), stages)
