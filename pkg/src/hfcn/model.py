"""Highly fused encoder/decoder with five full-resolution pre-output heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .ops import ConvSpec, concat_channels, conv2d, maxpool2d, relu, upsample_nearest
from .tensor import ParamStore, Tensor, add, tensor_new, tensor_rand_init

__all__ = ["HfcnConfig", "ForwardBundle", "build", "forward", "predict", "UPCONV_FACTORS"]

# upsampling factor of each pre-output head, deepest decoder stage first
UPCONV_FACTORS = (16, 8, 4, 2, 1)
# small positive bias keeps width-1 ReLU units off the kink at initialisation
BIAS_INIT = 0.01


@dataclass
class HfcnConfig:
    num_classes: int = 4
    widths: tuple[int, ...] = (8, 16, 32, 48, 48)
    convs_per_block: tuple[int, ...] = (2, 2, 3, 3, 3)
    head_channels: int | None = None
    in_channels: int = 3
    height: int = 64
    width: int = 64

    def __post_init__(self):
        self.widths = tuple(int(c) for c in self.widths)
        self.convs_per_block = tuple(int(c) for c in self.convs_per_block)
        if self.head_channels is None:
            self.head_channels = self.widths[-1]

    @property
    def head(self) -> int:
        return self.head_channels if self.head_channels is not None else self.widths[-1]

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.widths) != 5 or len(self.convs_per_block) != 5:
            raise ValueError("widths and convs_per_block need exactly five entries")
        if min(self.widths) < 1 or min(self.convs_per_block) < 1 or self.head < 1 or self.in_channels < 1:
            raise ValueError("all widths and block counts must be >= 1")
        if self.height % 32 or self.width % 32 or self.height < 32 or self.width < 32:
            raise ValueError(f"input size {self.height}x{self.width} must be a positive multiple of 32")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["convs_per_block"] = list(self.convs_per_block)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> HfcnConfig:
        return cls(**d).validate()

    @classmethod
    def minimal(cls, num_classes: int = 2, size: int = 32) -> HfcnConfig:
        return cls(num_classes, (1,) * 5, (1,) * 5, None, 3, size, size)


@dataclass
class ForwardBundle:
    """Five pre-outputs (deepest origin first) and the fused final output."""

    pre_outputs: list[Tensor]
    final_output: Tensor
    fused: Tensor | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.final_output.shape


def _conv_params(store: ParamStore, name: str, spec: ConvSpec, seed: int):
    kh, kw = spec.kernel
    fan_in = spec.in_channels * kh * kw
    store.add(f"{name}.weight", tensor_rand_init((spec.out_channels, spec.in_channels, kh, kw), fan_in,
                                                 [seed, len(store)]))
    if spec.has_bias:
        store.add(f"{name}.bias", tensor_new((spec.out_channels,), BIAS_INIT))


def _layer_plan(cfg: HfcnConfig) -> list[tuple[str, ConvSpec]]:
    """Every convolution of the network, in creation order."""
    ch, C = cfg.widths, cfg.num_classes
    plan = []
    prev = cfg.in_channels
    for b in range(5):
        for k in range(cfg.convs_per_block[b]):
            plan.append((f"enc{b + 1}.conv{k + 1}", ConvSpec(prev, ch[b])))
            prev = ch[b]
    plan.append(("head.conv3", ConvSpec(ch[4], cfg.head)))
    plan.append(("head.conv1", ConvSpec(cfg.head, ch[4], (1, 1), 1, 0)))
    # decoder stage k upsamples d_k and projects to the width of pool_{k-1}
    for k in range(5, 1, -1):
        plan.append((f"dec{k - 1}.up", ConvSpec(ch[k - 1], ch[k - 2])))
        plan.append((f"dec{k - 1}.extra", ConvSpec(ch[k - 2], ch[k - 2])))
    plan.append(("dec0.up", ConvSpec(ch[0], ch[0])))
    stage_widths = (ch[3], ch[2], ch[1], ch[0], ch[0])
    for i, width in enumerate(stage_widths):
        plan.append((f"upconv{i + 1}", ConvSpec(width, C)))
    plan.append(("final", ConvSpec(5 * C, C, (1, 1), 1, 0)))
    return plan


def build(config: HfcnConfig, seed: int = 0) -> ParamStore:
    config.validate()
    store = ParamStore(config)
    for name, spec in _layer_plan(config):
        _conv_params(store, name, spec, seed)
    return store


def _conv(params: ParamStore, name: str, x: Tensor, spec: ConvSpec) -> Tensor:
    return conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"] if spec.has_bias else None, spec)


def _fuse(a: Tensor, b: Tensor, where: str) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"{where}: cannot fuse decoder map {a.shape} with pooling map {b.shape}")
    return add(a, b)


def forward(params: ParamStore, x: Tensor, config: HfcnConfig | None = None) -> ForwardBundle:
    cfg = config or params.config
    n, c, h, w = x.shape
    if c != cfg.in_channels:
        raise ValueError(f"input has {c} channels, model expects {cfg.in_channels}")
    if h % 32 or w % 32:
        raise ValueError(f"input size {h}x{w} must be divisible by 32")
    specs = dict(_layer_plan(cfg))

    def conv_relu(name, t):
        return relu(_conv(params, name, t, specs[name]))

    pools = []
    t = x
    for b in range(5):
        for k in range(cfg.convs_per_block[b]):
            t = conv_relu(f"enc{b + 1}.conv{k + 1}", t)
        t, _ = maxpool2d(t)
        pools.append(t)

    t = conv_relu("head.conv3", pools[4])
    t = conv_relu("head.conv1", t)
    d = _fuse(t, pools[4], "pool5 fusion")

    stages = []
    for k in range(5, 1, -1):
        u = upsample_nearest(d, 2)
        d = _fuse(conv_relu(f"dec{k - 1}.up", u), pools[k - 2], f"pool{k - 1} fusion")
        stages.append(conv_relu(f"dec{k - 1}.extra", d))
    stages.append(conv_relu("dec0.up", upsample_nearest(stages[-1], 2)))

    pre = [conv_relu(f"upconv{i + 1}", upsample_nearest(s, f))
           for i, (s, f) in enumerate(zip(stages, UPCONV_FACTORS))]
    fused = concat_channels(pre)
    final = _conv(params, "final", fused, specs["final"])
    return ForwardBundle(pre, final, fused)


def predict(bundle: ForwardBundle | np.ndarray) -> np.ndarray:
    """Per-pixel argmax over classes; ties go to the lowest class index."""
    scores = bundle.final_output.data if isinstance(bundle, ForwardBundle) else np.asarray(bundle)
    return scores.argmax(axis=1)
