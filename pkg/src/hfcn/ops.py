"""Differentiable layer operations used by the HFCN topology."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, make_node

__all__ = [
    "ConvSpec",
    "conv2d",
    "relu",
    "maxpool2d",
    "upsample_nearest",
    "concat_channels",
    "add",
]


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 1
    has_bias: bool = True

    def __post_init__(self):
        kh, kw = self.kernel
        if min(self.in_channels, self.out_channels, kh, kw, self.stride) < 1 or self.padding < 0:
            raise ValueError(f"invalid ConvSpec {self}")

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        return ((h + 2 * self.padding - kh) // self.stride + 1,
                (w + 2 * self.padding - kw) // self.stride + 1)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Zero-padded cross-correlation (no kernel flip)."""
    n, c, h, w = x.shape
    kh, kw = spec.kernel
    if c != spec.in_channels:
        raise ValueError(f"conv2d: input has {c} channels, spec expects {spec.in_channels}")
    if weight.shape != (spec.out_channels, spec.in_channels, kh, kw):
        raise ValueError(f"conv2d: weight shape {weight.shape} does not match {spec}")
    if spec.has_bias != (bias is not None):
        raise ValueError("conv2d: bias presence does not match spec")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ValueError(f"conv2d: bias shape {bias.shape}, expected ({spec.out_channels},)")
    ho, wo = spec.output_size(h, w)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: output spatial size {ho}x{wo} < 1 for input {h}x{w}")

    s, p = spec.stride, spec.padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    # im2col: rows are (c, i, j) taps, columns are output pixels (n, y, x)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(spec.out_channels, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(spec.out_channels, n, ho, wo).transpose(1, 0, 2, 3))

    def _bw(g):
        gm = g.transpose(1, 0, 2, 3).reshape(spec.out_channels, n * ho * wo)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(c, kh, kw, n, ho, wo)
            gx = np.zeros((n, c) + xp.shape[2:])
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += gcols[:, i, j].transpose(1, 0, 2, 3)
            if p:
                gx = gx[:, :, p:-p, p:-p]
        grads = [gx, gw]
        if bias is not None:
            grads.append(gm.sum(axis=1))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, _bw, "conv2d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def maxpool2d(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """2x2/stride-2 max pooling.

    Returns the pooled tensor and the argmax of every window as an index
    0..3 in row-major window order; ties resolve to the first index.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2d: spatial size {h}x{w} must be even")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def _bw(g):
        gw = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return make_node(out, (x,), _bw, "maxpool2d"), arg


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return make_node(x.data.copy(), (x,), lambda g: (g,), "upsample_nearest")
    n, c, h, w = x.shape
    f = factor
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, f, w, f)).reshape(n, c, h * f, w * f)
    return make_node(out, (x,), lambda g: (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),), "upsample_nearest")


def concat_channels(inputs: list[Tensor]) -> Tensor:
    if not inputs:
        raise ValueError("concat_channels: empty input list")
    n, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ValueError(f"concat_channels: shape {t.shape} incompatible with {inputs[0].shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])
    out = np.concatenate([t.data for t in inputs], axis=1)

    def _bw(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(inputs)))

    return make_node(out, tuple(inputs), _bw, "concat_channels")
