"""Forward numerical kernels for every operation the network uses.

All kernels consume and produce NCHW :class:`~lwanet.tensor.Tensor` values
and attach backward closures when gradient recording is enabled. The public
contract is the direct-convolution definition; internally convolutions use
strided window views plus matrix contractions for speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, record


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one convolution (g=1 standard, g=d1 depthwise)."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    has_bias: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid conv spec: {self}")
        if self.groups < 1:
            raise ShapeError(f"groups must be >= 1: {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels not divisible by groups={self.groups}: {self}"
            )

    def out_hw(self, h, w):
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        return oh, ow


def _windows(x, k, s, p):
    """Strided view [n, c, oh, ow, k, k] of the padded input."""
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    v = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return v[:, :, ::s, ::s]


def _conv_fwd(x, w, s, p, g):
    n, cin, h, wd = x.shape
    d2, cin_g, k, _ = w.shape
    if k == 1 and p == 0 and g == 1:
        xs = x[:, :, ::s, ::s]
        out = np.tensordot(w[:, :, 0, 0], xs, axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    v = _windows(x, k, s, p)
    if g == cin and cin_g == 1 and d2 == cin:
        return np.einsum("nchwab,cab->nchw", v, w[:, 0], optimize=True)
    oh, ow = v.shape[2], v.shape[3]
    if g == 1:
        cols = np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5)).reshape(
            n * oh * ow, cin * k * k
        )
        out = cols @ w.reshape(d2, cin * k * k).T
        return np.ascontiguousarray(
            out.reshape(n, oh, ow, d2).transpose(0, 3, 1, 2)
        )
    vg = v.reshape(n, g, cin // g, oh, ow, k, k)
    wg = w.reshape(g, d2 // g, cin_g, k, k)
    out = np.einsum("ngihwab,goiab->ngohw", vg, wg, optimize=True)
    return out.reshape(n, d2, oh, ow)


def _conv_wgrad(x, gy, s, p, g, wshape):
    d2, cin_g, k, _ = wshape
    n, cin = x.shape[:2]
    oh, ow = gy.shape[2:]
    v = _windows(x, k, s, p)
    if g == 1:
        return np.einsum("nihwab,nohw->oiab", v, gy, optimize=True)
    if g == cin and cin_g == 1 and d2 == cin:
        gw = np.einsum("nchwab,nchw->cab", v, gy, optimize=True)
        return gw.reshape(d2, 1, k, k)
    vg = v.reshape(n, g, cin // g, oh, ow, k, k)
    gyg = gy.reshape(n, g, d2 // g, oh, ow)
    gw = np.einsum("ngihwab,ngohw->goiab", vg, gyg, optimize=True)
    return gw.reshape(d2, cin_g, k, k)


def _conv_xgrad(gy, w, s, p, g, x_hw):
    """Adjoint of _conv_fwd with respect to the input (also the transposed-
    convolution forward kernel)."""
    n, d2, oh, ow = gy.shape
    _, cin_g, k, _ = w.shape
    cin = cin_g * g
    h, wd = x_hw
    if g == 1:
        gv = np.einsum("nohw,oiab->nihwab", gy, w, optimize=True)
    elif g == cin and cin_g == 1 and d2 == cin:
        gv = np.einsum("nchw,cab->nchwab", gy, w[:, 0], optimize=True)
    else:
        gyg = gy.reshape(n, g, d2 // g, oh, ow)
        wg = w.reshape(g, d2 // g, cin_g, k, k)
        gv = np.einsum("ngohw,goiab->ngihwab", gyg, wg, optimize=True).reshape(
            n, cin, oh, ow, k, k
        )
    xp = np.zeros((n, cin, h + 2 * p, wd + 2 * p), dtype=gy.dtype)
    for a in range(k):
        for b in range(k):
            xp[:, :, a : a + s * oh : s, b : b + s * ow : s] += gv[:, :, :, :, a, b]
    return xp[:, :, p : p + h, p : p + wd] if p else xp


def _check_conv_inputs(name, x, w, b, spec):
    if x.ndim != 4:
        raise ShapeError(f"{name}: input must be NCHW, got shape {tuple(x.shape)}")
    d1, d2, k, g = spec.in_channels, spec.out_channels, spec.kernel, spec.groups
    if x.shape[1] != d1:
        raise ShapeError(
            f"{name}: input has {x.shape[1]} channels, spec expects {d1} "
            f"(input {tuple(x.shape)}, weight {tuple(w.shape)})"
        )
    if tuple(w.shape) != (d2, d1 // g, k, k):
        raise ShapeError(
            f"{name}: weight shape {tuple(w.shape)} inconsistent with spec "
            f"(expected {(d2, d1 // g, k, k)})"
        )
    if b is not None and tuple(b.shape) != (d2,):
        raise ShapeError(f"{name}: bias shape {tuple(b.shape)} != ({d2},)")
    oh, ow = spec.out_hw(x.shape[2], x.shape[3])
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"{name}: output spatial dims {(oh, ow)} for input {tuple(x.shape)}"
        )


def conv2d(x: Tensor, w: Tensor, b, spec: ConvSpec, name="conv2d") -> Tensor:
    """Zero-padded 2-D convolution per the direct definition."""
    _check_conv_inputs(name, x, w, b, spec)
    s, p, g = spec.stride, spec.padding, spec.groups
    y = _conv_fwd(x.data, w.data, s, p, g)
    if b is not None:
        y = y + b.data.reshape(1, -1, 1, 1)
    out = Tensor(y)
    xd, wd = x.data, w.data
    in_hw = x.shape[2:]

    def bwd(gy):
        gx = _conv_xgrad(gy, wd, s, p, g, in_hw)
        gw = _conv_wgrad(xd, gy, s, p, g, wd.shape)
        if b is None:
            return gx, gw
        return gx, gw, gy.sum(axis=(0, 2, 3))

    record(out, (x, w) if b is None else (x, w, b), bwd)
    return out


def depthwise_conv2d(x: Tensor, w: Tensor, b, spec: ConvSpec) -> Tensor:
    """Per-channel convolution; channel i of the output depends only on
    channel i of the input."""
    if not (spec.groups == spec.in_channels == spec.out_channels):
        raise ShapeError(
            f"depthwise_conv2d requires groups == in == out channels, got {spec}"
        )
    return conv2d(x, w, b, spec, name="depthwise_conv2d")


def transposed_conv2d(x: Tensor, w: Tensor, spec: ConvSpec, name="transposed_conv2d") -> Tensor:
    """Adjoint of conv2d with the same spec; used for learnable upsampling.

    ``w`` has shape [d1, d2, k, k] with d1 the input channels of this op.
    """
    if spec.groups != 1:
        raise ShapeError(f"{name}: grouped transposed conv unsupported")
    d1, d2, k = spec.in_channels, spec.out_channels, spec.kernel
    s, p = spec.stride, spec.padding
    if x.ndim != 4 or x.shape[1] != d1:
        raise ShapeError(
            f"{name}: input {tuple(x.shape)} does not match spec in_channels {d1}"
        )
    if tuple(w.shape) != (d1, d2, k, k):
        raise ShapeError(
            f"{name}: weight shape {tuple(w.shape)} != {(d1, d2, k, k)}"
        )
    h, wd = x.shape[2:]
    oh = (h - 1) * s - 2 * p + k
    ow = (wd - 1) * s - 2 * p + k
    if oh < 1 or ow < 1:
        raise ShapeError(f"{name}: output spatial dims {(oh, ow)} not positive")
    y = _conv_xgrad(x.data, w.data, s, p, 1, (oh, ow))
    out = Tensor(y)
    xd, wdat = x.data, w.data

    def bwd(gy):
        gx = _conv_fwd(gy, wdat, s, p, 1)
        gw = _conv_wgrad(gy, xd, s, p, 1, wdat.shape)
        return gx, gw

    record(out, (x, w), bwd)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean -> [n, c, 1, 1]."""
    if x.ndim != 4 or x.shape[2] * x.shape[3] < 1:
        raise ShapeError(f"global_avg_pool: invalid input shape {tuple(x.shape)}")
    area = x.shape[2] * x.shape[3]
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))
    shape = x.shape

    def bwd(gy):
        return (np.broadcast_to(gy / area, shape).copy(),)

    record(out, (x,), bwd)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0
    record(out, (x,), lambda g: (g * mask,))
    return out


def relu6(x: Tensor) -> Tensor:
    out = Tensor(np.clip(x.data, 0, 6))
    mask = (x.data > 0) & (x.data < 6)
    record(out, (x,), lambda g: (g * mask,))
    return out


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    out = Tensor(y)
    record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def softmax_channels(x: Tensor) -> Tensor:
    """Per-pixel softmax over the channel axis."""
    if x.ndim != 4:
        raise ShapeError(f"softmax_channels: input must be NCHW, got {tuple(x.shape)}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    record(out, (x,), bwd)
    return out


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
              mode="train", momentum=0.1, eps=1e-5) -> Tensor:
    """Channel-wise batch normalization.

    ``running_mean``/``running_var`` are plain arrays owned by the caller;
    train mode updates them in place (convex blend with ``momentum``).
    """
    c = x.shape[1]
    for arr, label in ((gamma.data, "gamma"), (beta.data, "beta"),
                       (running_mean, "running_mean"), (running_var, "running_var")):
        if arr.shape != (c,):
            raise ShapeError(
                f"batchnorm: {label} shape {arr.shape} != ({c},) for input {tuple(x.shape)}"
            )
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    y = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    out = Tensor(y)
    gscale = (gamma.data * inv).reshape(1, c, 1, 1)

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        if mode == "eval":
            dx = g * gscale
        else:
            # full gradient through the batch statistics
            gm = g.mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            gxm = (g * xhat).mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            dx = gscale * (g - gm - xhat * gxm)
        return dx, dgamma, dbeta

    record(out, (x, gamma, beta), bwd)
    return out


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    out = Tensor(x.data + y.data)
    record(out, (x, y), lambda g: (g, g))
    return out


def broadcast_mul_channels(x: Tensor, a: Tensor) -> Tensor:
    """Scale every spatial position of channel k by a[:, k, 0, 0]."""
    if a.ndim != 4 or a.shape[2:] != (1, 1) or a.shape[:2] != x.shape[:2]:
        raise ShapeError(
            f"broadcast_mul_channels: scale shape {tuple(a.shape)} incompatible "
            f"with input {tuple(x.shape)}"
        )
    out = Tensor(x.data * a.data)
    xd, ad = x.data, a.data

    def bwd(g):
        return g * ad, (g * xd).sum(axis=(2, 3), keepdims=True)

    record(out, (x, a), bwd)
    return out


def _interp_matrix(n_in, factor, dtype):
    """Rows sum to 1; half-pixel-centered bilinear interpolation weights."""
    src = (np.arange(n_in * factor, dtype=np.float64) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    mat = np.zeros((n_in * factor, n_in), dtype=dtype)
    rows = np.arange(len(src))
    np.add.at(mat, (rows, i0), (1.0 - t).astype(dtype))
    np.add.at(mat, (rows, i1), t.astype(dtype))
    return mat


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Integer-factor bilinear upsampling of the spatial dims."""
    if int(factor) != factor or factor < 1:
        raise ShapeError(f"bilinear_upsample: factor must be integer >= 1, got {factor}")
    factor = int(factor)
    if factor == 1:
        out = Tensor(x.data.copy())
        record(out, (x,), lambda g: (g,))
        return out
    h, w = x.shape[2:]
    ah = _interp_matrix(h, factor, x.data.dtype)
    aw = _interp_matrix(w, factor, x.data.dtype)
    y = np.einsum("Hh,nchw,Ww->ncHW", ah, x.data, aw, optimize=True)
    out = Tensor(y)

    def bwd(g):
        return (np.einsum("Hh,ncHW,Ww->nchw", ah, g, aw, optimize=True),)

    record(out, (x,), bwd)
    return out
