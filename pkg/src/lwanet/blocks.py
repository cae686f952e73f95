"""Composite building blocks: depthwise separable convolution, inverted
residual, channel-attention fusion, and the transposed-conv upsampling unit."""

from __future__ import annotations

from . import ops
from .errors import ShapeError
from .layers import BatchNorm2d, Conv2d, Layer, TransposedConv2d


class DepthwiseSeparableConv(Layer):
    """depthwise(k) -> bn -> relu6 -> pointwise -> bn -> relu6, bias-free."""

    def __init__(self, cin, cout, stride=1, k=3, rng=None):
        self.dw = Conv2d(cin, cin, k, stride, k // 2, groups=cin, rng=rng)
        self.bn1 = BatchNorm2d(cin)
        self.pw = Conv2d(cin, cout, 1, rng=rng)
        self.bn2 = BatchNorm2d(cout)

    def children(self):
        return [("dw", self.dw), ("bn1", self.bn1), ("pw", self.pw), ("bn2", self.bn2)]

    def forward(self, x, mode="train"):
        x = ops.relu6(self.bn1.forward(self.dw.forward(x, mode), mode))
        return ops.relu6(self.bn2.forward(self.pw.forward(x, mode), mode))


class InvertedResidual(Layer):
    """Expansion (skipped at ratio 1) -> depthwise -> linear projection,
    with an identity skip when stride is 1 and channels are preserved."""

    def __init__(self, cin, cout, stride, expand_ratio, rng=None):
        hidden = cin * expand_ratio
        self.residual = stride == 1 and cin == cout
        self.expand = None
        self.bn0 = None
        if expand_ratio != 1:
            self.expand = Conv2d(cin, hidden, 1, rng=rng)
            self.bn0 = BatchNorm2d(hidden)
        self.dw = Conv2d(hidden, hidden, 3, stride, 1, groups=hidden, rng=rng)
        self.bn1 = BatchNorm2d(hidden)
        self.project = Conv2d(hidden, cout, 1, rng=rng)
        self.bn2 = BatchNorm2d(cout)

    def children(self):
        named = []
        if self.expand is not None:
            named += [("expand", self.expand), ("bn0", self.bn0)]
        return named + [("dw", self.dw), ("bn1", self.bn1),
                        ("project", self.project), ("bn2", self.bn2)]

    def forward(self, x, mode="train"):
        h = x
        if self.expand is not None:
            h = ops.relu6(self.bn0.forward(self.expand.forward(h, mode), mode))
        h = ops.relu6(self.bn1.forward(self.dw.forward(h, mode), mode))
        h = self.bn2.forward(self.project.forward(h, mode), mode)
        if self.residual:
            if h.shape != x.shape:
                raise ShapeError(
                    f"inverted_residual[{self.label}]: residual shapes differ "
                    f"{tuple(x.shape)} vs {tuple(h.shape)}"
                )
            h = ops.add(h, x)
        return h


class ChannelGate(Layer):
    """Squeeze-and-excitation gate: pooled context -> bottleneck -> sigmoid,
    applied as a per-channel broadcast multiply."""

    def __init__(self, channels, reduction, rng=None):
        if channels % reduction:
            raise ShapeError(
                f"channel gate: channels {channels} not divisible by reduction {reduction}"
            )
        self.squeeze = Conv2d(channels, channels // reduction, 1, bias=True, rng=rng)
        self.excite = Conv2d(channels // reduction, channels, 1, bias=True, rng=rng)

    def children(self):
        return [("squeeze", self.squeeze), ("excite", self.excite)]

    def gate(self, x, mode="train"):
        a = ops.relu(self.squeeze.forward(ops.global_avg_pool(x), mode))
        return ops.sigmoid(self.excite.forward(a, mode))

    def forward(self, x, mode="train"):
        return ops.broadcast_mul_channels(x, self.gate(x, mode))

    def cost_rows(self, in_shape):
        n, c, h, w = in_shape
        rows, _ = super().cost_rows((n, c, 1, 1))
        return rows, in_shape


class AttentionFusion(Layer):
    """Gate the low-level and high-level branches separately, then add."""

    def __init__(self, channels, reduction, rng=None):
        self.low_gate = ChannelGate(channels, reduction, rng=rng)
        self.high_gate = ChannelGate(channels, reduction, rng=rng)

    def children(self):
        return [("low_gate", self.low_gate), ("high_gate", self.high_gate)]

    def forward(self, low, high, mode="train"):
        if low.shape != high.shape:
            raise ShapeError(
                f"attention_fusion[{self.label}]: branch shapes differ "
                f"{tuple(low.shape)} vs {tuple(high.shape)}"
            )
        return ops.add(self.low_gate.forward(low, mode), self.high_gate.forward(high, mode))

    def cost_rows(self, in_shape):
        rows, _ = self.low_gate.cost_rows(in_shape)
        rows2, _ = self.high_gate.cost_rows(in_shape)
        return rows + rows2, in_shape


class UpsampleBlock(Layer):
    """Exact 2x spatial doubling: transposed conv -> bn -> relu6.

    Default kernel 2 with stride 2 covers every output pixel exactly once;
    kernel 4 (stride 2, padding 1) is the overlapping alternative.
    """

    def __init__(self, cin, cout, kernel=2, rng=None):
        if kernel not in (2, 4):
            raise ShapeError(f"upsample kernel must be 2 or 4, got {kernel}")
        self.tconv = TransposedConv2d(cin, cout, kernel, 2, (kernel - 2) // 2, rng=rng)
        self.bn = BatchNorm2d(cout)

    def children(self):
        return [("tconv", self.tconv), ("bn", self.bn)]

    def forward(self, x, mode="train"):
        return ops.relu6(self.bn.forward(self.tconv.forward(x, mode), mode))
