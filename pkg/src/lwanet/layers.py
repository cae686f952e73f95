"""Parameterized layer objects built on the functional kernels.

A layer owns its parameter tensors (and batch-norm running statistics) and
exposes ``forward(x, mode)``. Composite layers list their children so that
parameter naming, serialization and the cost model can walk one tree.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import ops
from .ops import ConvSpec
from .tensor import Tensor


class Layer:
    label = ""

    def children(self):
        return []

    def own_params(self):
        return []

    def own_buffers(self):
        return []

    def forward(self, x, mode="train"):
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for name, p in self.own_params():
            out[f"{prefix}{name}"] = p
        for cname, child in self.children():
            out.update(child.named_parameters(f"{prefix}{cname}."))
        return out

    def named_buffers(self, prefix=""):
        out = OrderedDict()
        for name, b in self.own_buffers():
            out[f"{prefix}{name}"] = b
        for cname, child in self.children():
            out.update(child.named_buffers(f"{prefix}{cname}."))
        return out

    def assign_labels(self, prefix=""):
        self.label = prefix.rstrip(".")
        for cname, child in self.children():
            child.assign_labels(f"{prefix}{cname}.")

    def cost_rows(self, in_shape):
        """[(name, kind, out_shape, macs, params)] plus the output shape."""
        rows = []
        shape = in_shape
        for _, child in self.children():
            crows, shape = child.cost_rows(shape)
            rows.extend(crows)
        return rows, shape


def _kaiming_out(rng, shape, fan_out):
    std = math.sqrt(2.0 / fan_out)
    return Tensor(rng.normal(0.0, std, shape).astype(np.float32), requires_grad=True)


class Conv2d(Layer):
    def __init__(self, cin, cout, k, stride=1, padding=0, groups=1, bias=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = ConvSpec(cin, cout, k, stride, padding, groups, has_bias=bias)
        fan_out = k * k * cout // groups
        self.weight = _kaiming_out(rng, (cout, cin // groups, k, k), fan_out)
        self.bias = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True) if bias else None

    def own_params(self):
        named = [("weight", self.weight)]
        if self.bias is not None:
            named.append(("bias", self.bias))
        return named

    def forward(self, x, mode="train"):
        return ops.conv2d(x, self.weight, self.bias, self.spec,
                          name=f"conv2d[{self.label}]")

    def cost_rows(self, in_shape):
        n, c, h, w = in_shape
        s = self.spec
        oh, ow = s.out_hw(h, w)
        macs = s.kernel * s.kernel * (s.in_channels // s.groups) * s.out_channels * oh * ow
        params = self.weight.data.size + (self.bias.data.size if self.bias is not None else 0)
        kind = "depthwise_conv" if s.groups == s.in_channels == s.out_channels and s.groups > 1 \
            else ("pointwise_conv" if s.kernel == 1 else "conv")
        return [(self.label, kind, (n, s.out_channels, oh, ow), macs, params)], \
            (n, s.out_channels, oh, ow)


class TransposedConv2d(Layer):
    def __init__(self, cin, cout, k, stride, padding=0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = ConvSpec(cin, cout, k, stride, padding)
        self.weight = _kaiming_out(rng, (cin, cout, k, k), k * k * cout)

    def own_params(self):
        return [("weight", self.weight)]

    def forward(self, x, mode="train"):
        return ops.transposed_conv2d(x, self.weight, self.spec,
                                     name=f"transposed_conv2d[{self.label}]")

    def cost_rows(self, in_shape):
        n, c, h, w = in_shape
        s = self.spec
        oh = (h - 1) * s.stride - 2 * s.padding + s.kernel
        ow = (w - 1) * s.stride - 2 * s.padding + s.kernel
        macs = s.kernel * s.kernel * s.in_channels * s.out_channels * h * w
        return [(self.label, "transposed_conv", (n, s.out_channels, oh, ow), macs,
                 self.weight.data.size)], (n, s.out_channels, oh, ow)


class BatchNorm2d(Layer):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def own_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def own_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x, mode="train"):
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, mode=mode, momentum=self.momentum,
                             eps=self.eps)

    def cost_rows(self, in_shape):
        # normalization counted as 0 MACs; 4 per channel includes running stats
        return [(self.label, "batchnorm", in_shape, 0, 4 * self.channels)], in_shape


class ReLU6(Layer):
    def forward(self, x, mode="train"):
        return ops.relu6(x)

    def cost_rows(self, in_shape):
        return [], in_shape


class Sequential(Layer):
    def __init__(self, named_layers):
        self._layers = list(named_layers)

    def children(self):
        return list(self._layers)

    def forward(self, x, mode="train"):
        for _, layer in self._layers:
            x = layer.forward(x, mode)
        return x
