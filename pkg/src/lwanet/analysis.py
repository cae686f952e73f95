"""Static cost model (multiply-accumulates and parameters) plus a wall-clock
latency harness.

The counting convention is 1 MAC = 1 FLOP, matching lightweight-network
literature that reports MobileNetV2 at ~0.3 G for 224x224 inputs.
Batch-norm, activations and pooling count as zero MACs; batch-norm
contributes 4 parameters per channel (scale, shift, running mean/var).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .ops import ConvSpec
from .tensor import Tensor, no_grad

CONVENTION = "1 MAC = 1 FLOP"


@dataclass(frozen=True)
class DSConvSpec:
    """Descriptor for a depthwise separable k x k + 1 x 1 pair (stride 1)."""

    in_channels: int
    out_channels: int
    kernel: int

    def __post_init__(self):
        if self.kernel < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"invalid depthwise separable spec: {self}")


@dataclass
class LayerCost:
    name: str
    kind: str
    out_shape: tuple
    macs: int
    params: int


@dataclass
class CostReport:
    rows: list
    input_shape: tuple
    convention: str = CONVENTION
    flops_factor: int = 1  # 2 would report multiply and add separately

    @property
    def total_macs(self):
        return sum(r.macs for r in self.rows)

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    def stage_macs(self, prefix):
        return sum(r.macs for r in self.rows if r.name.startswith(prefix))

    def stage_summary(self):
        total = max(self.total_macs, 1)
        stages = {}
        for stage in ("encoder", "decoder", "head"):
            macs = self.stage_macs(stage)
            params = sum(r.params for r in self.rows if r.name.startswith(stage))
            stages[stage] = {
                "macs": macs * self.flops_factor,
                "params": params,
                "percent": 100.0 * macs / total,
            }
        return stages

    def to_json(self):
        return {
            "input_shape": list(self.input_shape),
            "convention": self.convention,
            "flops_factor": self.flops_factor,
            "layers": [
                {
                    "name": r.name,
                    "kind": r.kind,
                    "out_shape": list(r.out_shape),
                    "macs": r.macs * self.flops_factor,
                    "params": r.params,
                }
                for r in self.rows
            ],
            "stages": self.stage_summary(),
            "total_macs": self.total_macs * self.flops_factor,
            "total_params": self.total_params,
        }

    def format_table(self):
        lines = []
        widths = (44, 17, 18, 14, 12)
        header = ("layer", "kind", "output", "MACs", "params")
        lines.append("".join(h.ljust(w) for h, w in zip(header, widths)))
        lines.append("-" * sum(widths))
        for r in self.rows:
            lines.append(
                r.name.ljust(widths[0])
                + r.kind.ljust(widths[1])
                + str(tuple(r.out_shape)).ljust(widths[2])
                + f"{r.macs * self.flops_factor:,}".rjust(widths[3] - 2).ljust(widths[3])
                + f"{r.params:,}".rjust(widths[4] - 2)
            )
        lines.append("-" * sum(widths))
        for stage, info in self.stage_summary().items():
            lines.append(
                f"{stage:<10} {info['macs'] / 1e9:9.4f} GMACs  "
                f"{info['percent']:6.2f}%  {info['params']:,} params"
            )
        lines.append(
            f"{'total':<10} {self.total_macs * self.flops_factor / 1e9:9.4f} GMACs"
            f"          {self.total_params:,} params  [{self.convention}]"
        )
        return "\n".join(lines)


def count_layer(spec, input_shape):
    """(macs, params) for a bare conv spec or a depthwise-separable pair."""
    n, c, h, w = input_shape
    if isinstance(spec, ConvSpec):
        oh, ow = spec.out_hw(h, w)
        macs = (spec.kernel * spec.kernel * (spec.in_channels // spec.groups)
                * spec.out_channels * oh * ow)
        params = (spec.kernel * spec.kernel * (spec.in_channels // spec.groups)
                  * spec.out_channels)
        if spec.has_bias:
            params += spec.out_channels
        return macs, params
    if isinstance(spec, DSConvSpec):
        k, d1, d2 = spec.kernel, spec.in_channels, spec.out_channels
        macs = k * k * d1 * h * w + d1 * d2 * h * w
        params = k * k * d1 + d1 * d2 + 4 * d1 + 4 * d2
        return macs, params
    raise TypeError(f"unsupported spec type {type(spec).__name__}")


def eq1_ratio(k, d1, d2):
    """Depthwise-separable / standard MAC ratio: 1/d2 + 1/k^2.

    Computed as a single fraction so it equals the ratio of integer MAC
    counts bit-for-bit.
    """
    if k < 1 or d1 < 1 or d2 < 1:
        raise ValueError(f"arguments must be positive, got k={k} d1={d1} d2={d2}")
    return (k * k + d2) / (k * k * d2)


def count_model(model, input_shape) -> CostReport:
    rows, _ = model.cost_rows(tuple(input_shape))
    return CostReport(rows=[LayerCost(*r) for r in rows], input_shape=tuple(input_shape))


def benchmark_latency(model, input_hw, warmup=2, iters=10, seed=0) -> dict:
    """Wall-clock eval-mode forward latency; input tensor preparation
    (uint8 frame -> normalized float32) is inside the timed region."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    h, w = input_hw
    rng = np.random.default_rng(seed)
    frame = rng.integers(0, 256, (1, 3, h, w), dtype=np.uint8)
    times = []
    with no_grad():
        for i in range(warmup + iters):
            t0 = time.perf_counter()
            x = model.normalize(frame.astype(np.float32) / 255.0)
            model.forward(Tensor(x), mode="eval")
            dt = time.perf_counter() - t0
            if i >= warmup:
                times.append(dt * 1000.0)
    arr = np.array(times)
    mean = float(arr.mean())
    return {
        "input_hw": [h, w],
        "iters": iters,
        "warmup": warmup,
        "mean_ms": mean,
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
        "fps": 1000.0 / mean,
    }
