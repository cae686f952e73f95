"""Full model assembly: truncated MobileNetV2 encoder plus the lightweight
attention decoder, with init, serialization and pretrained-encoder import."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, fields

import numpy as np

from . import ops, weights
from .blocks import (
    AttentionFusion,
    DepthwiseSeparableConv,
    InvertedResidual,
    UpsampleBlock,
)
from .errors import ConfigError, ShapeError, WeightFormatError
from .layers import BatchNorm2d, Conv2d, Layer, ReLU6, Sequential
from .tensor import Tensor, no_grad

# (expansion t, channels c, repeats n, first stride s) per stage
_MBV2_STAGES = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
]


def _make_divisible(v, divisor=8):
    new_v = max(divisor, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


@dataclass
class NetworkConfig:
    num_classes: int
    input_hw: tuple = (544, 960)
    width_mult: float = 1.0
    se_reduction: int = 4
    decoder_widths: tuple = (96, 32, 24)
    afb_enabled: bool = True
    keep_final_encoder_conv: bool = True
    upsample_kernel: int = 2
    norm_mean: tuple = (0.485, 0.456, 0.406)
    norm_std: tuple = (0.229, 0.224, 0.225)

    def __post_init__(self):
        self.input_hw = tuple(int(v) for v in self.input_hw)
        self.decoder_widths = tuple(int(v) for v in self.decoder_widths)
        self.norm_mean = tuple(float(v) for v in self.norm_mean)
        self.norm_std = tuple(float(v) for v in self.norm_std)
        h, w = self.input_hw
        if h % 32 or w % 32 or h < 32 or w < 32:
            raise ConfigError(f"input size {h}x{w} must be divisible by 32")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if len(self.decoder_widths) != 3 or any(v < 1 for v in self.decoder_widths):
            raise ConfigError(f"decoder widths must be 3 positive ints: {self.decoder_widths}")
        if self.upsample_kernel not in (2, 4):
            raise ConfigError("upsample_kernel must be 2 or 4")
        if any(v % self.se_reduction for v in self.decoder_widths) and self.afb_enabled:
            raise ConfigError(
                f"decoder widths {self.decoder_widths} must be divisible by "
                f"se_reduction {self.se_reduction}"
            )

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "input_hw": list(self.input_hw),
            "width_mult": self.width_mult,
            "se_reduction": self.se_reduction,
            "decoder_widths": list(self.decoder_widths),
            "afb_enabled": self.afb_enabled,
            "keep_final_encoder_conv": self.keep_final_encoder_conv,
            "upsample_kernel": self.upsample_kernel,
            "norm_mean": list(self.norm_mean),
            "norm_std": list(self.norm_std),
        }

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config key(s): {sorted(unknown)}")
        return cls(**d)


class MobileNetV2Encoder(Layer):
    """Standard MobileNetV2 feature extractor (classifier head dropped),
    with taps at strides 4, 8, 16 and 32."""

    def __init__(self, width_mult=1.0, keep_final_conv=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        stem_c = _make_divisible(32 * width_mult)
        self.stem = Sequential([
            ("conv", Conv2d(3, stem_c, 3, 2, 1, rng=rng)),
            ("bn", BatchNorm2d(stem_c)),
            ("act", ReLU6()),
        ])
        self.blocks = []
        self.channel_sequence = [stem_c]
        cin = stem_c
        stride = 2
        out_strides = []
        for t, c, n, s in _MBV2_STAGES:
            cout = _make_divisible(c * width_mult)
            self.channel_sequence.append(cout)
            for i in range(n):
                blk_s = s if i == 0 else 1
                self.blocks.append(InvertedResidual(cin, cout, blk_s, t, rng=rng))
                stride *= blk_s
                out_strides.append(stride)
                cin = cout
        self.keep_final_conv = keep_final_conv
        self.final = None
        if keep_final_conv:
            last_c = _make_divisible(1280 * width_mult) if width_mult > 1.0 else 1280
            self.final = Sequential([
                ("conv", Conv2d(cin, last_c, 1, rng=rng)),
                ("bn", BatchNorm2d(last_c)),
                ("act", ReLU6()),
            ])
            self.channel_sequence.append(last_c)
            cin = last_c
        # tap = last block whose output sits at each stride before further
        # downsampling; stride-32 tap is the encoder output
        self._tap_idx = {}
        for s in (4, 8, 16):
            self._tap_idx[s] = max(i for i, os in enumerate(out_strides) if os == s)
        self.tap_channels = {
            s: self.blocks[i].project.spec.out_channels for s, i in self._tap_idx.items()
        }
        self.tap_channels[32] = cin

    def children(self):
        named = [("stem", self.stem)]
        named += [(f"block{i}", b) for i, b in enumerate(self.blocks)]
        if self.final is not None:
            named.append(("final", self.final))
        return named

    def forward(self, x, mode="train"):
        taps = {}
        h = self.stem.forward(x, mode)
        for i, blk in enumerate(self.blocks):
            h = blk.forward(h, mode)
            for s, idx in self._tap_idx.items():
                if idx == i:
                    taps[s] = h
        if self.final is not None:
            h = self.final.forward(h, mode)
        taps[32] = h
        return taps


class DecoderStage(Layer):
    """Upsample the decoder stream, project the encoder skip, fuse, refine."""

    def __init__(self, cin_prev, width, skip_channels, se_reduction, afb_enabled,
                 up_kernel, rng=None):
        self.up = UpsampleBlock(cin_prev, width, kernel=up_kernel, rng=rng)
        self.skip_proj = Conv2d(skip_channels, width, 1, rng=rng)
        self.afb = AttentionFusion(width, se_reduction, rng=rng) if afb_enabled else None
        self.refine = DepthwiseSeparableConv(width, width, rng=rng)

    def children(self):
        named = [("up", self.up), ("skip_proj", self.skip_proj)]
        if self.afb is not None:
            named.append(("afb", self.afb))
        named.append(("refine", self.refine))
        return named

    def forward(self, skip_feat, prev, mode="train"):
        up = self.up.forward(prev, mode)
        skip = self.skip_proj.forward(skip_feat, mode)
        fused = self.afb.forward(skip, up, mode) if self.afb is not None \
            else ops.add(skip, up)
        return self.refine.forward(fused, mode)

    def stage_cost(self, skip_shape, prev_shape):
        rows, up_shape = self.up.cost_rows(prev_shape)
        srows, skip_shape_out = self.skip_proj.cost_rows(skip_shape)
        rows += srows
        if self.afb is not None:
            arows, _ = self.afb.cost_rows(up_shape)
            rows += arows
        rrows, out_shape = self.refine.cost_rows(up_shape)
        return rows + rrows, out_shape


class Decoder(Layer):
    def __init__(self, cfg: NetworkConfig, tap_channels, rng=None):
        w16, w8, w4 = cfg.decoder_widths
        self.reduce32 = Conv2d(tap_channels[32], w16, 1, rng=rng)
        self.stage16 = DecoderStage(w16, w16, tap_channels[16], cfg.se_reduction,
                                    cfg.afb_enabled, cfg.upsample_kernel, rng=rng)
        self.stage8 = DecoderStage(w16, w8, tap_channels[8], cfg.se_reduction,
                                   cfg.afb_enabled, cfg.upsample_kernel, rng=rng)
        self.stage4 = DecoderStage(w8, w4, tap_channels[4], cfg.se_reduction,
                                   cfg.afb_enabled, cfg.upsample_kernel, rng=rng)

    def children(self):
        return [("reduce32", self.reduce32), ("stage16", self.stage16),
                ("stage8", self.stage8), ("stage4", self.stage4)]

    def forward(self, taps, mode="train"):
        d = self.reduce32.forward(taps[32], mode)
        d = self.stage16.forward(taps[16], d, mode)
        d = self.stage8.forward(taps[8], d, mode)
        return self.stage4.forward(taps[4], d, mode)

    def cost_from_taps(self, tap_shapes):
        rows, d_shape = self.reduce32.cost_rows(tap_shapes[32])
        for s, stage in ((16, self.stage16), (8, self.stage8), (4, self.stage4)):
            srows, d_shape = stage.stage_cost(tap_shapes[s], d_shape)
            rows += srows
        return rows, d_shape


class LWANet(Layer):
    """Encoder-decoder segmentation model; logits come out at 1/4 of the
    input resolution."""

    def __init__(self, config: NetworkConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = MobileNetV2Encoder(config.width_mult,
                                          config.keep_final_encoder_conv, rng)
        self.decoder = Decoder(config, self.encoder.tap_channels, rng)
        self.head = Conv2d(config.decoder_widths[2], config.num_classes, 1,
                           bias=True, rng=rng)
        self.assign_labels()
        self._check_taps()

    def children(self):
        return [("encoder", self.encoder), ("decoder", self.decoder),
                ("head", self.head)]

    def _check_taps(self):
        h, w = self.config.input_hw
        for s in (4, 8, 16, 32):
            if h % s or w % s:
                raise ConfigError(f"input {h}x{w} not divisible by stride {s}")
        if self.config.width_mult == 1.0:
            expect = {4: 24, 8: 32, 16: 96,
                      32: 1280 if self.config.keep_final_encoder_conv else 320}
            if self.encoder.tap_channels != expect:
                raise ShapeError(
                    f"encoder tap channels {self.encoder.tap_channels} != {expect}"
                )

    def _validate_input(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"model input must be [n,3,h,w], got {tuple(x.shape)}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise ShapeError(
                f"input spatial dims {x.shape[2]}x{x.shape[3]} must be divisible by 32"
            )

    def forward(self, x, mode="eval"):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        self._validate_input(x)
        taps = self.encoder.forward(x, mode)
        d = self.decoder.forward(taps, mode)
        return self.head.forward(d, mode)

    def cost_rows(self, in_shape):
        n, c, h, w = in_shape
        if c != 3 or h % 32 or w % 32:
            raise ShapeError(f"cost walk needs [n,3,h,w] divisible by 32, got {in_shape}")
        rows, enc_out = self.encoder.cost_rows(in_shape)
        tap_shapes = {
            s: (n, self.encoder.tap_channels[s], h // s, w // s) for s in (4, 8, 16, 32)
        }
        drows, d_shape = self.decoder.cost_from_taps(tap_shapes)
        hrows, out_shape = self.head.cost_rows(d_shape)
        return rows + drows + hrows, out_shape

    def encoder_taps(self, x, mode="eval"):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        self._validate_input(x)
        return self.encoder.forward(x, mode)

    # --- state handling -------------------------------------------------
    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((k, p.data) for k, p in self.named_parameters().items())
        out.update(self.named_buffers())
        return out

    def load_state_arrays(self, arrays, strict=True):
        state = self.state_arrays()
        missing = [k for k in state if k not in arrays]
        if strict and missing:
            raise WeightFormatError(f"missing tensor(s): {missing[:5]}")
        extra = [k for k in arrays if k not in state]
        if strict and extra:
            raise WeightFormatError(f"unexpected tensor(s): {extra[:5]}")
        for k, dst in state.items():
            if k not in arrays:
                continue
            src = np.asarray(arrays[k])
            if src.shape != dst.shape:
                raise WeightFormatError(
                    f"tensor {k!r}: shape {src.shape} != expected {dst.shape}"
                )
            dst[...] = src

    def normalize(self, images):
        mean = np.asarray(self.config.norm_mean, dtype=np.float32).reshape(1, 3, 1, 1)
        std = np.asarray(self.config.norm_std, dtype=np.float32).reshape(1, 3, 1, 1)
        return (np.asarray(images, dtype=np.float32) - mean) / std

    def predict_masks(self, images, upsample=True):
        """Raw [0,1] images -> class-index masks (argmax of x4-upsampled logits)."""
        with no_grad():
            logits = self.forward(Tensor(self.normalize(images)), mode="eval")
            if upsample:
                logits = ops.bilinear_upsample(logits, 4)
        return logits.data.argmax(axis=1).astype(np.int32)


def build(config: NetworkConfig, seed=0) -> LWANet:
    return LWANet(config, seed=seed)


def save_weights(model: LWANet, path, extra_config=None):
    cfg = {"network": model.config.to_dict()}
    if extra_config:
        cfg.update(extra_config)
    weights.write_weights(path, model.state_arrays(), cfg)


def load_weights(path) -> weights.ParamStore:
    return weights.read_weights(path)


def load_model(path, seed=0) -> LWANet:
    store = weights.read_weights(path)
    if "network" not in store.config:
        raise WeightFormatError("weight file carries no network config echo")
    model = LWANet(NetworkConfig.from_dict(store.config["network"]), seed=seed)
    model.load_state_arrays(store.tensors, strict=True)
    return model


def import_pretrained_encoder(model: LWANet, path) -> LWANet:
    """Replace every encoder tensor from a weight file; decoder untouched.
    Rejected wholesale if any encoder tensor is missing or mis-shaped."""
    store = weights.read_weights(path)
    state = model.state_arrays()
    staged = {}
    for k, dst in state.items():
        if not k.startswith("encoder."):
            continue
        if k not in store.tensors:
            raise WeightFormatError(f"pretrained file lacks encoder tensor {k!r}")
        src = np.asarray(store.tensors[k])
        if src.shape != dst.shape:
            raise WeightFormatError(
                f"pretrained tensor {k!r}: shape {src.shape} != expected {dst.shape}"
            )
        staged[k] = src
    for k, src in staged.items():
        state[k][...] = src
    return model
