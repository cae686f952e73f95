"""Model assembly: encoder taps, decoder wiring, determinism, config."""

import numpy as np
import pytest

from lwanet import network
from lwanet.errors import ConfigError, ShapeError
from lwanet.network import LWANet, MobileNetV2Encoder, NetworkConfig, build
from lwanet.tensor import Tensor


@pytest.fixture(scope="module")
def small_model():
    return build(NetworkConfig(num_classes=3, input_hw=(64, 64)), seed=0)


class TestConfig:
    def test_rejects_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus_key"):
            NetworkConfig.from_dict({"num_classes": 3, "bogus_key": 1})

    def test_rejects_indivisible_input(self):
        with pytest.raises(ConfigError):
            NetworkConfig(num_classes=3, input_hw=(60, 64))

    def test_round_trip(self):
        cfg = NetworkConfig(num_classes=11, input_hw=(544, 960), afb_enabled=False)
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg

    def test_rejects_single_class(self):
        with pytest.raises(ConfigError):
            NetworkConfig(num_classes=1)


class TestEncoder:
    def test_channel_sequence_width_one(self):
        enc = MobileNetV2Encoder(width_mult=1.0)
        assert enc.channel_sequence == [32, 16, 24, 32, 64, 96, 160, 320, 1280]

    def test_channel_sequence_no_final_conv(self):
        enc = MobileNetV2Encoder(width_mult=1.0, keep_final_conv=False)
        assert enc.channel_sequence == [32, 16, 24, 32, 64, 96, 160, 320]

    def test_tap_channels(self):
        enc = MobileNetV2Encoder(width_mult=1.0)
        assert enc.tap_channels == {4: 24, 8: 32, 16: 96, 32: 1280}

    def test_width_multiplier_rounds_to_eight(self):
        enc = MobileNetV2Encoder(width_mult=0.5)
        # every stage width divisible by 8
        assert all(c % 8 == 0 for c in enc.channel_sequence)

    def test_seventeen_blocks(self):
        enc = MobileNetV2Encoder()
        assert len(enc.blocks) == 17

    def test_tap_shapes(self, small_model, rng):
        x = rng.random((1, 3, 64, 64)).astype(np.float32)
        taps = small_model.encoder_taps(x)
        assert {s: t.shape for s, t in taps.items()} == {
            4: (1, 24, 16, 16), 8: (1, 32, 8, 8),
            16: (1, 96, 4, 4), 32: (1, 1280, 2, 2),
        }


class TestForward:
    def test_logits_quarter_resolution(self, small_model, rng):
        x = rng.random((2, 3, 64, 64)).astype(np.float32)
        y = small_model.forward(Tensor(x), mode="eval")
        assert y.shape == (2, 3, 16, 16)

    def test_full_scale_logits_shape_from_cost_walk(self):
        # 960x544 input, 11 classes -> [n, 11, 136, 240] without running a forward
        model = build(NetworkConfig(num_classes=11, input_hw=(544, 960)), seed=0)
        _, out_shape = model.cost_rows((1, 3, 544, 960))
        assert tuple(out_shape) == (1, 11, 136, 240)

    def test_eval_deterministic(self, small_model, rng):
        x = rng.random((1, 3, 64, 64)).astype(np.float32)
        y1 = small_model.forward(Tensor(x), mode="eval").data
        y2 = small_model.forward(Tensor(x), mode="eval").data
        np.testing.assert_array_equal(y1, y2)

    def test_train_mode_mutates_only_bn_stats(self, rng):
        model = build(NetworkConfig(num_classes=3, input_hw=(64, 64)), seed=0)
        params_before = {k: v.data.copy() for k, v in model.named_parameters().items()}
        buffers_before = {k: v.copy() for k, v in model.named_buffers().items()}
        model.forward(Tensor(rng.random((2, 3, 64, 64)).astype(np.float32)), mode="train")
        for k, v in model.named_parameters().items():
            np.testing.assert_array_equal(v.data, params_before[k])
        changed = [k for k, v in model.named_buffers().items()
                   if not np.array_equal(v, buffers_before[k])]
        assert changed and all("running_" in k for k in changed)

    def test_rejects_bad_input(self, small_model):
        with pytest.raises(ShapeError):
            small_model.forward(Tensor(np.zeros((1, 4, 64, 64))))
        with pytest.raises(ShapeError):
            small_model.forward(Tensor(np.zeros((1, 3, 60, 64))))

    def test_predict_masks_full_resolution(self, small_model, rng):
        masks = small_model.predict_masks(rng.random((1, 3, 64, 64)).astype(np.float32))
        assert masks.shape == (1, 64, 64)
        assert masks.dtype == np.int32
        assert masks.min() >= 0 and masks.max() < 3


class TestParameters:
    def test_all_params_receive_gradient(self, rng):
        from lwanet.autodiff import backward
        model = build(NetworkConfig(num_classes=3, input_hw=(64, 64)), seed=0)
        params = model.named_parameters()
        loss = model.forward(
            Tensor(rng.random((2, 3, 64, 64)).astype(np.float32)), mode="train").sum()
        grads = backward(loss, params)
        dead = [k for k in params if not np.any(grads[k])]
        assert dead == []

    def test_afb_toggle_changes_only_gate_params(self):
        cfg_on = NetworkConfig(num_classes=3, input_hw=(64, 64), afb_enabled=True)
        cfg_off = NetworkConfig(num_classes=3, input_hw=(64, 64), afb_enabled=False)
        on = set(build(cfg_on, seed=0).named_parameters())
        off = set(build(cfg_off, seed=0).named_parameters())
        extra = on - off
        assert off <= on
        # 3 decoder stages x 2 branches x (squeeze + excite) x (weight + bias)
        assert len(extra) == 3 * 2 * 2 * 2
        assert all("gate" in k for k in extra)

    def test_param_count_at_width_one(self, small_model):
        n_trainable = sum(p.data.size for p in small_model.named_parameters().values())
        # MobileNetV2 backbone dominates; full model sits near the 2-3 M regime
        assert 2.0e6 < n_trainable < 3.0e6

    def test_state_includes_running_stats(self, small_model):
        state = small_model.state_arrays()
        assert any(k.endswith("running_mean") for k in state)
        assert any(k.endswith("running_var") for k in state)

    def test_build_deterministic(self):
        cfg = NetworkConfig(num_classes=3, input_hw=(64, 64))
        a = build(cfg, seed=7).state_arrays()
        b = build(cfg, seed=7).state_arrays()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        c = build(cfg, seed=8).state_arrays()
        assert any(not np.array_equal(a[k], c[k]) for k in a)
