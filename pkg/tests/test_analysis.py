"""Static cost model: layer counts, the separable/standard ratio, model-level
decomposition, and the latency harness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lwanet.analysis import (
    CONVENTION,
    DSConvSpec,
    benchmark_latency,
    count_layer,
    count_model,
    eq1_ratio,
)
from lwanet.network import NetworkConfig, build
from lwanet.ops import ConvSpec


class TestCountLayer:
    def test_standard_conv_example(self):
        # 3x3, 32 -> 64 channels on a 16x16 map
        macs, params = count_layer(ConvSpec(32, 64, 3, 1, 1), (1, 32, 16, 16))
        assert macs == 4_718_592
        assert params == 9 * 32 * 64

    def test_separable_pair_example(self):
        macs, params = count_layer(DSConvSpec(32, 64, 3), (1, 32, 16, 16))
        assert macs == 73_728 + 524_288 == 598_016
        assert params == 9 * 32 + 32 * 64 + 4 * 32 + 4 * 64
        assert 598_016 / 4_718_592 == eq1_ratio(3, 32, 64)

    def test_bias_counted(self):
        _, p_no = count_layer(ConvSpec(8, 8, 1), (1, 8, 4, 4))
        _, p_bias = count_layer(ConvSpec(8, 8, 1, has_bias=True), (1, 8, 4, 4))
        assert p_bias - p_no == 8

    def test_grouped_conv_divides_macs(self):
        full, _ = count_layer(ConvSpec(16, 16, 3, 1, 1), (1, 16, 8, 8))
        dw, _ = count_layer(ConvSpec(16, 16, 3, 1, 1, groups=16), (1, 16, 8, 8))
        assert full == dw * 16

    def test_unknown_spec_rejected(self):
        with pytest.raises(TypeError):
            count_layer(object(), (1, 3, 4, 4))


class TestRatio:
    @given(st.integers(1, 7), st.integers(1, 512), st.integers(1, 512))
    @settings(max_examples=80, deadline=None)
    def test_exactly_matches_integer_count_ratio(self, k, d1, d2):
        # both costs taken over the same m x n output map
        std, _ = count_layer(ConvSpec(d1, d2, k, 1, 0), (1, d1, 16 + k - 1, 16 + k - 1))
        sep, _ = count_layer(DSConvSpec(d1, d2, k), (1, d1, 16, 16))
        assert sep / std == eq1_ratio(k, d1, d2)

    def test_closed_form(self):
        assert eq1_ratio(3, 32, 64) == pytest.approx(1 / 64 + 1 / 9, rel=1e-15)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            eq1_ratio(0, 4, 4)


@pytest.fixture(scope="module")
def report():
    model = build(NetworkConfig(num_classes=11, input_hw=(544, 960)), seed=0)
    return count_model(model, (1, 3, 544, 960))


class TestModelCosts:
    def test_encoder_gflops(self, report):
        enc = report.stage_macs("encoder")
        assert enc == pytest.approx(3.11e9, rel=0.05)

    def test_decoder_budget(self, report):
        assert report.stage_macs("decoder") + report.stage_macs("head") <= 0.30e9

    def test_encoder_dominates(self, report):
        assert report.stage_summary()["encoder"]["percent"] > 85.0

    def test_total_in_paper_band(self, report):
        assert 3.0e9 < report.total_macs < 3.6e9

    def test_percentages_sum_to_hundred(self, report):
        total = sum(s["percent"] for s in report.stage_summary().values())
        assert total == pytest.approx(100.0, abs=1e-9)

    def test_params_equal_state_tensor_count(self, report):
        model = build(NetworkConfig(num_classes=11, input_hw=(544, 960)), seed=0)
        n_state = sum(v.size for v in model.state_arrays().values())
        assert report.total_params == n_state

    def test_area_linear_scaling(self):
        model = build(NetworkConfig(num_classes=3, input_hw=(64, 64)), seed=0)
        small = count_model(model, (1, 3, 64, 64)).total_macs
        big = count_model(model, (1, 3, 128, 128)).total_macs
        assert big / small == pytest.approx(4.0, rel=1e-3)

    def test_batch_independent(self, report):
        # MACs and params are reported per sample, regardless of batch size
        model = build(NetworkConfig(num_classes=11, input_hw=(544, 960)), seed=0)
        r2 = count_model(model, (4, 3, 544, 960))
        assert r2.total_params == report.total_params
        assert r2.total_macs == report.total_macs

    def test_json_and_table_render(self, report):
        js = report.to_json()
        assert js["convention"] == CONVENTION
        assert js["total_macs"] == report.total_macs
        table = report.format_table()
        assert "encoder" in table and "GMACs" in table


class TestLatency:
    def test_harness_reports_and_orders(self):
        model = build(NetworkConfig(num_classes=3, input_hw=(64, 64)), seed=0)
        fast = benchmark_latency(model, (32, 32), warmup=1, iters=3)
        slow = benchmark_latency(model, (96, 96), warmup=1, iters=3)
        for r in (fast, slow):
            assert r["mean_ms"] > 0 and r["fps"] > 0 and r["iters"] == 3
        assert fast["mean_ms"] < slow["mean_ms"]
