import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptive_inl import rng
from adaptive_inl.adc_model import DeviceSpec, SarDevice, dac_levels, sar_search
from adaptive_inl.stimulus import (HiResDac, default_sweep_params, execute_sweep, plan_sweep,
                                   summarize, sweep_sensitivity)

DAC = HiResDac(4)


def test_dac_step_divides_lsb():
    assert DAC.step_fraction == Fraction(1, 16)
    assert 16 * DAC.step_fraction == 1
    with pytest.raises(ValueError):
        HiResDac(0)


def test_fig3_configuration_eight_by_eight():
    plan = plan_sweep(42, 42.5, 0.25, 64, DAC)
    assert len(plan.levels) == 8
    assert all(n == 8 for _, n in plan.levels)
    assert plan.samples == 64
    pos = plan.positions()
    assert pos.min() >= 42.25 and pos.max() <= 42.75


def test_single_sample_nearest_center():
    plan = plan_sweep(10, 10.53, 0.25, 1, DAC)
    assert plan.levels == ((168, 1),)  # 10.5 = 168/16 is the grid point nearest 10.53


def test_three_candidates_split_low_first():
    # step 1/16, [c - 3/32, c + 3/32) holds three grid points
    plan = plan_sweep(5, 5.5, 3 / 32, 8, DAC)
    assert [n for _, n in plan.levels] == [3, 3, 2]
    codes = [q for q, _ in plan.levels]
    assert codes == sorted(codes)


def test_empty_range_widens(caplog):
    plan = plan_sweep(5, 5.5 + 1 / 64, 1 / 256, 4, DAC)
    assert len(plan.levels) == 2
    assert "two nearest" in caplog.text


@pytest.mark.parametrize("kwargs", [dict(samples=0), dict(half_span=0.0), dict(center=float("nan"))])
def test_plan_preconditions(kwargs):
    args = dict(target=3, center=3.5, half_span=0.25, samples=8, dac=DAC) | kwargs
    with pytest.raises(ValueError):
        plan_sweep(**args)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 4000.0), st.floats(0.05, 3.0), st.integers(1, 300), st.integers(1, 8))
def test_plan_invariants(center, half_span, samples, extra_bits):
    dac = HiResDac(extra_bits)
    plan = plan_sweep(0, center, half_span, samples, dac)
    assert plan.samples == samples
    codes = [q for q, _ in plan.levels]
    assert codes == sorted(set(codes))
    counts = [n for _, n in plan.levels]
    assert max(counts) - min(counts) <= 1
    assert counts == sorted(counts, reverse=True)
    if half_span >= dac.step:
        pos = plan.positions()
        assert pos.min() >= center - half_span - 1e-9
        assert pos.max() <= center + half_span + 1e-9


def test_default_sweep_params():
    assert default_sweep_params(1.0) == (0.25, 4)
    assert default_sweep_params(0.0) == (0.25, 4)
    assert default_sweep_params(5.0) == (1.25, 4)
    with pytest.raises(ValueError):
        default_sweep_params(-1.0)


class TestResidual:
    def test_balanced(self):
        r = summarize([42] * 4 + [43] * 4, 42)
        assert r.mean_code == 42.5 and r.z == 0.0

    def test_all_above(self):
        assert summarize([43] * 8, 42).z == 0.5

    def test_sign_convention_edge_above_center(self):
        # the edge sits above the sweep center, so most samples stay at c*
        dev = SarDevice.ideal(DeviceSpec(12, noise_rms=0.0))
        plan = plan_sweep(42, 42.5 - 0.1, 0.25, 64, DAC)
        assert execute_sweep(dev, plan, None).z < 0

    def test_noiseless_ideal_brute_force(self):
        n = 12
        dev = SarDevice.ideal(DeviceSpec(n, noise_rms=0.0))
        plan = plan_sweep(42, 42.5, 0.25, 64, DAC)
        result = execute_sweep(dev, plan, None)
        levels = dac_levels(np.zeros(n))
        expected = []
        for q, count in plan.levels:
            u = q / 16 + 0.5
            # enumerate every word; the output is the largest word whose level is <= u
            code = max(d for d in range(2**n) if levels[d] <= u)
            expected += [code] * count
        np.testing.assert_array_equal(result.codes, expected)
        assert result.z == 0.0

    @pytest.mark.parametrize("samples", [2, 8, 16, 64, 128])
    @pytest.mark.parametrize("target", [0, 17, 2047, 4093])
    def test_noiseless_centered_zero(self, target, samples):
        dev = SarDevice.ideal(DeviceSpec(12, noise_rms=0.0))
        plan = plan_sweep(target, target + 0.5, 0.25, samples, DAC)
        assert execute_sweep(dev, plan, None).z == 0.0

    def test_bounds(self):
        dev = SarDevice.ideal(DeviceSpec(10, noise_rms=0.0))
        r = execute_sweep(dev, plan_sweep(3, 900.0, 0.25, 16, DAC), None)
        assert r.codes.min() <= r.mean_code <= r.codes.max()
        assert abs(r.z) <= 2**10

    def test_mean_residual_decreases_with_edge_offset(self):
        gen = rng.stream(11, rng.NOISE)
        offsets = [-0.2, 0.0, 0.2]
        means, actual = [], []
        for off in offsets:
            dev = SarDevice.ideal(DeviceSpec(12, noise_rms=1.0))
            # moving the center down by ``off`` puts the true edge ``off`` above it
            plan = plan_sweep(42, 42.5 - off, 0.25, 64, DAC)
            zs = [execute_sweep(dev, plan, gen).z for _ in range(10_000 // 64 * 4)]
            means.append(np.mean(zs))
            actual.append(42.5 - plan.positions().mean())  # grid quantization moves the center
        assert means[0] > means[1] > means[2]
        slope = (means[2] - means[0]) / (actual[2] - actual[0])
        assert slope == pytest.approx(-sweep_sensitivity(1.0, 0.25), rel=0.1)


def test_sensitivity_limits():
    assert sweep_sensitivity(0.0, 0.25) == pytest.approx(2.0)
    assert sweep_sensitivity(1.0, 0.25) == pytest.approx(1.0, abs=1e-3)
    assert sweep_sensitivity(5.0, 1.25) == pytest.approx(1.0, abs=1e-3)
