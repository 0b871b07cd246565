import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from adaptive_inl import adc_model, rng
from adaptive_inl.adc_model import DeviceSpec, SarDevice, model_edges
from adaptive_inl.metrics import (compare, edges_from_theta, endpoint_inl, linearity,
                                  ramp_histogram_test, truth_report)

IDEAL = np.arange(255) + 0.5
jitter = arrays(float, 255, elements=st.floats(-0.3, 0.3))


def test_ideal_edges():
    rep = linearity(IDEAL)
    assert rep.max_abs_dnl == 0 and rep.max_abs_inl == 0 and rep.missing_codes == ()
    assert rep.resolution == 8


def test_missing_code():
    edges = IDEAL.copy()
    edges[10] = edges[11]
    rep = linearity(edges)
    assert rep.dnl[10] == -1.0
    assert 10 in rep.missing_codes


def test_too_few_edges():
    with pytest.raises(ValueError):
        linearity([0.5])


@settings(max_examples=100, deadline=None)
@given(jitter)
def test_dnl_definition_and_telescoping(noise):
    edges = IDEAL + noise
    rep = linearity(edges)
    np.testing.assert_array_equal(rep.dnl, np.diff(edges) - 1)
    assert rep.dnl.sum() == pytest.approx(edges[-1] - edges[0] - (edges.size - 1), abs=1e-9)
    assert rep.inl[0] == rep.inl[-1] == 0.0


@settings(max_examples=100, deadline=None)
@given(jitter, st.floats(-100, 100), st.floats(0.5, 2.0))
def test_affine_invariance(noise, a, b):
    edges = IDEAL + noise
    np.testing.assert_allclose(endpoint_inl(a + b * edges), endpoint_inl(edges), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(jitter)
def test_inl_from_dnl_cumsum(noise):
    edges = IDEAL + noise
    rep = linearity(edges)
    raw = np.concatenate(([0.0], np.cumsum(rep.dnl)))
    # remove the straight line through the end points of the accumulated DNL
    line = raw[-1] * np.arange(edges.size) / (edges.size - 1)
    scale = (edges.size - 1) / (edges[-1] - edges[0])
    np.testing.assert_allclose((raw - line) * scale, rep.inl, atol=1e-9)


def test_edges_from_theta():
    np.testing.assert_array_equal(edges_from_theta(np.zeros(8)), IDEAL)
    np.testing.assert_allclose(edges_from_theta([0.0, 0.1]), [0.452381, 1.595238, 2.547619], atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 10, elements=st.floats(-0.003, 0.003)))
def test_edges_from_theta_matches_direct_on_monotone(theta):
    assume(np.all(np.diff(adc_model.dac_levels(theta)) > 0))
    direct = np.array([adc_model.model_edge(theta, c) for c in range(2**10 - 1)])
    np.testing.assert_allclose(edges_from_theta(theta), direct, atol=1e-12, rtol=0)


class TestCompare:
    def test_identity(self):
        rep = linearity(IDEAL + 0.01 * np.sin(np.arange(255)))
        assert compare(rep, rep)[:2] == (0.0, 0.0)

    def test_shift(self):
        truth = linearity(IDEAL)
        bump = np.zeros(255)
        bump[1:-1] = 0.1
        est = linearity(IDEAL + bump)
        # the endpoints anchor the correction line, so the bump survives as INL
        assert compare(est, truth)[0] == pytest.approx(0.1)

    @settings(max_examples=50, deadline=None)
    @given(jitter, jitter)
    def test_brute_force(self, a, b):
        ra, rb = linearity(IDEAL + a), linearity(IDEAL + b)
        d_inl, d_dnl, inl, dnl = compare(ra, rb)
        assert d_inl == max(abs(x - y) for x, y in zip(ra.inl, rb.inl))
        assert d_dnl == max(abs(x - y) for x, y in zip(ra.dnl, rb.dnl))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compare(linearity(IDEAL), linearity(np.arange(511) + 0.5))


class TestRamp:
    def test_ideal_noiseless(self):
        dev = SarDevice.ideal(DeviceSpec(10, noise_rms=0.0))
        rep = ramp_histogram_test(dev, 16, None)
        assert rep.conversions == 2**10 * 16
        assert rep.max_abs_dnl <= 1 / 16
        np.testing.assert_array_equal(rep.dnl, 0.0)
        np.testing.assert_array_equal(rep.inl, 0.0)

    def test_rejects_zero_hpc(self):
        with pytest.raises(ValueError):
            ramp_histogram_test(SarDevice.ideal(DeviceSpec(8, noise_rms=0.0)), 0, None)

    def test_noise_visible(self):
        peaks = []
        for seed in range(20):
            dev = SarDevice.ideal(DeviceSpec(12, noise_rms=1.0))
            peaks.append(ramp_histogram_test(dev, 128, rng.stream(seed, rng.HISTOGRAM)).max_abs_dnl)
        assert min(peaks) >= 0.05

    def test_converges_with_hpc(self, make_device):
        for seed in range(10):
            dev = make_device(bits=10, seed=seed)
            truth = truth_report(dev)
            errors = [compare(ramp_histogram_test(dev, hpc, rng.stream(seed, rng.HISTOGRAM, hpc)),
                              truth)[1] for hpc in (32, 1024)]
            assert errors[1] <= errors[0]

    def test_noiseless_mismatch_matches_truth(self, make_device):
        dev = make_device(bits=10, noise=0.0, seed=5)
        rep = ramp_histogram_test(dev, 256, None)
        assert compare(rep, truth_report(dev))[0] <= 1 / 256 + 1e-9
