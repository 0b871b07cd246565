"""Adaptive, model-based INL/DNL estimation for SAR ADCs.

A Kalman filter over the per-bit capacitor mismatch picks the most
informative code edge, measures it with a short local sweep, and updates
the mismatch estimate; the full transfer curve follows from the estimate.
"""

from .adc_model import DeviceSpec, SarDevice, convert, model_edge, sample_mismatch, true_edges
from .estimator import EkfConfig, EkfState, precompute_jacobian, run, select_code
from .metrics import LinearityReport, edges_from_theta, linearity, ramp_histogram_test

__all__ = [
    "DeviceSpec", "SarDevice", "convert", "model_edge", "sample_mismatch", "true_edges",
    "EkfConfig", "EkfState", "precompute_jacobian", "run", "select_code",
    "LinearityReport", "edges_from_theta", "linearity", "ramp_histogram_test",
]
__version__ = "0.1.0"
