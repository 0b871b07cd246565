import numpy as np
import pytest

from adaptive_inl import rng
from adaptive_inl.adc_model import DeviceSpec, SarDevice, sample_mismatch


@pytest.fixture
def make_device():
    def factory(bits=12, noise=1.0, sigma_unit=0.01, seed=0, theta=None):
        spec = DeviceSpec(bits, noise_rms=noise, seed=seed)
        if theta is None:
            theta = sample_mismatch(bits, sigma_unit, rng.stream(seed, rng.MISMATCH, 0))
        return SarDevice(spec, np.asarray(theta, dtype=float))
    return factory


def missing_code_theta(bits: int, gap: float) -> np.ndarray:
    """Mismatch whose MSB level sits ``gap - 1`` LSB below the word just beneath it.

    Only the MSB capacitor deviates, which drops DAC(2**(N-1)) under
    DAC(2**(N-1) - 1) and swallows the code just below mid-scale.
    """
    theta = np.zeros(bits)
    lower = 2.0 ** (bits - 1) - 1.0
    theta[-1] = (lower + 1.0 - gap) / 2.0 ** (bits - 1) - 1.0
    return theta
