"""High-resolution DAC stimulus and localized edge sweeps.

A sweep places ``M`` conversions on a fine DAC grid around the predicted
position of one code edge and reduces the output codes to a single residual
``z = mean(y) - (c* + 0.5)``.  With this convention ``z`` is zero for an edge
sitting exactly at the sweep center and negative when the true edge lies
above the center (more samples stay at code ``c*``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import norm

from . import adc_model
from .adc_model import SarDevice

log = logging.getLogger(__name__)

HALF_SPAN_FLOOR = 0.25
DEFAULT_EXTRA_BITS = 4


@dataclass(frozen=True)
class HiResDac:
    """Ideal source with ``extra_bits`` more resolution than the ADC."""

    extra_bits: int = DEFAULT_EXTRA_BITS

    def __post_init__(self):
        if self.extra_bits < 1:
            raise ValueError("extra_bits must be >= 1")

    @property
    def step_fraction(self) -> Fraction:
        return Fraction(1, 2**self.extra_bits)

    @property
    def step(self) -> float:
        """DAC step in LSB of the converter under test."""
        return 2.0**-self.extra_bits

    def position(self, dac_code):
        return np.asarray(dac_code, dtype=float) * self.step


@dataclass(frozen=True)
class SweepPlan:
    target: int
    center: float
    half_span: float
    levels: tuple[tuple[int, int], ...]
    dac: HiResDac

    @property
    def samples(self) -> int:
        return sum(n for _, n in self.levels)

    def positions(self) -> np.ndarray:
        """Stimulus position (LSB) of every planned conversion, in order."""
        codes = np.repeat([q for q, _ in self.levels], [n for _, n in self.levels])
        return self.dac.position(codes)


@dataclass(frozen=True)
class SweepResult:
    codes: np.ndarray
    mean_code: float
    z: float


def default_sweep_params(noise_rms: float) -> tuple[float, int]:
    """(half_span in LSB, extra DAC bits) for a given noise level."""
    if noise_rms < 0:
        raise ValueError("noise_rms must be non-negative")
    return max(HALF_SPAN_FLOOR, 0.25 * noise_rms), DEFAULT_EXTRA_BITS


def plan_sweep(target: int, center: float, half_span: float, samples: int,
               dac: HiResDac) -> SweepPlan:
    """Spread ``samples`` conversions over the DAC codes in ``[center - h, center + h)``.

    With at least as many codes as samples, ``samples`` codes are picked at
    evenly spaced index midpoints (one conversion each).  Otherwise every code
    is used and the samples are split as evenly as possible, extras going to
    the lowest codes.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not half_span > 0:
        raise ValueError("half_span must be positive")
    if not math.isfinite(center):
        raise ValueError("sweep center must be finite")

    inv = 2**dac.extra_bits
    first = math.ceil((center - half_span) * inv)
    stop = math.ceil((center + half_span) * inv)  # exclusive
    candidates = np.arange(first, stop, dtype=np.int64)
    if candidates.size == 0:
        lower = math.floor(center * inv)
        candidates = np.array([lower, lower + 1], dtype=np.int64)
        log.warning("no DAC code within +/-%.3g LSB of %.6f; using the two nearest codes",
                    half_span, center)

    n_codes = candidates.size
    if samples == 1:
        nearest = candidates[np.argmin(np.abs(candidates / inv - center))]
        levels = ((int(nearest), 1),)
    elif n_codes >= samples:
        idx = ((np.arange(samples) + 0.5) * n_codes / samples).astype(np.int64)
        levels = tuple((int(candidates[i]), 1) for i in idx)
    else:
        base, extra = divmod(samples, n_codes)
        levels = tuple((int(q), base + (1 if i < extra else 0)) for i, q in enumerate(candidates))
    return SweepPlan(target, float(center), float(half_span), levels, dac)


def execute_sweep(device: SarDevice, plan: SweepPlan, rng: np.random.Generator) -> SweepResult:
    volts = device.spec.to_volts(plan.positions())
    codes = adc_model.convert(device, volts, rng)
    return summarize(codes, plan.target)


def summarize(codes, target: int) -> SweepResult:
    codes = np.asarray(codes, dtype=np.int64)
    mean_code = float(codes.mean())
    return SweepResult(codes, mean_code, mean_code - target - 0.5)


def sweep_sensitivity(noise_rms: float, half_span: float) -> float:
    """Slope ``-dE[z]/d(edge offset)`` of the residual.

    Assumes the edges near the probed one are unit spaced and shift together,
    the sweep covers ``[-h, h)`` uniformly, and the input noise is Gaussian.
    Tends to ``1 / (2h)`` without noise (only the probed edge is crossed) and
    to 1 once the noise smears the sweep over many codes.
    """
    h = half_span
    reach = int(math.ceil(h + 8.0 * noise_rms)) + 1
    k = np.arange(-reach, reach + 1, dtype=float)
    if noise_rms > 0:
        covered = norm.cdf((h - k) / noise_rms) - norm.cdf((-h - k) / noise_rms)
    else:
        covered = ((k >= -h) & (k < h)).astype(float)
    return float(covered.sum() / (2.0 * h))
