"""Behavioral model of a binary-weighted CDAC SAR ADC with capacitor mismatch.

Positions along the transfer curve are expressed in LSB, measured from
``v_ref_neg``.  An ideal converter has its code edges at ``c + 0.5``.

Bit ``i`` of the CDAC is a lumped capacitor of nominal size ``2**i`` unit
caps whose relative deviation is ``theta[i]``.  Together with one dummy unit
cap the array totals ``T = 1 + sum(2**i * (1 + theta[i]))``; the DAC level of
a digital word ``d`` is ``2**N * D(d) / T`` with ``D(d)`` the sum of the
weights of the bits set in ``d``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

MIN_BITS = 8
MAX_BITS = 20

# Relative std of one unit capacitor for the synthetic device population.
DEFAULT_SIGMA_UNIT = 0.01


@dataclass(frozen=True)
class DeviceSpec:
    """Static description of a converter under test.

    ``noise_rms`` is the input-referred Gaussian noise in LSB.
    """

    resolution: int
    v_ref_neg: float = 0.0
    v_ref_pos: float = 1.0
    noise_rms: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not MIN_BITS <= self.resolution <= MAX_BITS:
            raise ValueError(f"resolution must be in [{MIN_BITS}, {MAX_BITS}], got {self.resolution}")
        if not self.v_ref_pos > self.v_ref_neg:
            raise ValueError("v_ref_pos must exceed v_ref_neg")
        if self.noise_rms < 0:
            raise ValueError("noise_rms must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def fsr(self) -> float:
        return self.v_ref_pos - self.v_ref_neg

    @property
    def full_scale(self) -> int:
        return 2**self.resolution

    @property
    def lsb(self) -> float:
        return self.fsr / self.full_scale

    def to_lsb(self, volts):
        """Input voltage -> position on the transfer curve in LSB."""
        return (np.asarray(volts, dtype=float) - self.v_ref_neg) / self.lsb

    def to_volts(self, position):
        return self.v_ref_neg + np.asarray(position, dtype=float) * self.lsb


def check_theta(theta, resolution: int | None = None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1:
        raise ValueError("mismatch vector must be one-dimensional")
    if resolution is not None and theta.size != resolution:
        raise ValueError(f"mismatch vector has {theta.size} entries, expected {resolution}")
    if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) >= 1.0):
        raise ValueError("every mismatch component must be finite with |theta| < 1")
    return theta


def bit_weights(theta) -> np.ndarray:
    """Capacitor weights ``2**i * (1 + theta[i])`` in unit caps."""
    theta = np.asarray(theta, dtype=float)
    return np.exp2(np.arange(theta.size)) * (1.0 + theta)


def dac_sums(weights) -> np.ndarray:
    """``D(d)`` for every word ``d`` in ``0 .. 2**N - 1``, built by doubling."""
    sums = np.zeros(1)
    for w in weights:
        sums = np.concatenate((sums, sums + w))
    return sums


def dac_levels(theta) -> np.ndarray:
    """Normalized comparator thresholds ``2**N * D(d) / T`` for every word."""
    w = bit_weights(theta)
    total = 1.0 + w.sum()
    return dac_sums(w) * (2.0**w.size / total)


def model_edge(theta, c: int) -> float:
    """Closed-form edge between codes ``c`` and ``c + 1`` (LSB).

    >>> model_edge([0.0] * 12, 42)
    42.5
    """
    theta = check_theta(theta)
    n = theta.size
    if not 0 <= c <= 2**n - 2:
        raise IndexError(f"code {c} outside 0..{2**n - 2}")
    w = bit_weights(theta)
    d = c + 1
    level = sum(w[i] for i in range(n) if (d >> i) & 1)
    return 2.0**n * level / (1.0 + w.sum()) - 0.5


def model_edges(theta) -> np.ndarray:
    """Closed-form edges for all ``2**N - 1`` codes."""
    return dac_levels(check_theta(theta))[1:] - 0.5


def sar_search(levels: np.ndarray, u: np.ndarray, resolution: int) -> np.ndarray:
    """Bit trials MSB -> LSB on normalized inputs ``u``."""
    code = np.zeros(u.shape, dtype=np.int64)
    for bit in range(resolution - 1, -1, -1):
        trial = code | (1 << bit)
        code = np.where(u >= levels[trial], trial, code)
    return code


@dataclass(frozen=True)
class SarDevice:
    """Simulated converter with its true mismatch."""

    spec: DeviceSpec
    theta_true: np.ndarray = field(repr=False)

    def __post_init__(self):
        theta = check_theta(self.theta_true, self.spec.resolution).copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta_true", theta)

    @classmethod
    def ideal(cls, spec: DeviceSpec) -> "SarDevice":
        return cls(spec, np.zeros(spec.resolution))

    @property
    def resolution(self) -> int:
        return self.spec.resolution

    @cached_property
    def weights(self) -> np.ndarray:
        return bit_weights(self.theta_true)

    @property
    def total(self) -> float:
        return 1.0 + float(self.weights.sum())

    @cached_property
    def levels(self) -> np.ndarray:
        levels = dac_levels(self.theta_true)
        levels.setflags(write=False)
        return levels


def convert(device: SarDevice, v_in, rng: np.random.Generator | None = None):
    """Convert input voltage(s) to output codes.

    One Gaussian noise draw (``noise_rms`` LSB) is added to each input before
    the bit trials.  Inputs beyond the references clip to 0 or ``2**N - 1``.
    Scalars give an ``int``; arrays give an int64 array of the same shape.
    """
    spec = device.spec
    v = np.asarray(v_in, dtype=float)
    if spec.noise_rms > 0:
        if rng is None:
            raise ValueError("a random generator is required for a noisy device")
        v = v + rng.normal(0.0, spec.noise_rms * spec.lsb, size=v.shape)
    u = (v - spec.v_ref_neg) / spec.lsb + 0.5
    codes = sar_search(device.levels, np.atleast_1d(u), spec.resolution)
    if np.ndim(v_in) == 0:
        return int(codes[0])
    return codes.reshape(v.shape)


class EdgeScan(NamedTuple):
    edges: np.ndarray
    monotone: bool
    # grid positions (LSB) where the transfer decreased; empty when monotone
    violations: np.ndarray


BISECTION_TOL = 2.0**-30


def true_edges(device: SarDevice, check_monotone: bool = True) -> EdgeScan:
    """Ground-truth edges of the noiseless device by bisection.

    For every code ``c`` finds the smallest input producing an output above
    ``c``.  The closed form is not trusted here because mismatch can make the
    DAC non-monotone, which collapses several edges onto one (missing codes).
    """
    n = device.resolution
    fs = 2**n
    levels = device.levels
    target = np.arange(fs - 1)
    lo = np.full(fs - 1, -1.0)
    hi = np.full(fs - 1, fs + 1.0)
    steps = int(np.ceil(np.log2((fs + 2) / BISECTION_TOL)))
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        above = sar_search(levels, mid, n) > target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    edges = hi - 0.5

    monotone, violations = True, np.empty(0)
    if check_monotone:
        grid = -1.0 + np.arange(8 * (fs + 2) + 1) / 8.0
        out = sar_search(levels, grid, n)
        bad = np.flatnonzero(np.diff(out) < 0)
        if bad.size:
            monotone = False
            violations = grid[bad] - 0.5
            log.warning("non-monotone transfer at %d probe points", bad.size)
    return EdgeScan(edges, monotone, violations)


def transfer_edges(theta) -> np.ndarray:
    """Edges of the noiseless SAR transfer for mismatch ``theta``.

    The binary search keeps the transfer monotone even when the DAC is not,
    so an edge sits at the lowest DAC level of any higher word.  Equals
    :func:`model_edges` whenever the DAC levels are increasing.
    """
    levels = dac_levels(check_theta(theta))[1:]
    return np.minimum.accumulate(levels[::-1])[::-1] - 0.5


def sample_mismatch(resolution: int, sigma_unit: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a mismatch vector for a binary-weighted array.

    A ``2**i``-unit capacitor averages ``2**i`` independent unit mismatches,
    so ``theta[i] ~ N(0, sigma_unit**2 / 2**i)``.
    """
    if sigma_unit < 0:
        raise ValueError("sigma_unit must be non-negative")
    std = sigma_unit / np.sqrt(np.exp2(np.arange(resolution)))
    theta = rng.normal(0.0, 1.0, resolution) * std
    redraws = 0
    while np.any(bad := np.abs(theta) >= 1.0):
        redraws += int(bad.sum())
        theta[bad] = rng.normal(0.0, 1.0, int(bad.sum())) * std[bad]
    if redraws:
        log.info("redrew %d mismatch components with |theta| >= 1", redraws)
    return theta
