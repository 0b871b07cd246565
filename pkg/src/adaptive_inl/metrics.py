"""Static linearity metrics and the ramp-histogram reference test."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import adc_model
from .adc_model import SarDevice

MISSING_CODE_TOL = 1e-9
_RAMP_CHUNK = 1 << 20


@dataclass(frozen=True)
class LinearityReport:
    """Edges, DNL and endpoint-corrected INL of one transfer curve (all in LSB).

    ``dnl[c] = edges[c + 1] - edges[c] - 1``, i.e. the width error of the
    code bounded by edges ``c`` and ``c + 1``.
    """

    edges: np.ndarray = field(repr=False)
    dnl: np.ndarray = field(repr=False)
    inl: np.ndarray = field(repr=False)
    max_abs_dnl: float
    max_abs_inl: float
    signed_max_inl: float
    missing_codes: tuple[int, ...]
    conversions: int = 0

    @property
    def resolution(self) -> int:
        return int(np.log2(self.edges.size + 1))


def endpoint_inl(edges: np.ndarray) -> np.ndarray:
    """INL after removing offset and gain with the line through the end edges."""
    edges = np.asarray(edges, dtype=float)
    ideal = np.arange(edges.size) + 0.5
    scale = (ideal[-1] - ideal[0]) / (edges[-1] - edges[0])
    corrected = ideal[0] + (edges - edges[0]) * scale
    inl = corrected - ideal
    inl[0] = inl[-1] = 0.0
    return inl


def linearity(edges, conversions: int = 0) -> LinearityReport:
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2:
        raise ValueError("need at least two code edges")
    dnl = np.diff(edges) - 1.0
    inl = endpoint_inl(edges)
    peak = int(np.argmax(np.abs(inl)))
    missing = tuple(int(c) for c in np.flatnonzero(dnl <= -1.0 + MISSING_CODE_TOL))
    return LinearityReport(edges, dnl, inl, float(np.abs(dnl).max()), float(np.abs(inl[peak])),
                           float(inl[peak]), missing, conversions)


def edges_from_theta(theta) -> np.ndarray:
    """All code edges implied by a mismatch vector.

    Uses the converter's actual (monotone) transfer, which coincides with the
    closed-form edge model unless the DAC levels fold back; then the
    collapsed edges show up as missing codes, as they would on silicon.
    """
    return adc_model.transfer_edges(theta)


def compare(est: LinearityReport, truth: LinearityReport):
    """``(max |dINL|, max |dDNL|, dINL, dDNL)`` of an estimate against truth."""
    if est.inl.shape != truth.inl.shape:
        raise ValueError("reports cover different resolutions")
    d_inl = est.inl - truth.inl
    d_dnl = est.dnl - truth.dnl
    return float(np.abs(d_inl).max()), float(np.abs(d_dnl).max()), d_inl, d_dnl


def truth_report(device: SarDevice) -> LinearityReport:
    return linearity(adc_model.true_edges(device, check_monotone=False).edges)


def ramp_histogram_test(device: SarDevice, hits_per_code: int,
                        rng: np.random.Generator) -> LinearityReport:
    """Linearity from a code histogram under an ideal ramp.

    The ramp has ``2**N * hits_per_code`` evenly spaced points covering one
    LSB beyond each outer edge.  Edges follow from cumulative counts, so the
    DNL of every inner code is ``count / hits_per_code - 1``; the two outer
    bins are unbounded and do not enter the DNL.
    """
    if hits_per_code < 1:
        raise ValueError("hits_per_code must be >= 1")
    fs = device.spec.full_scale
    total = fs * hits_per_code
    step = 1.0 / hits_per_code
    start = -0.5
    counts = np.zeros(fs, dtype=np.int64)
    for first in range(0, total, _RAMP_CHUNK):
        k = np.arange(first, min(first + _RAMP_CHUNK, total))
        x = start + (k + 0.5) * step
        codes = adc_model.convert(device, device.spec.to_volts(x), rng)
        counts += np.bincount(codes, minlength=fs)
    edges = start + np.cumsum(counts[:-1]) * step
    return linearity(edges, conversions=total)
