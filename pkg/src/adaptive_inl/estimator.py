"""Static-parameter EKF that picks code edges by expected information gain.

Each iteration selects the edge whose predicted variance ``j P j'`` is
largest relative to the measurement noise, sweeps the real converter around
the model's prediction of that edge, and folds the resulting scalar
residual into the mismatch estimate with a rank-one Kalman update.  A
normalized-innovation test inflates the covariance when a residual is
implausibly large for the current confidence.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numba
import numpy as np

from . import adc_model, stimulus
from .adc_model import SarDevice
from .stimulus import HiResDac

log = logging.getLogger(__name__)

DEFAULT_TAU = 9.0
DEFAULT_ALPHA = 1.2
MIN_R = 1e-6


@dataclass(frozen=True)
class JacobianTable:
    """``rows[c, i] = d f_c / d theta_i`` at ``theta = 0`` (LSB per unit mismatch)."""

    resolution: int
    rows: np.ndarray = field(repr=False)

    @property
    def n_codes(self) -> int:
        return self.rows.shape[0]

    def row(self, c: int) -> np.ndarray:
        return self.rows[c]


def jacobian_rows(resolution: int) -> np.ndarray:
    """``2**i * (b_i(c + 1) - (c + 1) / 2**N)`` for every code ``c``; any ``N >= 1``."""
    word = np.arange(1, 2**resolution, dtype=np.int64)
    bit = np.arange(resolution)
    bits = ((word[:, None] >> bit) & 1).astype(float)
    return np.ascontiguousarray(np.exp2(bit) * (bits - (word / 2.0**resolution)[:, None]))


def precompute_jacobian(resolution: int) -> JacobianTable:
    if not adc_model.MIN_BITS <= resolution <= adc_model.MAX_BITS:
        raise ValueError(f"resolution must be in [{adc_model.MIN_BITS}, {adc_model.MAX_BITS}]")
    rows = jacobian_rows(resolution)
    rows.setflags(write=False)
    return JacobianTable(resolution, rows)


@dataclass(frozen=True)
class EkfConfig:
    """Estimator settings.

    ``R`` defaults to the averaged per-sample variance (noise plus
    quantization) of one sweep, rescaled by the sweep sensitivity.  The prior
    on ``theta[i]`` has variance ``sigma_prior**2 / 2**i``.
    """

    noise_rms: float = 1.0
    samples: int = 64
    half_span: float | None = None
    extra_bits: int = stimulus.DEFAULT_EXTRA_BITS
    sigma_prior: float = 2.0 * adc_model.DEFAULT_SIGMA_UNIT
    tau: float = DEFAULT_TAU
    alpha: float = DEFAULT_ALPHA
    R: float | None = None
    max_iterations: int = 200
    epsilon_p: float | None = None
    pipelined: bool = False

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.noise_rms < 0:
            raise ValueError("noise_rms must be non-negative")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1 (1 disables inflation)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.R is not None and not self.R > 0:
            raise ValueError("R must be positive")
        if self.sigma_prior <= 0:
            raise ValueError("sigma_prior must be positive")

    @property
    def sweep_half_span(self) -> float:
        if self.half_span is not None:
            return self.half_span
        return stimulus.default_sweep_params(self.noise_rms)[0]

    @property
    def sensitivity(self) -> float:
        return stimulus.sweep_sensitivity(self.noise_rms, self.sweep_half_span)

    @property
    def measurement_variance(self) -> float:
        if self.R is not None:
            return self.R
        per_sample = self.noise_rms**2 + 1.0 / 12.0
        return max(per_sample / self.samples / self.sensitivity**2, MIN_R)

    @property
    def dac(self) -> HiResDac:
        return HiResDac(self.extra_bits)


@dataclass(frozen=True)
class IterationRecord:
    code: int
    z: float
    innovation: float
    S: float
    nis: float
    gain: float
    inflated: bool


@dataclass
class EkfState:
    theta_hat: np.ndarray
    P: np.ndarray
    k: int = 0
    inflation_count: int = 0
    history: list[IterationRecord] = field(default_factory=list)

    @classmethod
    def initial(cls, resolution: int, sigma_prior: float) -> "EkfState":
        var = sigma_prior**2 / np.exp2(np.arange(resolution))
        return cls(np.zeros(resolution), np.diag(var))

    def copy(self) -> "EkfState":
        return EkfState(self.theta_hat.copy(), self.P.copy(), self.k,
                        self.inflation_count, list(self.history))


@numba.njit(cache=True, nogil=True)
def _quad_forms(rows, P, out):
    # q[r] = rows[r] @ P @ rows[r]; per-row operation order is fixed, so any
    # block of rows yields bit-identical values.
    n_rows, n = rows.shape
    acc = np.empty(n)
    for r in range(n_rows):
        for i in range(n):
            acc[i] = 0.0
        for j in range(n):
            h = rows[r, j]
            for i in range(n):
                acc[i] += P[j, i] * h
        q = 0.0
        for i in range(n):
            q += rows[r, i] * acc[i]
        out[r] = q if q > 0.0 else 0.0


def quad_forms(rows: np.ndarray, P: np.ndarray) -> np.ndarray:
    out = np.empty(rows.shape[0])
    _quad_forms(rows, np.ascontiguousarray(P), out)
    return out


def predicted_variance(state: EkfState, table: JacobianTable, c: int, R: float) -> float:
    j = table.row(c)
    return float(j @ state.P @ j) + R


def gain(state: EkfState, table: JacobianTable, c: int, R: float) -> float:
    q = max(float(table.row(c) @ state.P @ table.row(c)), 0.0)
    return q / (q + R)


def _block_best(rows, P, R, offset):
    q = quad_forms(rows, P)
    g = q / (q + R)
    i = int(np.argmax(g))
    return g[i], offset + i


def select_code(state: EkfState, table: JacobianTable, R: float, partitions: int = 1,
                pool: ThreadPoolExecutor | None = None) -> int:
    """Code with the largest gain; ties go to the lowest code.

    The scan may be split into ``partitions`` contiguous blocks (evaluated on
    ``pool`` when given).  The result does not depend on the split.
    """
    return _select(state.P, table, R, partitions, pool)


def _select(P, table, R, partitions=1, pool=None) -> int:
    if P.shape != (table.resolution, table.resolution):
        raise ValueError("covariance and Jacobian dimensions disagree")
    bounds = np.linspace(0, table.n_codes, max(1, partitions) + 1).astype(int)
    jobs = [(table.rows[a:b], P, R, a) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if pool is not None and len(jobs) > 1:
        results = list(pool.map(lambda job: _block_best(*job), jobs))
    else:
        results = [_block_best(*job) for job in jobs]
    best_gain, best_code = results[0]
    for g, c in results[1:]:
        if g > best_gain:
            best_gain, best_code = g, c
    return best_code


def _posterior_covariance(P: np.ndarray, j: np.ndarray, R: float) -> tuple[np.ndarray, np.ndarray, float]:
    Pj = P @ j
    S = float(j @ Pj) + R
    K = Pj / S
    P_new = P - np.outer(K, j @ P)
    return 0.5 * (P_new + P_new.T), K, S


def update(state: EkfState, table: JacobianTable, c: int, z: float, R: float,
           *, raw_z: float | None = None) -> EkfState:
    """Scalar Kalman update with residual ``z`` observed at code ``c``.

    A non-finite residual is rejected: the state is returned unchanged.
    """
    if not math.isfinite(z):
        log.error("non-finite residual at code %d rejected", c)
        return state
    j = table.row(c)
    P_new, K, S = _posterior_covariance(state.P, j, R)
    if not S > 0:
        raise ValueError("predicted measurement variance must be positive")
    q = S - R
    record = IterationRecord(int(c), z if raw_z is None else raw_z, z, S, z * z / S,
                             q / (q + R), False)
    return EkfState(state.theta_hat + K * z, P_new, state.k + 1, state.inflation_count,
                    state.history + [record])


def inflate_if_needed(state: EkfState, z: float, S: float, tau: float,
                      alpha: float) -> tuple[EkfState, bool]:
    """Scale ``P`` by ``alpha`` when ``z**2 / S`` exceeds ``tau``."""
    if not S > 0:
        raise ValueError("S must be positive")
    if z * z / S <= tau:
        return state, False
    history = state.history
    if history:
        history = history[:-1] + [replace(history[-1], inflated=True)]
    return EkfState(state.theta_hat, alpha * state.P, state.k, state.inflation_count + 1,
                    history), True


def converged(state: EkfState, table: JacobianTable, epsilon_p: float) -> bool:
    """True once every predicted edge standard deviation is <= ``epsilon_p`` LSB."""
    return math.sqrt(float(quad_forms(table.rows, state.P).max())) <= epsilon_p


def _measure(state, device, table, config, rng, c, R):
    """Sweep around the current prediction of edge ``c``; returns (z, innovation)."""
    center = adc_model.model_edge(state.theta_hat, c)
    plan = stimulus.plan_sweep(c, center, config.sweep_half_span, config.samples, config.dac)
    result = stimulus.execute_sweep(device, plan, rng)
    # z < 0 means the edge sits above the prediction; the filter wants
    # f_c(theta) - f_c(theta_hat), hence the sign flip and slope correction.
    return result.z, -result.z / config.sensitivity


def _absorb(state, table, config, c, z, innovation, R):
    new = update(state, table, c, innovation, R, raw_z=z)
    if new is state:
        return state
    S = new.history[-1].S
    new, _ = inflate_if_needed(new, innovation, S, config.tau, config.alpha)
    return new


def step(state: EkfState, device: SarDevice, table: JacobianTable, config: EkfConfig,
         rng: np.random.Generator, code: int | None = None) -> EkfState:
    """One select -> sweep -> update -> inflate iteration."""
    R = config.measurement_variance
    c = select_code(state, table, R) if code is None else code
    z, innovation = _measure(state, device, table, config, rng, c, R)
    return _absorb(state, table, config, c, z, innovation, R)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    code: int
    z: float
    S: float
    nis: float
    gain: float
    delta_inl_max: float = math.nan
    delta_dnl_max: float = math.nan


@dataclass
class RunTiming:
    selection: list[float] = field(default_factory=list)
    sweep: float = 0.0
    wall: float = 0.0


def run(device: SarDevice, table: JacobianTable, config: EkfConfig,
        rng: np.random.Generator, truth=None, *,
        on_iteration: Callable[[EkfState], tuple[float, float]] | None = None,
        timing: RunTiming | None = None) -> tuple[EkfState, list[TraceRow]]:
    """Iterate until ``max_iterations`` or (when ``epsilon_p`` is set) convergence.

    ``truth`` is an optional :class:`~adaptive_inl.metrics.LinearityReport`;
    when given, every trace row carries the INL/DNL error of the current
    estimate against it.  In pipelined mode the next code is chosen on a
    worker thread while the current sweep runs, from the covariance after the
    (residual-independent) Kalman shrinkage but before any inflation.  Since
    inflation scales ``P`` uniformly it cannot move the argmax, so both modes
    pick the same codes up to floating-point ties.
    """
    from time import perf_counter

    from . import metrics

    if config.max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    if device.resolution != table.resolution:
        raise ValueError("device and Jacobian resolutions differ")
    R = config.measurement_variance
    state = EkfState.initial(device.resolution, config.sigma_prior)
    trace: list[TraceRow] = []
    t_start = perf_counter()

    def timed_select(P):
        t0 = perf_counter()
        c = _select(P, table, R)
        if timing is not None:
            timing.selection.append(perf_counter() - t0)
        return c

    pool = ThreadPoolExecutor(max_workers=1) if config.pipelined else None
    try:
        code = timed_select(state.P)
        for _ in range(config.max_iterations):
            pending = None
            if pool is not None:
                P_next, _, _ = _posterior_covariance(state.P, table.row(code), R)
                pending = pool.submit(timed_select, P_next)
            t0 = perf_counter()
            z, innovation = _measure(state, device, table, config, rng, code, R)
            if timing is not None:
                timing.sweep += perf_counter() - t0
            previous_k = state.k
            state = _absorb(state, table, config, code, z, innovation, R)
            if state.k == previous_k:
                code = timed_select(state.P)
                continue

            rec = state.history[-1]
            d_inl = d_dnl = math.nan
            if truth is not None:
                est = metrics.linearity(metrics.edges_from_theta(state.theta_hat))
                d_inl, d_dnl = metrics.compare(est, truth)[:2]
            trace.append(TraceRow(state.k, rec.code, rec.z, rec.S, rec.nis, rec.gain, d_inl, d_dnl))
            if on_iteration is not None:
                on_iteration(state)

            if config.epsilon_p is not None and converged(state, table, config.epsilon_p):
                break
            if state.k >= config.max_iterations:
                break
            code = pending.result() if pending is not None else timed_select(state.P)
    finally:
        if pool is not None:
            pool.shutdown()
    if timing is not None:
        timing.wall = perf_counter() - t_start
    return state, trace
