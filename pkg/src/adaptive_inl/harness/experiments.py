"""Experiment drivers behind the CLI subcommands.

Every run is a pure function of its :class:`ExperimentConfig`: device ``i``
draws its mismatch, its sweep noise and its histogram noise from dedicated
streams keyed by ``(seed, purpose, i)``.  Data files are two whitespace
separated columns without header; anything timing-related goes to
``timing.txt`` or stdout so that the ``.dat`` files stay byte-reproducible.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from time import perf_counter

import numpy as np

from .. import adc_model, estimator, metrics, rng
from ..adc_model import DeviceSpec, SarDevice
from ..estimator import RunTiming, TraceRow
from ..metrics import LinearityReport
from .config import ConfigError, ExperimentConfig

log = logging.getLogger(__name__)


class InvariantError(RuntimeError):
    """A run finished in a state that violates a checked invariant (exit code 1)."""


@dataclass
class RunRecord:
    rows: list[TraceRow]
    estimate: LinearityReport
    truth: LinearityReport
    theta_hat: np.ndarray
    conversions: int
    timing: RunTiming = field(default_factory=RunTiming)
    inflations: int = 0

    @property
    def delta_inl_max(self) -> float:
        return metrics.compare(self.estimate, self.truth)[0]

    @property
    def delta_dnl_max(self) -> float:
        return metrics.compare(self.estimate, self.truth)[1]


def make_device(cfg: ExperimentConfig, index: int = 0, bits: int | None = None,
                noise: float | None = None) -> SarDevice:
    bits = cfg.bits if bits is None else bits
    noise = cfg.noise if noise is None else noise
    spec = DeviceSpec(bits, noise_rms=noise, seed=cfg.seed)
    theta = adc_model.sample_mismatch(bits, cfg.sigma_unit, rng.stream(cfg.seed, rng.MISMATCH, index))
    return SarDevice(spec, theta)


def ground_truth(device: SarDevice) -> LinearityReport:
    scan = adc_model.true_edges(device)
    if not scan.monotone:
        log.warning("device transfer is not monotone; edges taken from the upward scan")
    return metrics.linearity(scan.edges)


def check_covariance(P: np.ndarray) -> None:
    if np.abs(P - P.T).max() > 1e-12:
        raise InvariantError("covariance lost symmetry")
    if np.linalg.eigvalsh(P).min() < -1e-10 * max(np.trace(P), 0.0):
        raise InvariantError("covariance is not positive semidefinite")


def run_adaptive(cfg: ExperimentConfig, device: SarDevice, index: int = 0, *,
                 trace: bool = True, table=None, truth: LinearityReport | None = None,
                 **overrides) -> RunRecord:
    """Adaptive estimation on one device, checked against its bisection truth."""
    ekf = cfg.estimator(noise_rms=device.spec.noise_rms, **overrides)
    table = table if table is not None else estimator.precompute_jacobian(device.resolution)
    truth = truth if truth is not None else ground_truth(device)
    timing = RunTiming()
    state, rows = estimator.run(device, table, ekf, rng.stream(cfg.seed, rng.NOISE, index),
                                truth=truth if trace else None, timing=timing)
    check_covariance(state.P)
    if len(rows) != state.k:
        raise InvariantError("trace length differs from iteration count")
    est = metrics.linearity(metrics.edges_from_theta(state.theta_hat),
                            conversions=state.k * ekf.samples)
    return RunRecord(rows, est, truth, state.theta_hat, est.conversions, timing,
                     state.inflation_count)


# -- output ------------------------------------------------------------------

def write_columns(path: Path, first, second) -> None:
    """Two-column ASCII data file, one row per line, no header."""
    lines = [f"{a} {_fmt(b)}\n" if isinstance(a, (int, np.integer)) else f"{_fmt(a)} {_fmt(b)}\n"
             for a, b in zip(first, second)]
    with open(path, "w", newline="\n") as fh:
        fh.writelines(lines)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.10g}"


def prepare_out(out: Path) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _codes(n: int) -> list[int]:
    return list(range(n))


def write_trace(out: Path, rows: list[TraceRow], tag: str) -> None:
    it = [r.iteration for r in rows]
    write_columns(out / f"inl_deviation_{tag}.dat", it, [r.delta_inl_max for r in rows])
    write_columns(out / f"dnl_deviation_{tag}.dat", it, [r.delta_dnl_max for r in rows])


def write_linearity(out: Path, report: LinearityReport, prefix: str) -> None:
    write_columns(out / f"{prefix}_inl.dat", _codes(report.inl.size), report.inl)
    write_columns(out / f"{prefix}_dnl.dat", _codes(report.dnl.size), report.dnl)


# -- single ------------------------------------------------------------------

def run_single(cfg: ExperimentConfig, echo=print) -> RunRecord:
    out = prepare_out(cfg.out)
    device = make_device(cfg)
    record = run_adaptive(cfg, device)
    write_linearity(out, record.truth, "true")
    write_linearity(out, record.estimate, "est")
    _, _, d_inl, d_dnl = metrics.compare(record.estimate, record.truth)
    write_columns(out / "diff_inl.dat", _codes(d_inl.size), d_inl)
    write_columns(out / "diff_dnl.dat", _codes(d_dnl.size), d_dnl)
    write_trace(out, record.rows, f"N{cfg.bits}")
    echo(f"single: N={cfg.bits} iterations={len(record.rows)} samples={cfg.samples} "
         f"noise={cfg.noise:g} conversions={record.conversions} "
         f"max|dINL|={record.delta_inl_max:.4f} max|dDNL|={record.delta_dnl_max:.4f} "
         f"missing_true={len(record.truth.missing_codes)} missing_est={len(record.estimate.missing_codes)}")
    return record


# -- grid --------------------------------------------------------------------

def grid_cells(cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    axes = {"resolutions": cfg.resolutions, "sample_counts": cfg.sample_counts,
            "noise_levels": cfg.noise_levels}
    varying = [name for name, values in axes.items() if len(values) > 1]
    if len(varying) > 1:
        raise ConfigError(f"only one grid axis may vary, got {', '.join(varying)}")
    given = [name for name, values in axes.items() if values]
    axis = varying[0] if varying else (given[0] if given else "resolutions")
    fixed = {name: values[0] for name, values in axes.items() if name != axis and values}
    base = replace(cfg, bits=fixed.get("resolutions", cfg.bits),
                   samples=fixed.get("sample_counts", cfg.samples),
                   noise=fixed.get("noise_levels", cfg.noise))
    values = axes[axis] or (10, 12, 14, 16, 18)
    cells = []
    for v in values:
        if axis == "resolutions":
            cells.append((f"N{v}", replace(base, bits=int(v))))
        elif axis == "sample_counts":
            cells.append((f"B{v}", replace(base, samples=int(v))))
        else:
            cells.append((f"S{int(round(v * 100))}", replace(base, noise=float(v))))
    return cells


def _grid_cell(cell):
    tag, cfg = cell
    device = make_device(cfg)
    record = run_adaptive(cfg, device)
    return tag, record.rows


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def run_grid(cfg: ExperimentConfig, echo=print) -> dict[str, list[TraceRow]]:
    out = prepare_out(cfg.out)
    cells = grid_cells(cfg)
    traces = {}
    for tag, rows in _map(_grid_cell, cells, cfg.workers):
        write_trace(out, rows, tag)
        traces[tag] = rows
        echo(f"grid {tag}: dINL_max final={rows[-1].delta_inl_max:.4f} "
             f"dDNL_max final={rows[-1].delta_dnl_max:.4f}")
    return traces


# -- Monte Carlo ---------------------------------------------------------------

@dataclass(frozen=True)
class DeviceOutcome:
    index: int
    ref_pos: float
    est_pos: float
    ref_neg: float
    est_neg: float
    ref_max_abs: float
    est_max_abs: float


def _mc_device(args) -> DeviceOutcome:
    cfg, index = args
    device = make_device(cfg, index)
    record = run_adaptive(cfg, device, index, trace=False)
    t, e = record.truth.inl, record.estimate.inl
    return DeviceOutcome(index, float(t.max()), float(e.max()), float(t.min()), float(e.min()),
                         record.truth.max_abs_inl, record.estimate.max_abs_inl)


@dataclass
class MonteCarloSummary:
    outcomes: list[DeviceOutcome]
    max_abs_error: float
    mean_error: float
    counts: dict[str, int]


def classify(ref_max_abs: float, est_max_abs: float, limit: float) -> str:
    ref_ok, est_ok = ref_max_abs <= limit, est_max_abs <= limit
    if ref_ok and est_ok:
        return "good"
    if ref_ok:
        return "yield_loss"
    if est_ok:
        return "escape"
    return "bad_unit"


def run_montecarlo(cfg: ExperimentConfig, echo=print) -> MonteCarloSummary:
    """Positive and negative INL peaks of every device, reference vs estimate."""
    out = prepare_out(cfg.out)
    outcomes = _map(_mc_device, [(cfg, i) for i in range(cfg.devices)], cfg.workers)
    write_columns(out / "inl_statistic_pos.dat", [o.ref_pos for o in outcomes],
                  [o.est_pos for o in outcomes])
    write_columns(out / "inl_statistic_neg.dat", [o.ref_neg for o in outcomes],
                  [o.est_neg for o in outcomes])
    errors = np.array([[o.est_pos - o.ref_pos, o.est_neg - o.ref_neg] for o in outcomes]).ravel()
    counts = {k: 0 for k in ("good", "yield_loss", "escape", "bad_unit")}
    for o in outcomes:
        counts[classify(o.ref_max_abs, o.est_max_abs, cfg.pass_limit)] += 1
    summary = MonteCarloSummary(outcomes, float(np.abs(errors).max()), float(errors.mean()), counts)
    text = (f"devices {cfg.devices}\nmax_abs_error {summary.max_abs_error:.6f}\n"
            f"mean_error {summary.mean_error:.6f}\npass_limit {cfg.pass_limit:g}\n"
            + "".join(f"{k} {v}\n" for k, v in counts.items()))
    (out / "summary.txt").write_text(text)
    echo(f"montecarlo: devices={cfg.devices} max|y-x|={summary.max_abs_error:.4f} "
         f"mean(y-x)={summary.mean_error:+.4f} " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return summary


# -- timing ------------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    bits: int
    samples: int
    per_code_selection: float
    selection_cv: float
    selection_total: float
    sweep_total: float
    acquisition_total: float
    total_sequential: float
    total_pipelined: float


def bench_selection(cfg: ExperimentConfig, echo=print) -> list[BenchRow]:
    """Time code selection per resolution.

    The per-code figure is the mean over all selections after ``warmup``
    discarded ones.  Acquisition is modelled as ``samples / acquisition_rate``
    per sweep; the pipelined total overlaps it with the next selection.
    """
    if not cfg.resolutions:
        raise ConfigError("bench needs at least one resolution")
    if cfg.iterations < cfg.warmup + 50:
        raise ConfigError(f"bench needs at least {cfg.warmup + 50} iterations")
    out = prepare_out(cfg.out)
    rows = []
    for bits in cfg.resolutions:
        device = make_device(cfg, bits=bits)
        table = estimator.precompute_jacobian(bits)
        ekf = cfg.estimator(noise_rms=device.spec.noise_rms)
        state = estimator.EkfState.initial(bits, ekf.sigma_prior)
        R = ekf.measurement_variance
        for _ in range(cfg.warmup):
            estimator.select_code(state, table, R)
        timing = RunTiming()
        state, trace = estimator.run(device, table, ekf, rng.stream(cfg.seed, rng.NOISE, 0),
                                     timing=timing)
        write_columns(out / f"selected_codes_N{bits}.dat", [r.iteration for r in trace],
                      [r.code for r in trace])
        sel = np.array(timing.selection[: len(trace)])
        acquisition = ekf.samples / cfg.acquisition_rate
        rows.append(BenchRow(
            bits, ekf.samples, float(sel.mean()), float(sel.std() / sel.mean()), float(sel.sum()),
            timing.sweep, acquisition * len(trace), float(sel.sum() + acquisition * len(trace)),
            float(np.maximum(sel, acquisition).sum() + acquisition),
        ))
    lines = ["bits samples per_code_us cv selection_total_ms sweep_sim_ms acquisition_ms "
             "total_sequential_ms total_pipelined_ms\n"]
    for r in rows:
        lines.append(f"{r.bits} {r.samples} {r.per_code_selection * 1e6:.1f} {r.selection_cv:.3f} "
                     f"{r.selection_total * 1e3:.2f} {r.sweep_total * 1e3:.2f} "
                     f"{r.acquisition_total * 1e3:.2f} {r.total_sequential * 1e3:.2f} "
                     f"{r.total_pipelined * 1e3:.2f}\n")
    (out / "timing.txt").write_text("".join(lines))
    for line in lines:
        echo(line.rstrip())
    base = rows[0].per_code_selection
    for r in rows:
        echo(f"ratio t({r.bits})/t({rows[0].bits}) = {r.per_code_selection / base:.1f}")
    return rows


# -- histogram comparison --------------------------------------------------------

@dataclass
class RhtComparison:
    adaptive: RunRecord
    histogram: LinearityReport
    adaptive_delta_inl: float
    histogram_delta_inl: float
    adaptive_seconds: float
    histogram_seconds: float


def run_rht_compare(cfg: ExperimentConfig, echo=print) -> RhtComparison:
    out = prepare_out(cfg.out)
    device = make_device(cfg)
    truth = ground_truth(device)
    t0 = perf_counter()
    record = run_adaptive(cfg, device, trace=False, truth=truth)
    t_adaptive = perf_counter() - t0
    t0 = perf_counter()
    hist = metrics.ramp_histogram_test(device, cfg.hpc, rng.stream(cfg.seed, rng.HISTOGRAM, 0))
    t_hist = perf_counter() - t0
    write_linearity(out, truth, "true")
    write_linearity(out, record.estimate, "est")
    write_linearity(out, hist, "hist_est")
    d_adaptive = metrics.compare(record.estimate, truth)[0]
    d_hist = metrics.compare(hist, truth)[0]
    (out / "comparison.txt").write_text(
        f"adaptive_conversions {record.conversions}\nrht_conversions {hist.conversions}\n"
        f"adaptive_max_abs_dinl {d_adaptive:.6f}\nrht_max_abs_dinl {d_hist:.6f}\n"
        f"adaptive_max_abs_ddnl {metrics.compare(record.estimate, truth)[1]:.6f}\n"
        f"rht_max_abs_ddnl {metrics.compare(hist, truth)[1]:.6f}\n")
    echo(f"rht: adaptive {record.conversions} conversions max|dINL|={d_adaptive:.4f} ({t_adaptive:.2f} s); "
         f"RHT {cfg.hpc} HPC {hist.conversions} conversions max|dINL|={d_hist:.4f} ({t_hist:.2f} s)")
    return RhtComparison(record, hist, d_adaptive, d_hist, t_adaptive, t_hist)
