"""Experiment configuration: mode defaults, ``key=value`` files, CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .. import adc_model
from ..estimator import EkfConfig

MODES = ("single", "grid", "montecarlo", "bench", "rht")


class ConfigError(ValueError):
    """Bad configuration or usage; the CLI maps it to exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "single"
    seed: int = 0
    out: Path = Path("results")
    bits: int = 12
    noise: float = 1.0
    samples: int = 64
    iterations: int = 200
    sigma_unit: float = adc_model.DEFAULT_SIGMA_UNIT
    sigma_prior: float | None = None
    tau: float = 9.0
    alpha: float = 1.2
    r: float | None = None
    extra_bits: int = 4
    half_span: float | None = None
    epsilon_p: float | None = None
    pipelined: bool = False
    # grid axes; at most one may hold several values
    resolutions: tuple[int, ...] = ()
    sample_counts: tuple[int, ...] = ()
    noise_levels: tuple[float, ...] = ()
    devices: int = 100
    pass_limit: float = 2.0
    hpc: int = 128
    workers: int = 1
    warmup: int = 5
    acquisition_rate: float = 1e6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.devices < 1:
            raise ConfigError("devices must be >= 1")
        if self.hpc < 1:
            raise ConfigError("hpc must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not adc_model.MIN_BITS <= self.bits <= adc_model.MAX_BITS:
            raise ConfigError(f"bits must be in [{adc_model.MIN_BITS}, {adc_model.MAX_BITS}]")

    def estimator(self, **overrides) -> EkfConfig:
        values = dict(
            noise_rms=self.noise, samples=self.samples, half_span=self.half_span,
            extra_bits=self.extra_bits,
            sigma_prior=self.sigma_prior if self.sigma_prior is not None else 2.0 * self.sigma_unit,
            tau=self.tau, alpha=self.alpha, R=self.r, max_iterations=self.iterations,
            epsilon_p=self.epsilon_p, pipelined=self.pipelined,
        )
        values.update(overrides)
        try:
            return EkfConfig(**values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


# Per-mode defaults mirroring the reference experiments.
MODE_DEFAULTS = {
    "single": dict(bits=12, samples=64, iterations=200, noise=1.0),
    "grid": dict(bits=16, samples=64, iterations=1000, noise=1.0),
    "montecarlo": dict(bits=16, samples=128, iterations=200, noise=1.0, devices=100),
    "bench": dict(samples=64, iterations=200, noise=1.0, resolutions=(10, 12, 14, 16, 18)),
    "rht": dict(bits=12, samples=64, iterations=200, noise=1.0, hpc=128),
}

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_TUPLE_TYPES = {"resolutions": int, "sample_counts": int, "noise_levels": float}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def coerce(key: str, value):
    """Convert a raw (string) value to the type of field ``key``."""
    if key not in _FIELDS or key == "mode":
        raise ConfigError(f"unknown configuration key {key!r}")
    if not isinstance(value, str):
        return tuple(value) if key in _TUPLE_TYPES else value
    text = value.strip()
    try:
        if key in _TUPLE_TYPES:
            kind = _TUPLE_TYPES[key]
            return tuple(kind(v) for v in text.replace(",", " ").split())
        if key == "out":
            return Path(text)
        if key == "pipelined":
            return _parse_bool(text)
        if key in ("sigma_prior", "r", "half_span", "epsilon_p"):
            return None if text.lower() in ("", "none") else float(text)
        kind = type(_FIELDS[key].default)
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def read_config_file(path: Path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for number, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = coerce(key.replace("-", "_"), raw)
    return values


def build_config(mode: str, file_values: dict | None = None,
                 flag_values: dict | None = None) -> ExperimentConfig:
    """Mode defaults, then the config file, then CLI flags (flags win)."""
    merged = dict(MODE_DEFAULTS.get(mode, {}))
    merged.update({k: coerce(k, v) for k, v in (file_values or {}).items()})
    merged.update({k: coerce(k, v) for k, v in (flag_values or {}).items() if v is not None})
    return ExperimentConfig(mode=mode, **merged)
