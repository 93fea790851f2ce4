"""Experiment configuration read from TOML.

Top-level keys::

    n, gamma, epsilon, kappa, c3, cfl, dt, dt_max, T, seed

Tables (all optional)::

    [spectrum]     a, band = [k_min, k_max], amplitude         random initial data
    [initial]      modes = [[k1, k2], ...], amplitudes = [...]  cosine initial data, overrides [spectrum]
    [forcing]      modes, amplitudes                            cosine forcing (absent: f = 0)
    [output]       interval, dir, checkpoints = [t, ...]
    [holder]       beta                                         default: beta_exponent(K_inf, gamma, c3)
    [convergence]  gammas, T, sample_every, transient, spread_limit
    [lowerbounds]  fields, K, h = [h1, h2]

Unknown keys anywhere raise :class:`ConfigurationError` naming the key.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import tomli

from sqgattr.errors import ConfigurationError
from sqgattr.grid import SpectralField, SpectrumRecipe, TorusGrid, generate_field
from sqgattr.solver import StepScheme


@dataclass(frozen=True)
class SpectrumSection:
    a: float = 1.0
    band: tuple[int, int] = (1, 4)
    amplitude: float = 1.0


@dataclass(frozen=True)
class ModesSection:
    modes: tuple[tuple[int, int], ...] = ()
    amplitudes: tuple[float, ...] = ()


@dataclass(frozen=True)
class OutputSection:
    interval: float = 0.1
    dir: str = "out"
    checkpoints: tuple[float, ...] = ()


@dataclass(frozen=True)
class HolderSection:
    beta: float | None = None


@dataclass(frozen=True)
class ConvergenceSection:
    gammas: tuple[float, ...] = (1.4, 1.2, 1.1, 1.05)
    T: float = 1.0
    sample_every: float = 0.01
    transient: float = 0.0
    spread_limit: float = 3.0


@dataclass(frozen=True)
class LowerBoundsSection:
    fields: int = 5
    K: int = 3
    h: tuple[int, int] = (1, 0)


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 64
    gamma: float = 1.5
    epsilon: float = 0.0
    kappa: float = 1.0
    c3: float = 64.0
    cfl: float = 0.5
    dt: float | None = None
    dt_max: float = 1e-2
    T: float = 1.0
    seed: int = 0
    spectrum: SpectrumSection = field(default_factory=SpectrumSection)
    initial: ModesSection | None = None
    forcing: ModesSection | None = None
    output: OutputSection = field(default_factory=OutputSection)
    holder: HolderSection = field(default_factory=HolderSection)
    convergence: ConvergenceSection = field(default_factory=ConvergenceSection)
    lowerbounds: LowerBoundsSection = field(default_factory=LowerBoundsSection)

    def __post_init__(self):
        _validate(self)

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.n)

    @property
    def scheme(self) -> StepScheme:
        return StepScheme(cfl=self.cfl, dt_max=self.dt_max, dt=self.dt)

    def initial_field(self) -> SpectralField:
        if self.initial is not None:
            return cosine_field(self.grid, self.initial)
        k_min, k_max = self.spectrum.band
        recipe = SpectrumRecipe(
            a=self.spectrum.a, k_min=k_min, k_max=k_max, amplitude=self.spectrum.amplitude, seed=self.seed
        )
        return generate_field(recipe, self.grid)

    def forcing_field(self) -> SpectralField:
        if self.forcing is None:
            return SpectralField.zeros(self.grid)
        return cosine_field(self.grid, self.forcing)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_resolved(self, directory: str | Path) -> Path:
        path = Path(directory) / "config.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def cosine_field(grid: TorusGrid, section: ModesSection) -> SpectralField:
    """``sum_j a_j cos(k_j . x)``."""

    def fn(x1, x2):
        out = np.zeros_like(x1)
        for (k1, k2), amp in zip(section.modes, section.amplitudes):
            out += amp * np.cos(k1 * x1 + k2 * x2)
        return out

    return SpectralField.from_function(grid, fn)


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigurationError(f"{key}: {message}", key=key)


def _validate(cfg: ExperimentConfig) -> None:
    _require(cfg.n >= 8 and cfg.n % 2 == 0, "n", f"grid size must be even and >= 8, got {cfg.n}")
    _require(1 < cfg.gamma < 2, "gamma", f"must lie in (1, 2), got {cfg.gamma}")
    _require(cfg.epsilon >= 0, "epsilon", f"must be nonnegative, got {cfg.epsilon}")
    _require(cfg.kappa >= 1, "kappa", f"must be >= 1, got {cfg.kappa}")
    _require(cfg.c3 >= 64, "c3", f"must be >= 64, got {cfg.c3}")
    _require(0 < cfg.cfl <= 1, "cfl", f"must lie in (0, 1], got {cfg.cfl}")
    _require(cfg.dt is None or cfg.dt > 0, "dt", f"must be positive, got {cfg.dt}")
    _require(cfg.dt_max > 0, "dt_max", f"must be positive, got {cfg.dt_max}")
    _require(cfg.T > 0, "T", f"must be positive, got {cfg.T}")
    _require(0 <= cfg.seed < 2**64, "seed", f"must be an unsigned 64-bit integer, got {cfg.seed}")
    k_min, k_max = cfg.spectrum.band
    kmax = TorusGrid(cfg.n).kmax
    _require(1 <= k_min <= k_max <= kmax, "spectrum.band", f"need 1 <= k_min <= k_max <= {kmax}, got {cfg.spectrum.band}")
    for name in ("initial", "forcing"):
        sec = getattr(cfg, name)
        if sec is None:
            continue
        _require(len(sec.modes) == len(sec.amplitudes), f"{name}.amplitudes", "needs one amplitude per mode")
        for k1, k2 in sec.modes:
            _require(
                0 < math.hypot(k1, k2) <= kmax, f"{name}.modes", f"mode ({k1}, {k2}) is zero or beyond |k| <= {kmax}"
            )
    _require(cfg.output.interval > 0, "output.interval", f"must be positive, got {cfg.output.interval}")
    if cfg.holder.beta is not None:
        _require(0 < cfg.holder.beta <= 0.25, "holder.beta", f"must lie in (0, 1/4], got {cfg.holder.beta}")
    conv = cfg.convergence
    _require(len(conv.gammas) > 0 and all(1 < g <= 1.5 for g in conv.gammas), "convergence.gammas", "values must lie in (1, 1.5]")
    _require(conv.T > 0, "convergence.T", "must be positive")
    _require(conv.sample_every > 0, "convergence.sample_every", "must be positive")
    _require(conv.transient >= 0, "convergence.transient", "must be nonnegative")
    _require(conv.spread_limit > 1, "convergence.spread_limit", "must exceed 1")
    _require(cfg.lowerbounds.fields >= 1, "lowerbounds.fields", "must be positive")
    _require(cfg.lowerbounds.K >= 0, "lowerbounds.K", "must be nonnegative")
    _require(any(cfg.lowerbounds.h), "lowerbounds.h", "shift must be nonzero")


_SECTIONS = {
    "spectrum": SpectrumSection,
    "initial": ModesSection,
    "forcing": ModesSection,
    "output": OutputSection,
    "holder": HolderSection,
    "convergence": ConvergenceSection,
    "lowerbounds": LowerBoundsSection,
}


def _tupled(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, data: dict, prefix: str = ""):
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigurationError(f"{prefix}{key}: unknown configuration key", key=f"{prefix}{key}")
    kwargs = {}
    for key, value in data.items():
        if prefix == "" and key in _SECTIONS and value is None:
            kwargs[key] = None
        elif prefix == "" and key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError(f"{key} must be a table", key=key)
            kwargs[key] = _build(_SECTIONS[key], value, prefix=f"{key}.")
        else:
            kwargs[key] = _tupled(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"malformed configuration: {exc}", key=prefix.rstrip(".") or None) from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def load_config(path: str | Path, *, seed: int | None = None, out: str | Path | None = None) -> ExperimentConfig:
    """Parse a TOML config; ``seed`` and ``out`` override the file."""
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}", key=None) from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}", key=None) from exc
    cfg = config_from_dict(data)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out is not None:
        cfg = replace(cfg, output=replace(cfg.output, dir=str(out)))
    return cfg
