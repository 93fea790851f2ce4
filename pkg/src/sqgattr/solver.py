"""Integrating-factor RK4 time stepping for forced SQG with fractional dissipation.

The dissipation ``|k|^gamma + epsilon |k|^2`` is diagonal and is integrated
exactly; the advection and forcing go through classical RK4 in the
interaction picture (Lawson's scheme).  Everything inside a step works on raw
half-spectrum arrays; :class:`SpectralField` is only built at the boundaries.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from sqgattr.errors import BlowUpError, ConfigurationError, PreconditionError
from sqgattr.grid import SpectralField, TorusGrid, dealias, sobolev_norm, write_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepScheme:
    """``dt`` fixes the step; otherwise ``dt = min(dt_max, cfl * dx / max|u|)``."""

    cfl: float = 0.5
    dt_max: float = 1e-2
    dt: float | None = None
    dealias: bool = True

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ConfigurationError(f"cfl must lie in (0, 1], got {self.cfl}", key="cfl")
        if self.dt is not None and self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}", key="dt")
        if self.dt_max <= 0:
            raise ConfigurationError(f"dt_max must be positive, got {self.dt_max}", key="dt_max")


@dataclass(frozen=True, eq=False)
class SolverState:
    theta: SpectralField
    t: float
    gamma: float
    forcing: SpectralField
    epsilon: float = 0.0
    dt: float = 0.0

    def __post_init__(self):
        if not 1 <= self.gamma < 2:
            raise ConfigurationError(f"gamma must lie in [1, 2), got {self.gamma}", key="gamma")
        if self.epsilon < 0:
            raise ConfigurationError(f"epsilon must be nonnegative, got {self.epsilon}", key="epsilon")
        if self.forcing.grid != self.theta.grid:
            raise ValueError("forcing and theta live on different grids")

    @property
    def grid(self) -> TorusGrid:
        return self.theta.grid


def initial_state(
    theta0: SpectralField,
    gamma: float,
    forcing: SpectralField | None = None,
    epsilon: float = 0.0,
    t: float = 0.0,
) -> SolverState:
    """Build a state, projecting data and forcing onto the dealiased band."""
    grid = theta0.grid
    forcing = SpectralField.zeros(grid) if forcing is None else forcing
    return SolverState(dealias(theta0), t, gamma, dealias(forcing), epsilon)


# -- operators on raw coefficient arrays -------------------------------------------


class _Ops:
    def __init__(self, grid: TorusGrid):
        self.grid = grid
        n = grid.n
        self.n = n
        self.scale = float(n * n)
        inv = grid.multiplier_power(-1.0)
        self.u1_mult = -1j * grid.k2 * inv
        self.u2_mult = 1j * grid.k1 * inv
        self.d1 = 1j * grid.k1
        self.d2 = 1j * grid.k2
        self.mask = grid.dealias_mask.astype(float)
        self.mask[0, 0] = 0.0
        self.full_mask = grid.nyquist_mask.astype(float)
        self.full_mask[0, 0] = 0.0

    def to_phys(self, c: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(c * self.scale, s=(self.n, self.n))

    def advection(self, c: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        u1 = self.to_phys(self.u1_mult * c)
        u2 = self.to_phys(self.u2_mult * c)
        t1 = self.to_phys(self.d1 * c)
        t2 = self.to_phys(self.d2 * c)
        # overflow surfaces as BlowUpError via the finiteness checks, not as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            return np.fft.rfft2(u1 * t1 + u2 * t2) / self.scale * (self.mask if mask is None else mask)

    def max_speed(self, c: np.ndarray) -> float:
        u1 = self.to_phys(self.u1_mult * c)
        u2 = self.to_phys(self.u2_mult * c)
        return float(np.sqrt(np.max(u1 * u1 + u2 * u2)))


@lru_cache(maxsize=16)
def _ops(n: int) -> _Ops:
    return _Ops(TorusGrid(n))


def nonlinear_term(theta: SpectralField) -> SpectralField:
    """Dealiased ``u . grad theta`` with ``u = grad^perp Lambda^-1 theta``."""
    return theta.with_coeffs(_ops(theta.grid.n).advection(np.asarray(theta.coeffs)))


def dissipation_symbol(grid: TorusGrid, gamma: float, epsilon: float = 0.0) -> np.ndarray:
    return grid.multiplier_power(gamma) + epsilon * grid.kmag**2


def time_derivative(state: SolverState) -> np.ndarray:
    """``d theta_k / dt`` at the current state (coefficient array)."""
    ops = _ops(state.grid.n)
    c = np.asarray(state.theta.coeffs)
    lin = dissipation_symbol(state.grid, state.gamma, state.epsilon)
    return -lin * c - ops.advection(c) + np.asarray(state.forcing.coeffs) * ops.mask


def cfl_dt(state: SolverState, scheme: StepScheme) -> float:
    speed = _ops(state.grid.n).max_speed(np.asarray(state.theta.coeffs))
    limit = scheme.dt_max if speed == 0 else min(scheme.dt_max, scheme.cfl * state.grid.dx / speed)
    return limit


class _Stepper:
    """Lawson RK4 for one (gamma, epsilon, forcing) triple with a small factor cache."""

    def __init__(self, state: SolverState, dealiased: bool = True):
        self.ops = _ops(state.grid.n)
        self.mask = self.ops.mask if dealiased else self.ops.full_mask
        self.lin = dissipation_symbol(state.grid, state.gamma, state.epsilon)
        self.fhat = np.asarray(state.forcing.coeffs) * self.mask
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def factors(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(dt)
        if hit is None:
            if len(self._cache) > 8:
                self._cache.clear()
            hit = (np.exp(-self.lin * dt), np.exp(-self.lin * dt / 2))
            self._cache[dt] = hit
        return hit

    def rhs(self, c: np.ndarray) -> np.ndarray:
        return self.fhat - self.ops.advection(c, self.mask)

    def advance(self, c: np.ndarray, dt: float, n0: np.ndarray | None = None) -> np.ndarray:
        E, Eh = self.factors(dt)
        k1 = dt * (self.rhs(c) if n0 is None else n0)
        k2 = dt * self.rhs(Eh * (c + k1 / 2))
        k3 = dt * self.rhs(Eh * c + k2 / 2)
        k4 = dt * self.rhs(E * c + Eh * k3)
        return E * c + (E * k1 + 2 * Eh * (k2 + k3) + k4) / 6


def _check_finite(c: np.ndarray, previous: SolverState) -> None:
    if not np.all(np.isfinite(c)):
        raise BlowUpError(f"non-finite coefficients after t = {previous.t:.6g}", state=previous)


def step(state: SolverState, scheme: StepScheme = StepScheme(), dt: float | None = None) -> SolverState:
    """Advance one step; ``dt`` defaults to the scheme's fixed step or the CFL step."""
    if dt is None:
        dt = scheme.dt if scheme.dt is not None else cfl_dt(state, scheme)
    if dt <= 0:
        raise PreconditionError(f"dt must be positive, got {dt}")
    speed = _ops(state.grid.n).max_speed(np.asarray(state.theta.coeffs))
    if speed > 0 and dt > scheme.cfl * state.grid.dx / speed * (1 + 1e-12):
        raise PreconditionError(f"dt = {dt} violates the CFL limit {scheme.cfl * state.grid.dx / speed}")
    c = _Stepper(state, scheme.dealias).advance(np.asarray(state.theta.coeffs), dt)
    _check_finite(c, state)
    return replace(state, theta=state.theta.with_coeffs(c), t=state.t + dt, dt=dt)


# -- trajectories --------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    """Endpoints of one accepted step with their exact time derivatives."""

    prev: SolverState
    new: SolverState
    dprev: np.ndarray
    dnew: np.ndarray

    @property
    def dt(self) -> float:
        return self.new.t - self.prev.t


@dataclass
class Trajectory:
    final: SolverState
    sample_times: list[float] = dc_field(default_factory=list)
    samples: list[SolverState] = dc_field(default_factory=list)
    dts: list[float] = dc_field(default_factory=list)
    checkpoints: list[Path] = dc_field(default_factory=list)


def _targets(t0: float, T: float, every: float | None, extra: Iterable[float]) -> list[float]:
    end = t0 + T
    pts = {end}
    if every:
        k = 1
        while t0 + k * every < end - 1e-12 * max(1.0, end):
            pts.add(t0 + k * every)
            k += 1
    pts.update(t for t in extra if t0 < t < end)
    return sorted(pts)


def _substeps(t: float, target: float, dt: float) -> tuple[int, float]:
    span = target - t
    count = max(1, math.ceil(span / dt - 1e-9))
    return count, span / count


def integrate(
    state: SolverState,
    scheme: StepScheme,
    T: float,
    *,
    sample_every: float | None = None,
    on_sample: Callable[[SolverState, np.ndarray], None] | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
    checkpoint_times: Sequence[float] = (),
    checkpoint_dir: str | Path | None = None,
    keep_samples: bool = False,
) -> Trajectory:
    """Run the solution map ``S(T)`` from ``state``.

    ``on_sample`` fires at ``t0`` and at every multiple of ``sample_every`` and at the end;
    ``on_step`` sees every accepted step.  Steps are shortened to land on sample and
    checkpoint times exactly.
    """
    if T <= 0:
        raise PreconditionError(f"integration horizon must be positive, got {T}")
    stepper = _Stepper(state, scheme.dealias)
    traj = Trajectory(final=state)
    cp_set = {float(t) for t in checkpoint_times}
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    c = np.asarray(state.theta.coeffs)
    deriv = -stepper.lin * c + stepper.rhs(c)

    def emit(s: SolverState, d: np.ndarray) -> None:
        traj.sample_times.append(s.t)
        if keep_samples:
            traj.samples.append(s)
        if on_sample is not None:
            on_sample(s, d)

    emit(state, deriv)
    if checkpoint_dir is not None and state.t in cp_set:
        traj.checkpoints.append(_write_cp(checkpoint_dir, state))

    sample_set = set(_targets(state.t, T, sample_every, ()))
    for target in _targets(state.t, T, sample_every, cp_set):
        while state.t < target:
            if scheme.dt is not None:
                _, dt = _substeps(state.t, target, scheme.dt)
            else:
                dt = cfl_dt(state, scheme)
                if target - state.t <= dt * (1 + 1e-9):
                    dt = target - state.t
            n0 = deriv + stepper.lin * c
            c_new = stepper.advance(c, dt, n0=n0)
            _check_finite(c_new, state)
            t_new = target if abs(target - (state.t + dt)) <= 1e-12 * max(1.0, abs(target)) else state.t + dt
            new = replace(state, theta=state.theta.with_coeffs(c_new), t=t_new, dt=dt)
            c = np.asarray(new.theta.coeffs)
            deriv_new = -stepper.lin * c + stepper.rhs(c)
            if on_step is not None:
                on_step(StepRecord(state, new, deriv, deriv_new))
            traj.dts.append(dt)
            state, deriv = new, deriv_new
        if target in sample_set:
            emit(state, deriv)
        if checkpoint_dir is not None and target in cp_set:
            traj.checkpoints.append(_write_cp(checkpoint_dir, state))
    traj.final = state
    return traj


def _write_cp(directory: str | Path, state: SolverState) -> Path:
    path = Path(directory) / f"theta_t{state.t:012.6f}.sqgf"
    write_checkpoint(path, state.theta, state.gamma, state.t)
    return path


# -- co-evolution ------------------------------------------------------------------------


@dataclass
class PairedTrajectory:
    times: list[float]
    finals: list[SolverState]
    series: dict[str, list[float]]
    dts: list[float]


def co_integrate(
    states: Sequence[SolverState],
    scheme: StepScheme,
    T: float,
    *,
    sample_every: float | None = None,
    on_sample: Callable[[list[SolverState], list[np.ndarray]], None] | None = None,
) -> tuple[list[SolverState], list[float]]:
    """Advance several states with one shared step sequence (the smallest CFL step governs)."""
    if T <= 0:
        raise PreconditionError(f"integration horizon must be positive, got {T}")
    grids = {s.grid for s in states}
    if len(grids) != 1:
        raise PreconditionError("co-integrated states must share one grid")
    steppers = [_Stepper(s, scheme.dealias) for s in states]
    states = list(states)
    coeffs = [np.asarray(s.theta.coeffs) for s in states]
    dts: list[float] = []

    def derivs() -> list[np.ndarray]:
        return [-st.lin * c + st.rhs(c) for st, c in zip(steppers, coeffs)]

    if on_sample is not None:
        on_sample(list(states), derivs())
    t0 = states[0].t
    for target in _targets(t0, T, sample_every, ()):
        while states[0].t < target:
            if scheme.dt is not None:
                _, dt = _substeps(states[0].t, target, scheme.dt)
            else:
                dt = min(cfl_dt(s, scheme) for s in states)
                if target - states[0].t <= dt * (1 + 1e-9):
                    dt = target - states[0].t
            t_new = states[0].t + dt
            if abs(target - t_new) <= 1e-12 * max(1.0, abs(target)):
                t_new = target
            new_states = []
            for i, (st, s) in enumerate(zip(steppers, states)):
                c_new = st.advance(coeffs[i], dt)
                _check_finite(c_new, s)
                new_states.append(replace(s, theta=s.theta.with_coeffs(c_new), t=t_new, dt=dt))
                coeffs[i] = np.asarray(new_states[-1].theta.coeffs)
            states = new_states
            dts.append(dt)
        if on_sample is not None:
            on_sample(list(states), derivs())
    return states, dts


def pair_integrate(
    theta0_a: SpectralField,
    theta0_b: SpectralField,
    gamma: float,
    scheme: StepScheme,
    T: float,
    *,
    forcing: SpectralField | None = None,
    epsilon: float = 0.0,
    sample_every: float | None = None,
) -> PairedTrajectory:
    """Co-evolve two data under the same equation; records ``||theta_a - theta_b||_{H^{2-gamma}}``."""
    if theta0_a.grid != theta0_b.grid:
        raise PreconditionError("both initial data must live on the same grid")
    a = initial_state(theta0_a, gamma, forcing, epsilon)
    b = initial_state(theta0_b, gamma, forcing, epsilon)
    times: list[float] = []
    diff: list[float] = []

    def record(states, _derivs):
        times.append(states[0].t)
        diff.append(sobolev_norm(states[0].theta - states[1].theta, 2.0 - gamma))

    finals, dts = co_integrate([a, b], scheme, T, sample_every=sample_every, on_sample=record)
    return PairedTrajectory(times=times, finals=finals, series={"diff_h2mg": diff}, dts=dts)
