"""Subcritical-to-critical convergence: ``||S_gamma(t) theta0 - S_1(t) theta0||_{H^1} = O(gamma - 1)``."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np

from sqgattr.errors import PreconditionError
from sqgattr.estimates import HOLDS, VIOLATED, BoundReport
from sqgattr.grid import AREA, SpectralField, gradient, inner, lambda_pow, riesz_perp, sobolev_norm
from sqgattr.solver import SolverState, StepScheme, co_integrate, initial_state, integrate, time_derivative


def check_spectral_lemma(
    field: SpectralField, gamma: float, m: float, s: float, rtol: float = 1e-12
) -> BoundReport:
    """Exact check of ``||(Lambda^{g-1} - I) phi||_{H^m} <= ((g-1)/s) ||phi||_{H^{m+s}}``."""
    if gamma <= 1:
        raise PreconditionError(f"gamma must exceed 1, got {gamma}")
    if m < 0:
        raise PreconditionError(f"m must be nonnegative, got {m}")
    if s < gamma - 1:
        raise PreconditionError(f"s must be at least gamma - 1 = {gamma - 1:g}, got {s}")
    grid = field.grid
    c = np.asarray(field.coeffs)
    w = grid.parseval_weights
    sym = (grid.multiplier_power(gamma - 1) - 1.0) ** 2
    lhs = math.sqrt(AREA * np.sum(w * sym * grid.multiplier_power(2 * m) * np.abs(c) ** 2))
    rhs = (gamma - 1) / s * sobolev_norm(field, m + s)
    margin = rhs - lhs
    name = f"spectral_lemma_g{gamma:g}_m{m:g}_s{s:g}"
    if margin < -rtol * max(rhs, 1e-300):
        return BoundReport(
            name, VIOLATED, witness_time=0.0, margin_min=margin, witness={"lhs": lhs, "rhs": rhs}
        )
    return BoundReport(name, HOLDS, constant=(gamma - 1) / s, margin_min=margin, details={"lhs": lhs, "rhs": rhs})


@dataclass
class ConvergenceRun:
    """Paired runs of each ``gamma`` against the critical equation from one ``theta0``.

    ``transient > 0`` first evolves ``theta0`` under the critical equation for that long
    and uses the result as shared data (a stand-in for data on the attractor).
    """

    theta0: SpectralField
    gamma_grid: tuple[float, ...] = (1.4, 1.2, 1.1, 1.05)
    forcing: SpectralField | None = None
    T: float = 1.0
    scheme: StepScheme = dc_field(default_factory=StepScheme)
    sample_every: float = 0.01
    epsilon: float = 0.0
    transient: float = 0.0
    spread_limit: float = 3.0

    def __post_init__(self):
        self.gamma_grid = tuple(float(g) for g in self.gamma_grid)
        bad = [g for g in self.gamma_grid if not 1 < g <= 1.5]
        if bad:
            raise PreconditionError(f"gamma grid must lie in (1, 1.5], got {bad}")
        if self.T <= 0:
            raise PreconditionError(f"horizon must be positive, got {self.T}")


@dataclass
class ConvergenceReport:
    gamma_grid: tuple[float, ...]
    times: dict[float, list[float]]
    eta_h1: dict[float, list[float]]
    max_ratios: list[float]
    ratios_at_T: list[float]
    spread_factor: float
    spread_limit: float
    theta0: SpectralField | None = None

    @property
    def within_spread(self) -> bool:
        return self.spread_factor < self.spread_limit

    @property
    def spread_at_T(self) -> float:
        return spread(self.ratios_at_T)

    def ratio_series(self, gamma: float) -> np.ndarray:
        return np.asarray(self.eta_h1[gamma]) / (gamma - 1)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["gamma", "t", "eta_h1", "ratio"])
            for g in self.gamma_grid:
                for t, e in zip(self.times[g], self.eta_h1[g]):
                    writer.writerow([repr(g), repr(t), repr(e), repr(e / (g - 1))])

    def summary(self) -> dict:
        return {
            "gamma_grid": list(self.gamma_grid),
            "max_ratios": self.max_ratios,
            "spread_factor": self.spread_factor,
            "ratios_at_T": self.ratios_at_T,
            "spread_at_T": self.spread_at_T,
            "spread_limit": self.spread_limit,
        }

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def spread(values: Sequence[float]) -> float:
    """max/min of nonnegative values; 1 when all vanish, inf when only some do."""
    v = np.asarray(values, dtype=float)
    hi, lo = float(np.max(v)), float(np.min(v))
    if hi == 0:
        return 1.0
    if lo == 0:
        return math.inf
    return hi / lo


def _shared_data(run: ConvergenceRun) -> SolverState:
    state = initial_state(run.theta0, 1.0, run.forcing, run.epsilon)
    if run.transient > 0:
        state = integrate(state, run.scheme, run.transient).final
    return state


def _pair_series(run: ConvergenceRun, theta0: SpectralField, g: float) -> tuple[list[float], list[float]]:
    sub = initial_state(theta0, g, run.forcing, run.epsilon)
    crit = initial_state(theta0, 1.0, run.forcing, run.epsilon)
    ts: list[float] = []
    es: list[float] = []

    def record(states, _derivs):
        ts.append(states[0].t)
        es.append(sobolev_norm(states[1].theta - states[0].theta, 1.0))

    co_integrate([sub, crit], run.scheme, run.T, sample_every=run.sample_every, on_sample=record)
    if es[0] != 0.0:
        raise RuntimeError(f"paired runs for gamma={g} do not start from identical data")
    return ts, es


def run_convergence(run: ConvergenceRun, threads: int = 1) -> ConvergenceReport:
    """Co-integrate every ``gamma`` of the grid against the critical run; ``threads`` fans out the grid."""
    theta0 = _shared_data(run).theta
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda g: _pair_series(run, theta0, g), run.gamma_grid))
    else:
        results = [_pair_series(run, theta0, g) for g in run.gamma_grid]
    times = {g: r[0] for g, r in zip(run.gamma_grid, results)}
    etas = {g: r[1] for g, r in zip(run.gamma_grid, results)}
    max_ratios = [max(etas[g]) / (g - 1) for g in run.gamma_grid]
    at_T = [etas[g][-1] / (g - 1) for g in run.gamma_grid]
    return ConvergenceReport(
        run.gamma_grid, times, etas, max_ratios, at_T, spread(max_ratios), run.spread_limit, theta0=theta0
    )


def single_mode_eta_h1(k: int, gamma: float, t: float) -> float:
    """``||eta(t)||_{H^1}`` for unforced data ``cos(k x1)``."""
    return abs(math.exp(-(k**gamma) * t) - math.exp(-k * t)) * k * math.pi * math.sqrt(2)


# -- the H^1 balance of eta ---------------------------------------------------------------


@dataclass
class PairHistory:
    """Dense samples of a subcritical/critical pair, for the ``eta`` energy balance."""

    gamma: float
    times: list[float]
    sub: list[SolverState]
    crit: list[SolverState]


def sample_pair(
    theta0: SpectralField,
    gamma: float,
    scheme: StepScheme,
    T: float,
    sample_every: float,
    *,
    forcing: SpectralField | None = None,
    epsilon: float = 0.0,
) -> PairHistory:
    hist = PairHistory(gamma, [], [], [])

    def record(states, _derivs):
        hist.times.append(states[0].t)
        hist.sub.append(states[0])
        hist.crit.append(states[1])

    a = initial_state(theta0, gamma, forcing, epsilon)
    b = initial_state(theta0, 1.0, forcing, epsilon)
    co_integrate([a, b], scheme, T, sample_every=sample_every, on_sample=record)
    return hist


def eta_balance_terms(sub: SolverState, crit: SolverState) -> dict[str, float]:
    """Terms of ``1/2 d/dt|eta|^2_{H^1} + |eta|^2_{H^{1+g/2}} = I1 + I2 + I3`` at one instant.

    ``eta = theta - theta^gamma`` with ``theta`` critical; ``I1 = <u.grad eta, lap eta>``,
    ``I2 = <w.grad theta^gamma, lap eta>``, ``I3 = -<(Lambda^g - Lambda) theta, lap eta>``.
    The exact rate ``<eta, d eta/dt>_{H^1}`` is included for comparison.
    """
    g = sub.gamma
    theta, theta_g = crit.theta, sub.theta
    eta = theta - theta_g
    grid = eta.grid
    lap_eta = eta.with_coeffs(-(grid.kmag**2) * np.asarray(eta.coeffs)).physical()
    u = riesz_perp(theta).physical()
    w = riesz_perp(eta).physical()
    d_eta = [d.physical() for d in gradient(eta)]
    d_thg = [d.physical() for d in gradient(theta_g)]
    dA = AREA / grid.n**2
    i1 = float(np.sum((u[0] * d_eta[0] + u[1] * d_eta[1]) * lap_eta) * dA)
    i2 = float(np.sum((w[0] * d_thg[0] + w[1] * d_thg[1]) * lap_eta) * dA)
    diff_op = lambda_pow(theta, g) - lambda_pow(theta, 1.0)
    i3 = -float(np.sum(diff_op.physical() * lap_eta) * dA)
    dissipation = sobolev_norm(eta, 1 + g / 2) ** 2 + sub.epsilon * sobolev_norm(eta, 2.0) ** 2
    deta = time_derivative(crit) - time_derivative(sub)
    exact_rate = inner(lambda_pow(eta, 1.0), lambda_pow(eta.with_coeffs(deta), 1.0))
    return {"I1": i1, "I2": i2, "I3": i3, "dissipation": dissipation, "half_rate_exact": exact_rate}


def eta_energy_residual(history: PairHistory, t: float, *, exact_rate: bool = False) -> float:
    """Residual of the ``eta`` H^1 balance at an interior sample time ``t``.

    The rate ``1/2 d/dt |eta|^2_{H^1}`` is a centered difference of neighbouring samples
    unless ``exact_rate`` is set, in which case it comes from the equations themselves.
    """
    times = np.asarray(history.times)
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t={t} is not a sample time of the history")
    terms = eta_balance_terms(history.sub[i], history.crit[i])
    if exact_rate:
        half_rate = terms["half_rate_exact"]
    else:
        if i == 0 or i == len(times) - 1:
            raise ValueError("centered differencing needs an interior sample time")

        def h1sq(j: int) -> float:
            return sobolev_norm(history.crit[j].theta - history.sub[j].theta, 1.0) ** 2

        half_rate = 0.5 * (h1sq(i + 1) - h1sq(i - 1)) / (times[i + 1] - times[i - 1])
    return half_rate + terms["dissipation"] - (terms["I1"] + terms["I2"] + terms["I3"])
