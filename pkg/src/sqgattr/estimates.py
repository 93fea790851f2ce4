"""A-priori bounds evaluated along trajectories.

:class:`EstimateLedger` is filled while a trajectory runs (it plugs into
:func:`sqgattr.solver.integrate` through ``ledger.hooks()``) and the ``check_*``
functions post-process it into :class:`BoundReport` objects.  Bounds whose
constants are explicit (decay, energy) get a hard pass/fail; bounds that only
assert the existence of a constant get a fitted constant instead.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from sqgattr.errors import BlowUpError, InsufficientSamplingError, PreconditionError
from sqgattr.grid import (
    AREA,
    SpectralField,
    holder_seminorm,
    inner,
    l2_norm,
    linf_norm,
    shift_table,
    sobolev_norm,
    weighted_w_sup,
)
from sqgattr.solver import SolverState, StepRecord

HOLDS = "holds"
HOLDS_WITH_CONSTANT = "holds-with-constant"
VIOLATED = "violated"
NOT_ABSORBED = "not absorbed by T"

BASE_COLUMNS = ("t", "l2", "linf")
TAIL_COLUMNS = ("dissipation", "viscous", "work", "h2_integral", "energy_residual")
HOLDER_COLUMNS = ("holder", "psi")


def default_alphas(gamma: float) -> tuple[float, ...]:
    """Sobolev indices every ledger records: the phase space and its dissipative partners."""
    vals = {0.5, 1.0, gamma / 2, gamma, 2 - gamma, 2 - gamma / 2, 1 + gamma / 2, 2.0}
    return tuple(sorted(round(v, 12) for v in vals))


def h_column(s: float) -> str:
    return f"h_{s:.6g}"


def rate_column(s: float) -> str:
    return f"rate_{s:.6g}"


# -- ledger ------------------------------------------------------------------------------


@dataclass
class EstimateLedger:
    """Time series of norms, cumulative integrals and the energy-balance residual.

    ``rate_<s>`` columns hold the exact ``d/dt ||theta||^2_{H^s}`` from the equation;
    ``energy_residual`` is ``||theta||^2 - ||theta0||^2 + 2 (dissipation + viscous - work)``.
    When ``beta`` is set, ``holder`` and ``psi`` track ``[theta]_{C^beta}`` and
    ``||w||^2_{L^inf}`` with the weight ``xi(t)``.
    """

    gamma: float
    alphas: tuple[float, ...] = ()
    beta: float | None = None
    xi: Callable[[float], float] | None = None
    columns: dict[str, list[float]] = dc_field(default_factory=dict)

    def __post_init__(self):
        alphas = set(self.alphas or default_alphas(self.gamma))
        alphas |= {a + self.gamma / 2 for a in alphas if 0 < a < 1}
        self.alphas = tuple(sorted(round(a, 12) for a in alphas))
        for name in self.column_names:
            self.columns.setdefault(name, [])
        self._acc = {"dissipation": 0.0, "viscous": 0.0, "work": 0.0, "h2_integral": 0.0}
        self._l2sq0: float | None = None

    @property
    def column_names(self) -> list[str]:
        names = list(BASE_COLUMNS)
        names += [h_column(s) for s in self.alphas]
        names += [rate_column(s) for s in self.alphas]
        names += list(TAIL_COLUMNS)
        if self.beta is not None:
            names += list(HOLDER_COLUMNS)
        return names

    def __len__(self) -> int:
        return len(self.columns["t"])

    def series(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.series("t")

    def norm_series(self, s: float) -> np.ndarray:
        name = h_column(s)
        if name not in self.columns:
            raise KeyError(f"ledger does not record H^{s:g}; recorded: {self.alphas}")
        return self.series(name)

    # hooks for sqgattr.solver.integrate
    def hooks(self) -> dict:
        return {"on_sample": self.record_sample, "on_step": self.record_step}

    def record_sample(self, state: SolverState, deriv: np.ndarray) -> None:
        with np.errstate(over="ignore", invalid="ignore"):
            row = self._sample_row(state, deriv)
        bad = [name for name in self.column_names if not math.isfinite(row[name])]
        if bad:
            raise BlowUpError(f"non-finite {', '.join(bad)} at t={state.t:g}", state)
        self.append(row)

    def _sample_row(self, state: SolverState, deriv: np.ndarray) -> dict:
        theta = state.theta
        l2 = l2_norm(theta)
        if self._l2sq0 is None:
            self._l2sq0 = l2**2
        row = {"t": state.t, "l2": l2, "linf": linf_norm(theta)}
        grid = theta.grid
        c = np.asarray(theta.coeffs)
        for s in self.alphas:
            row[h_column(s)] = sobolev_norm(theta, s)
            mult = grid.parseval_weights * grid.multiplier_power(2 * s)
            row[rate_column(s)] = float(AREA * np.sum(mult * 2 * np.real(np.conj(c) * deriv)))
        row.update(self._acc)
        row["energy_residual"] = (
            l2**2 - self._l2sq0 + 2 * (self._acc["dissipation"] + self._acc["viscous"] - self._acc["work"])
        )
        if self.beta is not None:
            table = shift_table(theta)
            xi = self.xi(state.t) if self.xi is not None else 0.0
            row["holder"] = holder_seminorm(table, self.beta)
            row["psi"] = weighted_w_sup(table, self.beta, xi) ** 2
        return row

    def record_step(self, rec: StepRecord) -> None:
        prev, new = rec.prev, rec.new
        grid = prev.grid
        dt = rec.dt
        w = grid.parseval_weights
        quad = {
            "dissipation": w * grid.multiplier_power(prev.gamma),
            "viscous": prev.epsilon * w * grid.kmag**2,
            "h2_integral": w * grid.multiplier_power(4.0),
        }
        c0, c1 = np.asarray(prev.theta.coeffs), np.asarray(new.theta.coeffs)
        for name, m in quad.items():
            g0 = AREA * np.sum(m * np.abs(c0) ** 2)
            g1 = AREA * np.sum(m * np.abs(c1) ** 2)
            d0 = AREA * np.sum(m * 2 * np.real(np.conj(c0) * rec.dprev))
            d1 = AREA * np.sum(m * 2 * np.real(np.conj(c1) * rec.dnew))
            self._acc[name] += _hermite_trapezoid(dt, g0, g1, d0, d1)
        f = prev.forcing
        g0, g1 = inner(f, prev.theta), inner(f, new.theta)
        d0 = inner(f, f.with_coeffs(rec.dprev))
        d1 = inner(f, f.with_coeffs(rec.dnew))
        self._acc["work"] += _hermite_trapezoid(dt, g0, g1, d0, d1)

    def append(self, row: dict) -> None:
        if len(self) and row["t"] <= self.columns["t"][-1]:
            raise ValueError(f"ledger times must increase strictly; got {row['t']} after {self.columns['t'][-1]}")
        values = {name: float(row[name]) for name in self.column_names}
        for name, value in values.items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite ledger entry {name}={value} at t={row['t']}")
        for name, value in values.items():
            self.columns[name].append(value)

    # csv io
    def to_csv(self, path: str | Path) -> None:
        names = self.column_names
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for i in range(len(self)):
                writer.writerow([repr(self.columns[n][i]) for n in names])

    @classmethod
    def from_csv(cls, path: str | Path, gamma: float) -> EstimateLedger:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [list(map(float, r)) for r in reader if r]
        alphas = tuple(float(h[2:]) for h in header if h.startswith("h_"))
        beta = float("nan") if "psi" in header else None
        ledger = cls(gamma=gamma, alphas=alphas, beta=beta)
        for name in ledger.column_names:
            if name not in header:
                raise ValueError(f"{path}: missing ledger column {name!r}")
        for r in rows:
            for name, v in zip(header, r):
                if name in ledger.columns:
                    ledger.columns[name].append(v)
        return ledger


def _hermite_trapezoid(h: float, g0: float, g1: float, d0: float, d1: float) -> float:
    """Trapezoid with endpoint-derivative correction, exact for cubics."""
    return h / 2 * (g0 + g1) + h * h / 12 * (d0 - d1)


# -- reports ---------------------------------------------------------------------------------


@dataclass
class BoundReport:
    name: str
    status: str
    constant: float | None = None
    witness_time: float | None = None
    margin_min: float | None = None
    margins: list[float] = dc_field(default_factory=list)
    witness: dict | None = None
    details: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.status == VIOLATED and (self.witness_time is None or self.witness is None):
            raise ValueError("a violated bound must carry its witness time and values")

    @property
    def violated(self) -> bool:
        return self.status == VIOLATED

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "status": self.status,
            "constant": self.constant,
            "witness_time": self.witness_time,
            "margin_min": self.margin_min,
        }
        if self.witness is not None:
            out["witness"] = self.witness
        if self.details:
            out["details"] = self.details
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _margin_report(name: str, times: np.ndarray, value: np.ndarray, bound: np.ndarray, rtol: float) -> BoundReport:
    margin = bound - value
    tol = rtol * np.maximum(np.abs(bound), 1.0)
    bad = np.nonzero(margin < -tol)[0]
    i_min = int(np.argmin(margin))
    if bad.size:
        i = int(bad[0])
        return BoundReport(
            name,
            VIOLATED,
            witness_time=float(times[i]),
            margin_min=float(margin[i_min]),
            margins=margin.tolist(),
            witness={"value": float(value[i]), "bound": float(bound[i])},
        )
    return BoundReport(name, HOLDS, margin_min=float(margin[i_min]), witness_time=float(times[i_min]), margins=margin.tolist())


def k_infty(theta0: SpectralField, f: SpectralField | None, kappa: float = 1.0) -> float:
    """Global sup bound ``||theta0||_inf + ||f||_inf / kappa``."""
    if kappa < 1:
        raise PreconditionError(f"kappa must be >= 1, got {kappa}")
    f_inf = 0.0 if f is None else linf_norm(f)
    return linf_norm(theta0) + f_inf / kappa


def check_decay_l2(
    ledger: EstimateLedger, theta0: SpectralField, f: SpectralField | None, kappa: float = 1.0, rtol: float = 1e-9
) -> BoundReport:
    t = ledger.times
    f_norm = 0.0 if f is None else l2_norm(f)
    bound = l2_norm(theta0) * np.exp(-kappa * t) + f_norm / kappa
    return _margin_report("decay_l2", t, ledger.series("l2"), bound, rtol)


def check_decay_linf(
    ledger: EstimateLedger, theta0: SpectralField, f: SpectralField | None, kappa: float = 1.0, rtol: float = 1e-9
) -> BoundReport:
    t = ledger.times
    f_norm = 0.0 if f is None else linf_norm(f)
    bound = linf_norm(theta0) * np.exp(-kappa * t) + f_norm / kappa
    return _margin_report("decay_linf", t, ledger.series("linf"), bound, rtol)


def check_energy_inequality(
    ledger: EstimateLedger, theta0: SpectralField, f: SpectralField | None, kappa: float = 1.0, rtol: float = 1e-9
) -> BoundReport:
    t = ledger.times
    f_sq = 0.0 if f is None else l2_norm(f) ** 2
    lhs = ledger.series("l2") ** 2 + ledger.series("dissipation")
    bound = l2_norm(theta0) ** 2 + f_sq * t / kappa
    report = _margin_report("energy_inequality", t, lhs, bound, rtol)
    report.details["max_energy_residual"] = float(np.max(np.abs(ledger.series("energy_residual"))))
    return report


def centered_rate(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Second-order derivative on a possibly nonuniform grid (one-sided at the ends)."""
    if times.size < 5:
        raise InsufficientSamplingError(f"need at least 5 samples for d/dt estimates, got {times.size}")
    if np.any(np.diff(times) <= 0):
        raise InsufficientSamplingError("sample times are not strictly increasing")
    return np.gradient(values, times, edge_order=2)


def sobolev_exponent(gamma: float, beta: float = 0.0) -> float:
    """``4 gamma / (gamma + beta - 1)``; ``beta = 0`` gives the L^inf-only exponent."""
    return 4 * gamma / (gamma + beta - 1)


def check_sobolev_inequality(
    ledger: EstimateLedger,
    alpha: float,
    gamma: float,
    k_inf: float,
    f: SpectralField | float | None,
    *,
    use_exact_rate: bool = False,
) -> BoundReport:
    """Fit the smallest ``c`` with ``d/dt|th|^2_a + |th|^2_{a+g/2}/4 <= c (K^{4g/(g-1)} + |f|^2_a)``."""
    if not 1 < gamma < 2:
        raise PreconditionError(f"gamma must lie in (1, 2), got {gamma}")
    if not 0 < alpha < 1:
        raise PreconditionError(f"alpha must lie in (0, 1), got {alpha}")
    t = ledger.times
    h_a = ledger.norm_series(alpha)
    h_top = ledger.norm_series(alpha + gamma / 2)
    if use_exact_rate:
        rate = ledger.series(rate_column(alpha))
    else:
        rate = centered_rate(t, h_a**2)
    lhs = rate + 0.25 * h_top**2
    if isinstance(f, SpectralField):
        f_a = sobolev_norm(f, alpha)
    else:
        f_a = float(f or 0.0)
    scale = k_inf ** sobolev_exponent(gamma) + f_a**2
    ratio = lhs / scale
    i = int(np.argmax(ratio))
    c = float(max(ratio[i], 0.0))
    status = HOLDS if c == 0.0 else HOLDS_WITH_CONSTANT
    return BoundReport(
        f"sobolev_alpha_{alpha:.6g}",
        status,
        constant=c,
        witness_time=float(t[i]),
        margin_min=float(np.min(c * scale - lhs)),
        margins=(c * scale - lhs).tolist(),
        details={"lhs_max": float(lhs[i]), "scale": float(scale), "alpha": alpha, "gamma": gamma},
    )


# -- explicit formulas -------------------------------------------------------------------------


@dataclass(frozen=True)
class ForcingNorms:
    linf: float
    h2mg: float

    @classmethod
    def of(cls, f: SpectralField, gamma: float) -> ForcingNorms:
        return cls(linf_norm(f), sobolev_norm(f, 2 - gamma))


@dataclass(frozen=True)
class AbsorbingRadii:
    R_inf: float
    R1_gamma: float
    R1: float
    R2: float
    R2_gamma: float


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _power(base: float, exponent: float) -> float:
    if base == 0:
        return 0.0
    try:
        return base**exponent
    except OverflowError:
        return math.inf


def absorbing_radii(
    gamma: float,
    f: SpectralField | ForcingNorms,
    kappa: float = 1.0,
    beta: float = 0.25,
    c: float = 1.0,
) -> AbsorbingRadii:
    """Radii of the L^inf, H^{2-g} (both versions) and H^{2-g/2} absorbing balls.

    The unnamed generic constant of every formula is ``c``.
    """
    if not 1 < gamma < 2:
        raise PreconditionError(f"gamma must lie in (1, 2), got {gamma}")
    if not 0 < beta <= 0.25:
        raise PreconditionError(f"beta must lie in (0, 1/4], got {beta}")
    norms = f if isinstance(f, ForcingNorms) else ForcingNorms.of(f, gamma)
    r_inf = 2 * norms.linf / kappa
    r1g_sq = c * _power(2 * r_inf, sobolev_exponent(gamma)) + c * norms.h2mg**2
    r1_sq = c * _power(2 * r_inf, sobolev_exponent(gamma, beta)) + c * norms.h2mg**2

    def r2(r1sq: float) -> float:
        return math.sqrt(c * (2 * r1sq + norms.h2mg**2) * _safe_exp(c * r1sq)) if r1sq < math.inf else math.inf

    return AbsorbingRadii(r_inf, math.sqrt(r1g_sq), math.sqrt(r1_sq), r2(r1_sq), r2(r1g_sq))


def beta_exponent(k_inf: float, gamma: float, c3: float = 64.0) -> float:
    """Hoelder exponent ``min(1 / (c3 K^{3g/(g+2)}), 1/4)``."""
    if k_inf <= 0:
        raise PreconditionError(f"K_inf must be positive, got {k_inf}")
    if c3 < 64:
        raise PreconditionError(f"c3 must be >= 64, got {c3}")
    if not 1 < gamma < 2:
        raise PreconditionError(f"gamma must lie in (1, 2), got {gamma}")
    return min(1.0 / (c3 * k_inf ** (3 * gamma / (gamma + 2))), 0.25)


def _xi_rate(gamma: float, beta: float) -> float:
    if not 1 < gamma < 2:
        raise PreconditionError(f"gamma must lie in (1, 2), got {gamma}")
    if not 0 < beta <= 0.25:
        raise PreconditionError(f"beta must lie in (0, 1/4], got {beta}")
    return 2 * gamma * (1 - beta) / (2 + gamma)


def regularization_time(gamma: float, beta: float) -> float:
    """Time ``(2+g) / (2g(1-b))`` at which the weight ``xi`` reaches zero."""
    _xi_rate(gamma, beta)
    return (2 + gamma) / (2 * gamma * (1 - beta))


def xi_weight(t: float, gamma: float, beta: float) -> float:
    """Solution of ``xi' = -xi^(1-p)``, ``xi(0) = 1``, ``p = 2g(1-b)/(2+g)``: ``(1 - p t)^(1/p)``."""
    p = _xi_rate(gamma, beta)
    if t >= regularization_time(gamma, beta):
        return 0.0
    return max(1.0 - p * t, 0.0) ** (1.0 / p)


def xi_exponent(gamma: float, beta: float) -> float:
    """Exponent ``1 - 2g(1-b)/(2+g)`` in the ODE for ``xi``."""
    return 1.0 - _xi_rate(gamma, beta)


def check_holder_absorbing(ledger: EstimateLedger, k_inf: float, gamma: float, beta: float) -> BoundReport:
    """Fit ``psi(t) <= c K^2`` for all t and ``[theta]_{C^beta} <= c' K`` after ``t_beta``."""
    if "psi" not in ledger.columns:
        raise ValueError("ledger carries no psi/holder samples; construct it with beta set")
    t = ledger.times
    psi = ledger.series("psi")
    holder = ledger.series("holder")
    c_psi = float(np.max(psi)) / k_inf**2
    t_beta = regularization_time(gamma, beta)
    late = t >= t_beta
    c_holder = float(np.max(holder[late])) / k_inf if np.any(late) else None
    return BoundReport(
        "holder_absorbing",
        HOLDS_WITH_CONSTANT,
        constant=c_psi,
        witness_time=float(t[int(np.argmax(psi))]),
        margin_min=float(np.min(c_psi * k_inf**2 - psi)),
        details={
            "c_holder": c_holder,
            "t_beta": t_beta,
            "beta": beta,
            "holder_monotone": bool(is_nonincreasing(holder)),
        },
    )


def is_nonincreasing(series: Sequence[float], rtol: float = 1e-10) -> bool:
    s = np.asarray(series, dtype=float)
    return bool(np.all(np.diff(s) <= rtol * np.maximum(np.abs(s[:-1]), 1e-300)))


def check_absorbing_entry(
    family: Iterable[tuple[np.ndarray, np.ndarray]],
    radius: float | None = None,
    norm_name: str = "norm",
    *,
    confinement: float = 2.0,
    fit_tail: float = 0.25,
    formula_radius: float | None = None,
) -> BoundReport:
    """Entry time into ``{norm <= radius}`` and confinement to ``confinement * radius`` afterwards.

    ``family`` holds ``(times, values)`` pairs.  Without ``radius`` the radius is fitted
    as the largest value seen over the final ``fit_tail`` fraction of the runs.
    """
    family = [(np.asarray(t, float), np.asarray(v, float)) for t, v in family]
    if radius is None:
        tails = [v[t >= t[0] + (1 - fit_tail) * (t[-1] - t[0])] for t, v in family]
        radius = float(max(np.max(x) for x in tails))
    entries: list[float | None] = []
    worst = math.inf
    witness = None
    for idx, (t, v) in enumerate(family):
        inside = np.nonzero(v <= radius)[0]
        if inside.size == 0:
            entries.append(None)
            continue
        i = int(inside[0])
        entries.append(float(t[i]))
        after = v[i:]
        margin = confinement * radius - float(np.max(after))
        if margin < worst:
            worst = margin
            j = i + int(np.argmax(after))
            witness = {"trajectory": idx, "value": float(v[j]), "limit": confinement * radius, "time": float(t[j])}
    details = {"radius": radius, "entry_times": entries, "confinement": confinement, "norm": norm_name}
    if formula_radius is not None:
        details["formula_radius"] = formula_radius
    name = f"absorbing_{norm_name}"
    if any(e is None for e in entries):
        missing = [i for i, e in enumerate(entries) if e is None]
        details["not_absorbed"] = missing
        return BoundReport(name, NOT_ABSORBED, constant=radius, details=details)
    if worst < 0:
        return BoundReport(
            name, VIOLATED, constant=radius, witness_time=witness["time"], margin_min=worst, witness=witness, details=details
        )
    return BoundReport(name, HOLDS_WITH_CONSTANT, constant=radius, margin_min=worst, details=details)


def uniform_gronwall(
    times: Sequence[float],
    series_y: Sequence[float],
    series_a: Sequence[float],
    series_b: Sequence[float],
    window: float,
    start: float | None = None,
) -> float:
    """Bound ``y(t0 + r) <= (int y / r + int b) exp(int a)`` over ``[t0, t0 + r]``.

    Integrals use the trapezoid rule on the samples inside the window.
    """
    t = np.asarray(times, dtype=float)
    if window <= 0:
        raise PreconditionError(f"window must be positive, got {window}")
    if t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing with at least two samples")
    t0 = t[0] if start is None else float(start)
    sel = (t >= t0 - 1e-12) & (t <= t0 + window + 1e-12)
    if sel.sum() < 2 or t[sel][-1] < t0 + window - 1e-9:
        raise ValueError("series does not cover the requested window")
    ts = t[sel]
    y = np.asarray(series_y, float)[sel]
    a = np.asarray(series_a, float)[sel]
    b = np.asarray(series_b, float)[sel]
    return float((np.trapezoid(y, ts) / window + np.trapezoid(b, ts)) * math.exp(np.trapezoid(a, ts)))
