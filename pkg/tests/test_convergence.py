import csv
import json
import math

import numpy as np
import pytest

from sqgattr.convergence import (
    ConvergenceRun,
    check_spectral_lemma,
    eta_balance_terms,
    eta_energy_residual,
    run_convergence,
    sample_pair,
    single_mode_eta_h1,
    spread,
)
from sqgattr.errors import PreconditionError
from sqgattr.estimates import HOLDS
from sqgattr.grid import SpectralField, SpectrumRecipe, TorusGrid, generate_field
from sqgattr.solver import StepScheme


def mode(n, k):
    return SpectralField.from_function(TorusGrid(n), lambda x1, x2: np.cos(k * x1))


def test_spectral_lemma_unit_mode_is_exactly_zero():
    rep = check_spectral_lemma(mode(16, 1), 1.5, 0.0, 0.5)
    assert rep.status == HOLDS
    # only FFT round-off in the other modes survives
    assert rep.details["lhs"] < 1e-14


def test_spectral_lemma_second_mode_values():
    rep = check_spectral_lemma(mode(16, 2), 1.5, 0.0, 0.5)
    assert rep.status == HOLDS
    assert rep.details["lhs"] == pytest.approx((math.sqrt(2) - 1) * math.sqrt(2) * math.pi, rel=1e-13)
    assert rep.details["lhs"] == pytest.approx(1.8403, abs=1e-4)
    assert rep.details["rhs"] == pytest.approx(2 * math.pi, rel=1e-13)
    assert rep.constant == 1.0


def test_spectral_lemma_random_fields():
    grid = TorusGrid(32)
    rng = np.random.default_rng(11)
    for i in range(1000):
        gamma = rng.uniform(1.01, 1.99)
        m = rng.uniform(0, 2)
        s = rng.uniform(gamma - 1, 2)
        f = generate_field(SpectrumRecipe(k_max=rng.uniform(1, 10), a=rng.uniform(0, 3), seed=i), grid)
        assert check_spectral_lemma(f, gamma, m, s).status == HOLDS


def test_spectral_lemma_preconditions():
    f = mode(16, 2)
    with pytest.raises(PreconditionError):
        check_spectral_lemma(f, 1.5, 0.0, 0.4)
    with pytest.raises(PreconditionError):
        check_spectral_lemma(f, 1.0, 0.0, 0.5)
    with pytest.raises(PreconditionError):
        check_spectral_lemma(f, 1.5, -1.0, 0.5)


def test_spread_helper():
    assert spread([0, 0]) == 1.0
    assert spread([0, 1]) == math.inf
    assert spread([2, 1, 4]) == 4.0


def test_unit_mode_pair_never_separates():
    run = ConvergenceRun(mode(16, 1), T=0.5, sample_every=0.05)
    rep = run_convergence(run)
    for g in run.gamma_grid:
        assert max(rep.eta_h1[g]) < 1e-13


def test_second_mode_matches_closed_form():
    run = ConvergenceRun(mode(16, 2), T=1.0, sample_every=0.05, scheme=StepScheme(dt=5e-3))
    rep = run_convergence(run)
    for g, r in zip(run.gamma_grid, rep.ratios_at_T):
        closed = single_mode_eta_h1(2, g, 1.0) / (g - 1)
        assert r == pytest.approx(closed, rel=1e-6)
    assert [round(r, 4) for r in rep.ratios_at_T] == [1.4196, 1.5468, 1.6081, 1.6379]
    assert rep.spread_at_T < 1.2
    assert rep.within_spread


def test_threads_do_not_change_results():
    theta0 = generate_field(SpectrumRecipe(k_max=4, seed=2), TorusGrid(32))
    run = ConvergenceRun(theta0, T=0.3, sample_every=0.05)
    a = run_convergence(run)
    b = run_convergence(run, threads=4)
    assert a.max_ratios == b.max_ratios
    assert a.ratios_at_T == b.ratios_at_T


def test_grid_precondition():
    with pytest.raises(PreconditionError):
        ConvergenceRun(mode(16, 2), gamma_grid=(1.6,))
    with pytest.raises(PreconditionError):
        ConvergenceRun(mode(16, 2), gamma_grid=(1.0,))


def test_report_outputs(tmp_path):
    run = ConvergenceRun(mode(16, 2), gamma_grid=(1.4, 1.2), T=0.2, sample_every=0.1)
    rep = run_convergence(run)
    rep.to_csv(tmp_path / "c.csv")
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert len(rows) == 6
    assert float(rows[0]["eta_h1"]) == 0.0
    rep.write_summary(tmp_path / "s.json")
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["spread_factor"] == rep.spread_factor


def test_eta_balance_exact_rate_closes():
    theta0 = generate_field(SpectrumRecipe(k_max=5, seed=3), TorusGrid(32))
    hist = sample_pair(theta0, 1.3, StepScheme(dt=2e-3), 0.2, 0.05)
    scale = max(eta_balance_terms(s, c)["dissipation"] for s, c in zip(hist.sub, hist.crit))
    for t in hist.times[1:]:
        assert abs(eta_energy_residual(hist, t, exact_rate=True)) < 1e-9 * scale


def test_eta_balance_differenced_rate_converges():
    theta0 = generate_field(SpectrumRecipe(k_max=5, seed=3), TorusGrid(32))
    res = []
    for h in (4e-2, 2e-2, 1e-2):
        hist = sample_pair(theta0, 1.3, StepScheme(dt=h / 4), 0.2, h)
        i = int(round(0.1 / h))
        res.append(abs(eta_energy_residual(hist, hist.times[i])))
    assert res[0] > res[1] > res[2]
    assert math.log2(res[0] / res[1]) > 1.5


def test_eta_balance_vanishes_when_pair_coincides():
    hist = sample_pair(mode(16, 1), 1.3, StepScheme(), 0.2, 0.05)
    for t in hist.times[1:-1]:
        assert eta_energy_residual(hist, t) == pytest.approx(0.0, abs=1e-20)


def test_eta_residual_rejects_off_sample_times():
    hist = sample_pair(mode(16, 2), 1.3, StepScheme(), 0.2, 0.05)
    with pytest.raises(ValueError):
        eta_energy_residual(hist, 0.07)
    with pytest.raises(ValueError):
        eta_energy_residual(hist, 0.0)
