import math

import numpy as np
import pytest

from sqgattr.errors import BlowUpError, ConfigurationError, PreconditionError
from sqgattr.grid import (
    SpectralField,
    SpectrumRecipe,
    TorusGrid,
    generate_field,
    is_dealiased,
    l2_norm,
    read_checkpoint,
    sobolev_norm,
)
from sqgattr.solver import (
    StepScheme,
    co_integrate,
    initial_state,
    integrate,
    nonlinear_term,
    pair_integrate,
    step,
    time_derivative,
)


def mode(grid, k1, k2=0, amp=1.0, phase=0.0):
    return SpectralField.from_function(grid, lambda x1, x2: amp * np.cos(k1 * x1 + k2 * x2 + phase))


def oversampled_advection(theta: SpectralField) -> np.ndarray:
    """u . grad theta evaluated on a grid twice as fine, then cut to the dealiased disc."""
    grid = theta.grid
    n, m = grid.n, 2 * grid.n
    fine = TorusGrid(m)
    c = np.zeros(fine.shape, dtype=complex)
    h = n // 2
    c[:h, :h] = theta.coeffs[:h, :h]
    c[-h + 1 :, :h] = theta.coeffs[-h + 1 :, :h]
    k1, k2 = fine.k1, fine.k2
    inv = fine.multiplier_power(-1.0)

    def phys(coeffs):
        return np.fft.irfft2(coeffs * m * m, s=(m, m))

    u1, u2 = phys(-1j * k2 * inv * c), phys(1j * k1 * inv * c)
    prod = u1 * phys(1j * k1 * c) + u2 * phys(1j * k2 * c)
    pc = np.fft.rfft2(prod) / (m * m)
    out = np.zeros(grid.shape, dtype=complex)
    out[:h, :h] = pc[:h, :h]
    out[-h + 1 :, :h] = pc[-h + 1 :, :h]
    return out * grid.dealias_mask


@pytest.mark.parametrize("k", [(1, 0), (0, 3), (2, 1)])
def test_nonlinear_term_vanishes_on_single_modes(k):
    grid = TorusGrid(32)
    out = nonlinear_term(mode(grid, *k, phase=0.4))
    assert np.max(np.abs(out.coeffs)) < 1e-15


@pytest.mark.parametrize("which", ["two-mode", "random"])
def test_nonlinear_term_matches_oversampled_product(which):
    grid = TorusGrid(32)
    if which == "two-mode":
        theta = mode(grid, 1) + mode(grid, 0, 1) + mode(grid, 2, 1, amp=0.5)
    else:
        theta = generate_field(SpectrumRecipe(k_max=10, seed=5), grid)
    ours = nonlinear_term(theta).coeffs
    ref = oversampled_advection(theta)
    assert np.max(np.abs(ours - ref)) <= 1e-10 * np.max(np.abs(ref))
    assert ours[0, 0] == 0
    assert is_dealiased(nonlinear_term(theta))


@pytest.mark.parametrize("gamma", [1.0, 1.3, 1.9])
def test_unit_mode_decays_exactly(gamma):
    grid = TorusGrid(32)
    st = initial_state(mode(grid, 1), gamma)
    out = integrate(st, StepScheme(dt=0.01), 1.0).final
    np.testing.assert_allclose(out.theta.coeffs, math.exp(-1.0) * st.theta.coeffs, atol=1e-15)


def test_second_mode_closed_form():
    grid = TorusGrid(32)
    st = initial_state(mode(grid, 2), 1.5)
    out = integrate(st, StepScheme(dt=1e-3), 1.0).final
    amp = math.exp(-(2**1.5))
    assert amp == pytest.approx(0.0591, abs=1e-4)
    expected = amp * mode(grid, 2).physical()
    assert np.max(np.abs(out.theta.physical() - expected)) / amp < 1e-8


def test_general_single_mode_is_exact():
    grid = TorusGrid(32)
    st = initial_state(mode(grid, 2, 3, amp=0.7, phase=1.1), 1.7)
    out = integrate(st, StepScheme(dt=0.05), 2.0).final
    np.testing.assert_allclose(out.theta.coeffs, math.exp(-2.0 * 13**0.85) * st.theta.coeffs, rtol=1e-12, atol=1e-16)


@pytest.mark.parametrize("gamma", [1.0, 1.5])
def test_forced_steady_state(gamma):
    grid = TorusGrid(32)
    f = mode(grid, 1)
    st = initial_state(f, gamma, forcing=f)
    out = integrate(st, StepScheme(), 3.0).final
    # Simpson weights on the forcing leave an O(dt^4) offset from the exact fixed point
    assert np.max(np.abs(out.theta.physical() - f.physical())) < 1e-10


def test_mean_zero_and_l2_decreasing_without_forcing():
    grid = TorusGrid(32)
    st = initial_state(generate_field(SpectrumRecipe(k_max=8, seed=1), grid), 1.4)
    norms = []

    def on_step(rec):
        assert rec.new.theta.coeffs[0, 0] == 0
        assert abs(np.mean(rec.new.theta.physical())) < 1e-13
        norms.append(l2_norm(rec.new.theta))

    integrate(st, StepScheme(), 1.0, on_step=on_step)
    assert len(norms) > 10
    assert np.all(np.diff(norms) < 0)


def test_split_run_matches_single_run():
    grid = TorusGrid(32)
    f = generate_field(SpectrumRecipe(k_max=3, seed=2, amplitude=0.3), grid)
    st = initial_state(generate_field(SpectrumRecipe(k_max=8, seed=3), grid), 1.5, forcing=f)
    scheme = StepScheme(dt=0.01)
    whole = integrate(st, scheme, 1.0).final
    half = integrate(integrate(st, scheme, 0.5).final, scheme, 0.5).final
    np.testing.assert_allclose(half.theta.coeffs, whole.theta.coeffs, rtol=0, atol=1e-13)
    assert half.t == whole.t == 1.0


def test_fourth_order_in_dt():
    grid = TorusGrid(32)
    theta0 = mode(grid, 1, amp=2.0) + mode(grid, 1, 2, amp=1.5, phase=0.3)
    st = initial_state(theta0, 1.5)
    T, dt = 0.5, 0.05
    ref = integrate(st, StepScheme(dt=dt / 8), T).final.theta
    errs = [l2_norm(integrate(st, StepScheme(dt=d), T).final.theta - ref) for d in (dt, dt / 2)]
    order = math.log2(errs[0] / errs[1])
    assert 3.5 < order < 4.6


def test_vanishing_viscosity_is_cauchy():
    grid = TorusGrid(32)
    theta0 = generate_field(SpectrumRecipe(k_max=8, seed=4), grid)
    finals = [
        integrate(initial_state(theta0, 1.5, epsilon=eps), StepScheme(dt=5e-3), 0.5).final.theta
        for eps in (1e-1, 1e-2, 1e-3)
    ]
    d1 = l2_norm(finals[0] - finals[1])
    d2 = l2_norm(finals[1] - finals[2])
    assert d2 < d1
    assert d2 < 0.2 * d1


def test_sampling_and_checkpoints(tmp_path):
    grid = TorusGrid(16)
    st = initial_state(generate_field(SpectrumRecipe(k_max=4, seed=0), grid), 1.5)
    seen = []
    traj = integrate(
        st,
        StepScheme(),
        0.3,
        sample_every=0.1,
        on_sample=lambda s, d: seen.append(s.t),
        checkpoint_times=[0.15],
        checkpoint_dir=tmp_path,
    )
    assert seen == pytest.approx([0.0, 0.1, 0.2, 0.3])
    assert traj.sample_times == seen
    assert len(traj.checkpoints) == 1
    field, gamma, t = read_checkpoint(traj.checkpoints[0])
    assert (gamma, t) == (1.5, 0.15)
    assert traj.final.t == 0.3


def test_step_derivative_records_are_exact():
    grid = TorusGrid(16)
    st = initial_state(generate_field(SpectrumRecipe(k_max=4, seed=6), grid), 1.5)
    recs = []
    integrate(st, StepScheme(), 0.05, on_step=recs.append)
    for rec in recs:
        np.testing.assert_allclose(rec.dprev, time_derivative(rec.prev), atol=1e-13)
        np.testing.assert_allclose(rec.dnew, time_derivative(rec.new), atol=1e-13)
        assert rec.dt > 0


def test_step_enforces_cfl():
    grid = TorusGrid(32)
    st = initial_state(generate_field(SpectrumRecipe(k_max=8, seed=1, amplitude=5.0), grid), 1.5)
    with pytest.raises(PreconditionError):
        step(st, StepScheme(), dt=1.0)
    assert step(st, StepScheme()).t > 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_is_reported_with_state():
    grid = TorusGrid(16)
    c = np.zeros(grid.shape, dtype=complex)
    c[1, 0] = c[-1, 0] = np.inf
    st = initial_state(SpectralField(grid, c), 1.5)
    with pytest.raises(BlowUpError) as err:
        integrate(st, StepScheme(dt=0.01), 0.1)
    assert err.value.state is not None and err.value.state.t == 0.0


def test_state_validation():
    grid = TorusGrid(16)
    with pytest.raises(ConfigurationError):
        initial_state(mode(grid, 1), 2.0)
    with pytest.raises(ConfigurationError):
        initial_state(mode(grid, 1), 0.9)
    with pytest.raises(ConfigurationError):
        initial_state(mode(grid, 1), 1.5, epsilon=-1.0)
    with pytest.raises(PreconditionError):
        integrate(initial_state(mode(grid, 1), 1.5), StepScheme(), 0.0)


def test_initial_state_dealiases_data():
    grid = TorusGrid(32)
    c = np.zeros(grid.shape, dtype=complex)
    c[14, 0] = c[-14, 0] = 0.5
    c[3, 11] = 0.25
    c[1, 2] = 1.0
    st = initial_state(SpectralField(grid, c), 1.5, forcing=SpectralField(grid, c))
    for field in (st.theta, st.forcing):
        assert field.coeffs[14, 0] == 0 and field.coeffs[3, 11] == 0
        assert field.coeffs[1, 2] == 1.0


def test_without_dealiasing_high_modes_are_kept():
    grid = TorusGrid(32)
    theta = generate_field(SpectrumRecipe(k_max=10, seed=2), grid)
    st = initial_state(theta, 1.5)
    a = integrate(st, StepScheme(dt=1e-3), 0.05).final.theta
    b = integrate(st, StepScheme(dt=1e-3, dealias=False), 0.05).final.theta
    assert is_dealiased(a)
    assert not is_dealiased(b)


def test_pair_identical_data():
    grid = TorusGrid(32)
    theta = generate_field(SpectrumRecipe(k_max=6, seed=3), grid)
    pair = pair_integrate(theta, theta, 1.5, StepScheme(), 0.5, sample_every=0.1)
    assert pair.series["diff_h2mg"] == [0.0] * len(pair.times)


def test_pair_perturbation_growth_and_linearity():
    grid = TorusGrid(32)
    base = generate_field(SpectrumRecipe(k_max=6, seed=3), grid)
    bump = SpectralField.from_function(grid, lambda x1, x2: np.cos(2 * x1 + x2))
    scheme = StepScheme(dt=2e-3)
    small = pair_integrate(base, base + bump * 1e-6, 1.5, scheme, 1.0, sample_every=0.05)
    large = pair_integrate(base, base + bump * 1e-5, 1.5, scheme, 1.0, sample_every=0.05)
    t = np.asarray(small.times)
    d = np.asarray(small.series["diff_h2mg"])
    assert d[0] == pytest.approx(1e-6 * sobolev_norm(bump, 0.5), rel=1e-10)
    # at most exponential growth: log d stays below a line through log d(0)
    slopes = np.log(d[1:] / d[0]) / t[1:]
    assert np.max(slopes) < 5.0
    ratio = np.asarray(large.series["diff_h2mg"]) / d
    early = t <= 0.1
    np.testing.assert_allclose(ratio[early], 10.0, rtol=1e-3)


def test_co_integrate_requires_common_grid():
    a = initial_state(mode(TorusGrid(16), 1), 1.5)
    b = initial_state(mode(TorusGrid(32), 1), 1.5)
    with pytest.raises(PreconditionError):
        co_integrate([a, b], StepScheme(), 0.1)
