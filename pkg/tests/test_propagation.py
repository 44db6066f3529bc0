import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.special import i0

from corrlab.propagation import (FieldTrajectory, FirstOrderModel, SecondOrderModel,
                                 TwoComponentModel, attenuation_check, causal_solve, evolve,
                                 greens_function, simulate_stations, to_energy_coordinates,
                                 two_component_reduce)
from corrlab.spectral_core import DiscreteDomain, build_laplacian
from corrlab.stochastic_source import NoiseSpec, SourceTrajectory, sample_source


def dec_circle(n=9):
    return build_laplacian(DiscreteDomain("circle_1d", (n,)))


def quadratic(xi):
    return np.sum(xi ** 2, axis=1)


def models(n=9):
    d = dec_circle(n)
    return [FirstOrderModel(d, quadratic, -0.5, 1.0), SecondOrderModel(d, 0.5),
            SecondOrderModel(d, 2.0), TwoComponentModel(d, 0.5, 0.25)]


def rand_state(model, seed):
    rng = np.random.default_rng(seed)
    shape = (model.n_comp, model.dec.basis.shape[0])
    return model.dec.synthesize(model.dec.coefficients(
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape)))


@pytest.mark.parametrize("model", models(), ids=lambda m: m.variant)
def test_evolve_zero_time_is_identity(model):
    u = rand_state(model, 0)
    np.testing.assert_allclose(evolve(model, u, 0.0), u, atol=1e-13)


def test_first_order_mode_factor():
    d = dec_circle(5)
    m = FirstOrderModel(d, quadratic, -0.5, 1.0)
    k1 = np.flatnonzero(d.integer_modes[:, 0] == 1)[0]
    assert m.propagator(2.0)[k1, 0, 0] == pytest.approx(np.exp(-2j - 1), abs=1e-15)


@pytest.mark.parametrize("a", [0.5, 2.0, 3.0])
def test_second_order_mode_matches_expm(a):
    d = dec_circle(5)
    m = SecondOrderModel(d, a)
    k = np.flatnonzero(d.eigenvalues == 4)[0]
    comp = np.array([[0, 1], [-4, -2 * a]])
    for t in (0.3, 1.0, 2.7):
        np.testing.assert_allclose(m.propagator(t)[k], expm(comp * t), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.integers(0, 3))
def test_group_law(t, s, which):
    m = models()[which]
    lhs = m.propagator(t + s)
    rhs = np.einsum("mij,mjk->mik", m.propagator(t), m.propagator(s))
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(lhs)))


def test_evolve_rejects_negative_time():
    m = models()[1]
    with pytest.raises(ValueError):
        evolve(m, rand_state(m, 1), -0.1)


def test_zero_source_zero_field():
    m = SecondOrderModel(dec_circle(), 0.5)
    src = SourceTrajectory(0.05, np.zeros((400, 9)))
    tr = causal_solve(m, src, [0, 3], stationary=False)
    assert np.all(tr.series == 0)


def test_causality_exact():
    m = SecondOrderModel(dec_circle(), 0.5)
    rng = np.random.default_rng(4)
    vals = rng.standard_normal((300, 9))
    vals[:120] = 0.0
    tr = causal_solve(m, SourceTrajectory(0.05, vals), [0, 4], stationary=False)
    # sample n is the state at n dt, driven by forcing on steps < n
    assert np.all(tr.series[:121] == 0)
    assert np.any(tr.series[121:] != 0)


def test_output_blind_to_future_source():
    m = SecondOrderModel(dec_circle(), 0.5)
    spec = NoiseSpec(m.dec.domain, 0.05, seed=3, real=True, band=(0.5, np.inf))
    src = sample_source(spec, 4000)
    tr = causal_solve(m, src, [0, 5], stationary=False)
    later = src.values.copy()
    later[200:] = np.random.default_rng(0).standard_normal(later[200:].shape)
    tr2 = causal_solve(m, SourceTrajectory(0.05, later), [0, 5], stationary=False)
    np.testing.assert_array_equal(tr.series[:201], tr2.series[:201])
    assert np.any(tr.series[201:] != tr2.series[201:])


def telegraph_green(t, d, a):
    # u_tt + 2a u_t - u_xx = delta(t) delta(x) on the line
    s = np.sqrt(np.maximum(t ** 2 - d ** 2, 0.0))
    return np.where(t > d, 0.5 * np.exp(-a * t) * i0(a * s), 0.0)


def test_greens_function_matches_telegraph_kernel():
    n = 1025
    m = SecondOrderModel(dec_circle(n), 0.5)
    x = m.dec.domain.points()[:, 0]
    A, B = 0, 200
    d = x[B] - x[A]
    t = np.linspace(d + 0.3, 2 * np.pi - d - 0.3, 25)
    np.testing.assert_allclose(greens_function(m, t, A, B).real, telegraph_green(t, d, 0.5),
                               rtol=5e-3)


def test_impulse_arrival_time():
    n, dt, a = 257, 0.01, 0.5
    m = SecondOrderModel(dec_circle(n), a)
    x = m.dec.domain.points()[:, 0]
    A, B = 0, 64
    d = x[B] - x[A]
    vals = np.zeros((300, n))
    vals[0, A] = 1.0 / (dt * m.dec.domain.cell_volume)
    tr = causal_solve(m, SourceTrajectory(dt, vals), [B], stationary=False)
    u = tr.series[:, 0, 0].real
    jump = 0.5 * np.exp(-a * d)
    first = np.argmax(np.abs(u) > 0.5 * jump) * dt
    assert abs(first - d) <= dt + 1e-12


def test_first_order_steady_state():
    d = build_laplacian(DiscreteDomain("circle_1d", (3,)))
    m = FirstOrderModel(d, quadratic, -2.0, 1.0)
    dt = 1e-4
    f = np.array([1.0, 2.0 - 1.0j, 0.5j])
    steps = int(14 / dt)
    src = SourceTrajectory(dt, np.broadcast_to(f, (steps, 3)))
    tr = causal_solve(m, src, [0, 1, 2], stationary=False)
    coef_f = d.coefficients(f)
    g = m.generator()[:, 0, 0]
    steady = d.synthesize(-coef_f / g)
    np.testing.assert_allclose(tr.series[-1, :, 0], steady, rtol=1e-8, atol=1e-10)


def test_greens_function_basic_values():
    d = dec_circle(5)
    m = SecondOrderModel(d, 0.5)
    assert np.all(greens_function(m, np.array([-1.0, -1e-3, 0.0]), 0, 2) == 0)
    proj = np.sum(d.basis[0] * d.basis[2].conj())
    assert greens_function(m, 1e-7, 0, 2)[0] / 1e-7 == pytest.approx(proj, rel=1e-6, abs=1e-9)
    g = 0.0
    for k, mu in enumerate(d.eigenvalues):
        block = expm(np.array([[0, 1], [-mu, -1.0]]))
        g += block[0, 1] * abs(d.basis[0, k]) ** 2
    assert greens_function(m, 1.0, 0, 0)[0] == pytest.approx(g, abs=1e-10)


def test_attenuation_first_order():
    m = FirstOrderModel(dec_circle(), quadratic, -0.7, 1.0)
    rep = attenuation_check(m, 10.0)
    assert rep.rate == pytest.approx(0.7, abs=1e-9)
    assert rep.rate >= 1 / m.T_att - 1e-6


@pytest.mark.parametrize("a", [0.3, 0.5])
def test_attenuation_second_order_envelope(a):
    m = SecondOrderModel(dec_circle(), a)
    rep = attenuation_check(m, 6 * m.T_att)
    assert rep.rate >= 1 / m.T_att - 1e-6
    assert rep.rate == pytest.approx(a, abs=1e-6)


def test_attenuation_overdamped_rate():
    # mu = 1 < a^2: the slow exponent a - sqrt(a^2 - 1) sets the rate
    m = SecondOrderModel(dec_circle(), 2.0)
    rep = attenuation_check(m, 6 * m.T_att)
    assert rep.rate == pytest.approx(2 - np.sqrt(3), rel=1e-3)
    assert rep.rate >= 1 / m.T_att - 1e-3


def test_attenuation_zero_state_degenerate():
    m = SecondOrderModel(dec_circle(), 0.5)
    rep = attenuation_check(m, 10 * m.T_att, state=np.zeros((2, 9)))
    assert rep.degenerate


def test_branch_basis_diagonalizes_principal_symbol():
    d = dec_circle(5)
    m = TwoComponentModel(d, 0.5, 1.0)
    h = m.hamiltonian_blocks().copy()
    h[:, 1, 1] = 0.0  # principal part (a = 0)
    v = m.branch_basis()
    k = np.flatnonzero(d.eigenvalues == 1)[0]
    np.testing.assert_allclose(np.linalg.eigvalsh(h[k]), [-1, 1], atol=1e-14)
    np.testing.assert_allclose(h[k] @ v[k], v[k] * np.array([1, -1]), atol=1e-14)
    np.testing.assert_allclose(v[k][:, 0], np.array([1, -1]) / np.sqrt(2), atol=1e-15)
    np.testing.assert_allclose(v[k].conj().T @ v[k], np.eye(2), atol=1e-14)


def test_branch_projectors_sum_to_identity():
    m = TwoComponentModel(dec_circle(9), 0.5, 0.5)
    p = m.branch_projectors()
    assert np.max(np.abs(p.sum(axis=1) - np.eye(2))) < 1e-12
    right, left = m.branch_eigenbasis()
    assert np.max(np.abs(np.einsum("mij,mjk->mik", left, right) - np.eye(2))) < 1e-12


def test_reduced_matches_direct_station_series():
    d = dec_circle(9)
    eps = 0.5
    direct = SecondOrderModel(d, 0.5, eps)
    reduced = two_component_reduce(direct)
    spec = NoiseSpec(d.domain, 0.05, seed=8, band=(0.5, np.inf))
    src = sample_source(spec, 800)
    st_ = [0, 3]
    a = causal_solve(direct, src, st_, stationary=False, components=(0, 1))
    b = causal_solve(reduced, src, st_, stationary=False)
    np.testing.assert_allclose(b.series[..., 1], -1j * eps * a.series[..., 1], atol=1e-10)
    # component 0 reads eps sqrt(mu) u; compare through the modal readout
    r = eps * np.sqrt(d.eigenvalues)
    rows = d.station_rows(st_)
    readout = np.zeros((2, d.n_modes, 2), complex)
    readout[:, :, 0] = rows * r
    c = causal_solve(direct, src, st_, stationary=False, readout=readout)
    np.testing.assert_allclose(b.series[..., 0], c.series[..., 0], atol=1e-10)


def test_energy_coordinates_map():
    d = dec_circle(5)
    m = SecondOrderModel(d, 0.5, 0.5)
    state = np.ones((d.n_modes, 2))
    e = to_energy_coordinates(m, state)
    np.testing.assert_allclose(e[:, 0], 0.5 * np.sqrt(d.eigenvalues))
    np.testing.assert_allclose(e[:, 1], -0.5j)


def test_two_component_rejects_variable_damping():
    d = dec_circle(9)
    with pytest.raises(ValueError):
        two_component_reduce(SecondOrderModel(d, 0.5 + 0.1 * np.cos(d.domain.points()[:, 0])))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_energy_non_increasing(seed):
    m = SecondOrderModel(dec_circle(), 0.5)
    u = rand_state(m, seed)
    energies = []
    for t in np.linspace(0, 6, 25):
        c = m.dec.coefficients(evolve(m, u, t))
        energies.append(np.sum(m.dec.eigenvalues * np.abs(c[0]) ** 2 + np.abs(c[1]) ** 2))
    assert np.all(np.diff(energies) <= 1e-12 * energies[0])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_energy_non_increasing_variable_damping(seed):
    d = dec_circle()
    m = SecondOrderModel(d, 0.5 + 0.3 * np.cos(d.domain.points()[:, 0]))
    u = rand_state(m, seed)
    energies = []
    for t in np.linspace(0, 3, 13):
        c = d.coefficients(evolve(m, u, t))
        energies.append(np.sum(d.eigenvalues * np.abs(c[0]) ** 2 + np.abs(c[1]) ** 2))
    assert np.all(np.diff(energies) <= 1e-10 * energies[0])


def test_variable_path_reduces_to_constant():
    d = dec_circle()
    const = SecondOrderModel(d, 0.5)
    var = SecondOrderModel(d, np.full(9, 0.5))
    u = rand_state(const, 3)
    np.testing.assert_allclose(evolve(var, u, 2.0, max_step=1e-3), evolve(const, u, 2.0),
                               atol=1e-6)


def test_realness_preserved():
    d = dec_circle()
    m = SecondOrderModel(d, 0.5)
    rng = np.random.default_rng(1)
    u = d.synthesize(d.coefficients(rng.standard_normal((2, 9))))
    assert np.max(np.abs(evolve(m, u.real, 3.0).imag)) < 1e-12
    spec = NoiseSpec(d.domain, 0.05, seed=1, real=True)
    tr = causal_solve(m, sample_source(spec, 200), [0, 4], stationary=False)
    assert np.max(np.abs(tr.series.imag)) < 1e-12


def test_burn_in_guard():
    m = SecondOrderModel(dec_circle(), 0.5)
    src = sample_source(NoiseSpec(m.dec.domain, 0.05), 2000)
    with pytest.raises(ValueError, match="stationarity"):
        causal_solve(m, src, [0], burn_in=4 * m.T_att)
    tr = causal_solve(m, src, [0])
    assert tr.t0 == pytest.approx(8 * m.T_att, abs=0.05)


def test_streamed_equals_one_shot():
    m = SecondOrderModel(dec_circle(), 0.5)
    spec = NoiseSpec(m.dec.domain, 0.05, seed=2, taps=np.array([10.0, 5.0]))
    a = simulate_stations(m, spec, 500, [0, 2], chunk=77)
    b = simulate_stations(m, spec, 500, [0, 2], chunk=100000)
    np.testing.assert_allclose(a.series, b.series, atol=1e-12)


def test_field_trajectory_round_trip(tmp_path):
    m = SecondOrderModel(dec_circle(), 0.5)
    tr = simulate_stations(m, NoiseSpec(m.dec.domain, 0.05, seed=5), 100, [1, 2],
                           realization_index=3)
    tr.save(tmp_path / "traj")
    back = FieldTrajectory.load(tmp_path / "traj")
    assert np.array_equal(back.series, tr.series)
    assert back.stations == [1, 2] and back.realization_index == 3
    assert back.model_hash == m.model_hash()


def test_damping_must_be_positive():
    d = dec_circle()
    with pytest.raises(ValueError):
        SecondOrderModel(d, 0.0)
    with pytest.raises(ValueError):
        FirstOrderModel(d, quadratic, 0.1)
