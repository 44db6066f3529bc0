import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from corrlab.spectral_core import (DiscreteDomain, apply_operator_function, build_laplacian,
                                   decompose_operator, wave_kernels)


@pytest.mark.parametrize("kind,counts,expected", [
    ("circle_1d", (5,), [0, 1, 1, 4, 4]),
    ("interval_neumann_1d", (3,), [0, 1, 4]),
    ("torus_2d", (3, 3), [0, 1, 1, 1, 1, 2, 2, 2, 2]),
])
def test_laplacian_spectra(kind, counts, expected):
    dec = build_laplacian(DiscreteDomain(kind, counts))
    np.testing.assert_allclose(dec.eigenvalues, expected, atol=1e-12)
    assert dec.orthonormality_error() < 1e-12


def test_circle_symbol_is_k_squared():
    dec = build_laplacian(DiscreteDomain("circle_1d", (33,)))
    k = dec.integer_modes[:, 0]
    assert np.array_equal(dec.eigenvalues, (k ** 2).astype(float))


def test_extent_rescales_symbol():
    dec = build_laplacian(DiscreteDomain("circle_1d", (5,), extent=(np.pi,)))
    np.testing.assert_allclose(dec.eigenvalues, [0, 4, 4, 16, 16], atol=1e-12)


@pytest.mark.parametrize("kind,counts", [("circle_1d", (7,)), ("torus_2d", (5, 7)),
                                         ("interval_neumann_1d", (9,))])
def test_spacing_times_count_is_extent(kind, counts):
    dom = DiscreteDomain(kind, counts)
    np.testing.assert_allclose(np.array(dom.spacing) * np.array(dom.counts), dom.extent)
    assert dom.cell_volume > 0


def test_even_grid_drops_nyquist():
    dom = DiscreteDomain("circle_1d", (16,))
    assert dom.modes == (15,)
    dec = build_laplacian(dom)
    assert dec.integer_modes.min() == -7 and dec.integer_modes.max() == 7
    assert dec.orthonormality_error() < 1e-12


@pytest.mark.parametrize("kwargs", [
    dict(kind="circle_1d", counts=(0,)),
    dict(kind="circle_1d", counts=(1,)),
    dict(kind="circle_1d", counts=(8,), modes=(4,)),
    dict(kind="sphere", counts=(8,)),
    dict(kind="circle_1d", counts=(8,), extent=(-1.0,)),
])
def test_domain_rejects(kwargs):
    with pytest.raises(ValueError):
        DiscreteDomain(**kwargs)


def test_domain_round_trip():
    dom = DiscreteDomain("torus_2d", (6, 5), extent=(3.0, 2.0))
    assert DiscreteDomain.from_dict(dom.to_dict()) == dom


@pytest.mark.parametrize("q2,t,expected", [
    (0.0, 3.0, (1.0, 3.0)),
    (1.0, np.pi / 2, (0.0, 1.0)),
])
def test_wave_kernel_limits(q2, t, expected):
    w = wave_kernels(q2, t)
    np.testing.assert_allclose([w.cos_part, w.sinc_part], expected, atol=1e-15)


def _series(q2, t, terms=60):
    # power-series oracle of the entire kernels
    from math import factorial
    c = sum((-q2) ** n * t ** (2 * n) / factorial(2 * n) for n in range(terms))
    s = sum((-q2) ** n * t ** (2 * n + 1) / factorial(2 * n + 1) for n in range(terms))
    return c, s


@pytest.mark.parametrize("q2,t", [(-1.0, 1.0), (2.5, 0.7), (-3.0, 2.0), (1e-9, 4.0)])
def test_wave_kernel_power_series(q2, t):
    w = wave_kernels(q2, t)
    c, s = _series(q2, t)
    np.testing.assert_allclose([w.cos_part, w.sinc_part], [c, s], rtol=1e-13)


def test_wave_kernel_cosh_values():
    w = wave_kernels(-1.0, 1.0)
    assert abs(w.cos_part - 1.5430806348152437) < 1e-15
    assert abs(w.sinc_part - 1.1752011936438014) < 1e-15


def test_wave_kernel_no_overflow_with_damping():
    # e^{x} e^{-d t} is finite although e^{x} alone overflows
    w = wave_kernels(-1.0, 800.0, damping=1.0 + 1e-3)
    assert np.isfinite(w.cos_part) and np.isfinite(w.sinc_part)
    np.testing.assert_allclose(w.cos_part, 0.5 * np.exp(-0.8), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-4, 4), st.floats(0.1, 3))
def test_wave_kernel_ode(q2, t):
    h = 1e-4
    c = [wave_kernels(q2, t + k * h).cos_part for k in (-1, 0, 1)]
    d2 = (c[0] - 2 * c[1] + c[2]) / h ** 2
    assert abs(d2 + q2 * c[1]) < 1e-6 * max(1.0, abs(q2 * c[1])) + 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e-6, 1e-6), st.floats(0, 5))
def test_wave_kernel_continuous_at_zero(q2, t):
    w = wave_kernels(q2, t)
    assert abs(w.cos_part - 1) < 1e-4 and abs(w.sinc_part - t) < 1e-4


def _field(n, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_identity_function_leaves_field():
    dec = build_laplacian(DiscreteDomain("circle_1d", (9,)))
    u = dec.synthesize(_field(9, 1))
    np.testing.assert_allclose(apply_operator_function(dec, lambda m: np.ones_like(m), u), u,
                               atol=1e-13)


def test_plane_wave_is_eigenfunction():
    dom = DiscreteDomain("circle_1d", (9,))
    dec = build_laplacian(dom)
    u = np.exp(1j * dom.points()[:, 0])
    np.testing.assert_allclose(apply_operator_function(dec, lambda m: m, u), u, atol=1e-13)


def test_heat_kernel_matches_dense_exponential():
    dom = DiscreteDomain("circle_1d", (8,), modes=(7,))
    dec = build_laplacian(dom)
    spike = np.zeros(8, complex)
    spike[3] = 1.0
    spike = dec.synthesize(dec.coefficients(spike))  # band-limit to the 7 modes
    # independent route: dense -Laplacian assembled from the modes, then expm
    lap = dec.basis @ np.diag(dec.eigenvalues) @ (dec.basis.conj().T * dec.weights)
    direct = expm(-lap) @ spike
    np.testing.assert_allclose(apply_operator_function(dec, lambda m: np.exp(-m), spike), direct,
                               atol=1e-12)


def test_dense_decomposition_matches_fourier():
    dom = DiscreteDomain("circle_1d", (9,))
    dec = build_laplacian(dom)
    lap = dec.basis @ np.diag(dec.eigenvalues) @ (dec.basis.conj().T * dec.weights)
    dense = decompose_operator(dom, lap)
    np.testing.assert_allclose(dense.eigenvalues, dec.eigenvalues, atol=1e-10)
    assert dense.orthonormality_error() < 1e-12


def test_rejects_nonfinite_function():
    dec = build_laplacian(DiscreteDomain("circle_1d", (5,)))
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        apply_operator_function(dec, lambda m: 1 / m, np.ones(5))


def test_rejects_wrong_field_size():
    dec = build_laplacian(DiscreteDomain("circle_1d", (5,)))
    with pytest.raises(ValueError):
        apply_operator_function(dec, lambda m: m, np.ones(6))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([("circle_1d", (11,)), ("torus_2d", (5, 5)),
                                                 ("interval_neumann_1d", (12,))]))
def test_parseval(seed, dom_args):
    dec = build_laplacian(DiscreteDomain(*dom_args))
    u = dec.synthesize(_field(dec.n_modes, seed))
    norm = np.sum(dec.weights * np.abs(u) ** 2)
    np.testing.assert_allclose(np.sum(np.abs(dec.coefficients(u)) ** 2), norm, rtol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_functional_calculus_composes(seed):
    dec = build_laplacian(DiscreteDomain("circle_1d", (13,)))
    u = dec.synthesize(_field(13, seed))
    f = lambda m: np.cos(np.sqrt(m))
    g = lambda m: np.exp(-0.3 * m)
    lhs = apply_operator_function(dec, lambda m: f(m) * g(m), u)
    rhs = apply_operator_function(dec, f, apply_operator_function(dec, g, u))
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-2, 2), st.floats(-2, 2))
def test_functional_calculus_linear(seed, a, b):
    dec = build_laplacian(DiscreteDomain("circle_1d", (7,)))
    u, v = dec.synthesize(_field(7, seed)), dec.synthesize(_field(7, seed + 1))
    f = lambda m: 1 / (1 + m)
    lhs = apply_operator_function(dec, f, a * u + b * v)
    rhs = a * apply_operator_function(dec, f, u) + b * apply_operator_function(dec, f, v)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
