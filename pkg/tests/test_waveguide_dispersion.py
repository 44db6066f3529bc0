import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrlab.waveguide_dispersion import (TabulatedHamiltonian, VelocityProfile, dispersion_table,
                                          effective_hamiltonian_export, group_velocity,
                                          required_depth, square_well_eigenvalues,
                                          sturm_liouville_eigs)

WELL = VelocityProfile.square_well(0.5, 1.0, -1.0)


@pytest.mark.parametrize("xi,per_layer,tol", [(5.0, 1600, 1e-6), (10.0, 3200, 1e-6)])
def test_square_well_matches_transcendental_roots(xi, per_layer, tol):
    res = sturm_liouville_eigs(WELL, 0.0, xi, per_layer=per_layer)
    oracle = square_well_eigenvalues(0.5, 1.0, 1.0, xi)
    assert res.eigenvalues.size == oracle.size
    assert np.max(np.abs(res.eigenvalues - oracle) / oracle) < tol


def test_second_order_convergence():
    oracle = square_well_eigenvalues(0.5, 1.0, 1.0, 5.0)
    err = [np.max(np.abs(sturm_liouville_eigs(WELL, 0.0, 5.0, per_layer=n).eigenvalues - oracle))
           for n in (200, 400, 800)]
    order = np.log2(np.array(err[:-1]) / np.array(err[1:]))
    assert np.all(np.abs(order - 2) < 0.2)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 0.9), st.floats(2.0, 8.0))
def test_eigenvalues_inside_band(N0, xi):
    prof = VelocityProfile.square_well(N0, 1.0, -1.0)
    res = sturm_liouville_eigs(prof, 0.0, xi, per_layer=200, allow_empty=True)
    lam = res.eigenvalues
    assert np.all(lam > N0 * xi ** 2) and np.all(lam < xi ** 2)
    assert np.all(np.diff(lam) > 0)


def test_group_velocity_matches_finite_difference():
    res = sturm_liouville_eigs(WELL, 0.0, 5.0, per_layer=800)
    h = 1e-4
    om = [np.sqrt(sturm_liouville_eigs(WELL, 0.0, 5.0 + s, per_layer=800,
                                       Z_bot=res.grid.Z_bot).eigenvalues) for s in (h, -h)]
    fd = (om[0] - om[1]) / (2 * h)
    np.testing.assert_allclose(group_velocity(WELL, res), fd, rtol=1e-6)


def test_group_velocity_below_slowest_speed():
    res = sturm_liouville_eigs(WELL, 0.0, 10.0, per_layer=400)
    vg = group_velocity(WELL, res)
    assert np.all(vg > 0) and np.all(vg < np.sqrt(0.5))


def test_no_well():
    flat = VelocityProfile.square_well(1.0, 1.0, -1.0)
    with pytest.raises(ValueError, match="no well"):
        sturm_liouville_eigs(flat, 0.0, 3.0)
    assert sturm_liouville_eigs(flat, 0.0, 3.0, allow_empty=True).eigenvalues.size == 0


def test_shallow_truncation_rejected():
    with pytest.raises(ValueError, match="decay margin"):
        sturm_liouville_eigs(WELL, 0.0, 2.0, Z_bot=-1.1, per_layer=200)


def test_required_depth():
    beta = np.sqrt(4.0 - 2.0)
    assert required_depth(WELL, 2.0, 2.0, tol=1e-12) == pytest.approx(np.log(1e12) / (2 * beta))
    with pytest.raises(ValueError):
        required_depth(WELL, 2.0, 4.0)


@pytest.mark.parametrize("bad", [dict(N0=1.0, N_inf=1.0), dict(N0=0.0, N_inf=1.0)])
def test_oracle_rejects_no_well(bad):
    with pytest.raises(ValueError):
        square_well_eigenvalues(bad["N0"], bad["N_inf"], 1.0, 3.0)


def test_json_profile_equals_square_well():
    d = {"N_inf": 1.0, "Z0": -1.0, "stations": [{"x": 0.0, "Z": [-1.0, 0.0], "N": [0.5, 0.5]}]}
    prof = VelocityProfile.from_json(json.dumps(d))
    a = sturm_liouville_eigs(prof, 0.0, 4.0, per_layer=400).eigenvalues
    b = sturm_liouville_eigs(WELL, 0.0, 4.0, per_layer=400).eigenvalues
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_json_profile_interpolates_in_x():
    d = {"N_inf": 1.0, "Z0": -1.0, "stations": [
        {"x": 0.0, "Z": [-1.0, 0.0], "N": [0.4, 0.4]},
        {"x": 2.0, "Z": [-1.0, 0.0], "N": [0.6, 0.6]}]}
    prof = VelocityProfile.from_dict(d)
    assert prof.N0(1.0) == pytest.approx(0.5)
    a = sturm_liouville_eigs(prof, 1.0, 4.0, per_layer=400).eigenvalues
    b = sturm_liouville_eigs(WELL, 0.0, 4.0, per_layer=400).eigenvalues
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_json_profile_rejects_unsorted():
    with pytest.raises(ValueError):
        VelocityProfile.from_dict({"N_inf": 1.0, "Z0": -1.0,
                                   "stations": [{"x": 0.0, "Z": [0.0, -1.0], "N": [0.5, 0.5]}]})


def test_table_births_match_cutoffs():
    # mode j is trapped once xi > j pi / (L sqrt(N_inf/N0 - 1)) = j pi here
    xi = np.linspace(1.0, 8.0, 15)
    tab = dispersion_table(WELL, 0.0, xi, per_layer=100)
    counts = tab.mode_counts()[0]
    expected = 1 + np.floor(xi / np.pi).astype(int)
    assert np.array_equal(counts, expected)
    assert [b["xi"] for b in tab.births] == [3.5, 6.5]
    assert np.all(np.diff(tab.eigenvalues[0, :, 0]) > 0)


def test_table_export_and_holes(tmp_path):
    xi = np.linspace(1.0, 8.0, 15)
    tab = dispersion_table(WELL, 0.0, xi, per_layer=100)
    h = effective_hamiltonian_export(tab, 0)
    np.testing.assert_allclose(h(0.0, xi), np.sqrt(tab.eigenvalues[0, :, 0]), rtol=1e-13)
    back = TabulatedHamiltonian.from_dict(json.loads(json.dumps(h.to_dict())))
    np.testing.assert_allclose(back(0.0, 4.2), h(0.0, 4.2), rtol=1e-14)
    with pytest.raises(ValueError, match="holes"):
        effective_hamiltonian_export(tab, 1)
    with pytest.raises(ValueError):
        effective_hamiltonian_export(tab, 5)
    rows = tab.to_csv(tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "x,xi,branch,lambda,omega,group_velocity"
    assert len(rows) == 1 + int(tab.mode_counts().sum())


def test_table_rejects_bad_grid():
    with pytest.raises(ValueError):
        dispersion_table(WELL, 0.0, [2.0, 1.0])
    with pytest.raises(ValueError):
        dispersion_table(WELL, 0.0, [0.0, 1.0])


def test_tabulated_derivatives():
    xi = np.linspace(0.0, 4.0, 41)
    x = np.array([0.0, 1.0])
    vals = np.stack([xi ** 2, xi ** 2 + 2.0])
    h = TabulatedHamiltonian(x, xi, vals, 0)
    assert h.derivative(0.5, 1.3) == pytest.approx(1.69 + 1.0, rel=1e-12)
    assert h.derivative(0.5, 1.3, dxi=1) == pytest.approx(2.6, rel=1e-10)
    assert h.derivative(0.5, 1.3, dx=1) == pytest.approx(2.0, rel=1e-12)


def test_trapped_modes_decay_below_layer():
    res = sturm_liouville_eigs(WELL, 0.0, 6.0, per_layer=800)
    Z = res.Z
    for j, lam in enumerate(res.eigenvalues):
        beta = np.sqrt(36.0 - lam)
        deep = (Z < -1.2) & (Z > -1.2 - 3.0 / beta)
        rate = -np.polyfit(-Z[deep], np.log(np.abs(res.vectors[deep, j])), 1)[0]
        assert rate >= 0.9 * beta


def test_deeper_truncation_is_stable():
    res = sturm_liouville_eigs(WELL, 0.0, 6.0, per_layer=400)
    deeper = sturm_liouville_eigs(WELL, 0.0, 6.0, per_layer=400,
                                  Z_bot=WELL.Z0 + 1.5 * (res.grid.Z_bot - WELL.Z0))
    np.testing.assert_allclose(deeper.eigenvalues, res.eigenvalues, rtol=1e-8)
