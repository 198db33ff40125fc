import numpy as np
import pytest

from blochlab import (CoherentParams, KGrid, PeriodicField, bloch_transform,
                      coherent_state, fiber_average, inverse_bloch)
from blochlab.bloch import (coeffs_to_values, default_window, g_vectors, grid_weight,
                            position_grid, translate_window, values_to_coeffs)
from blochlab.errors import AccuracyError

from conftest import coherent_overlap


def random_field(rng, lat, m):
    shape = (2 * m + 1,) * lat.dimension
    return PeriodicField(lat, m, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def test_kgrid_points_inside_cell(lat1, lat2):
    for lat, nk in ((lat1, 8), (lat1, 9), (lat2, 4)):
        kg = KGrid.monkhorst_pack(lat, nk)
        frac = kg.points @ np.linalg.inv(lat.reciprocal)
        assert np.all(np.abs(frac) < 0.5)          # shifted off the boundary
        assert kg.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(kg.weights, kg.weights[0])


def test_fiber_average_basics():
    assert fiber_average(np.array([3.7, 3.7, 3.7])) == pytest.approx(3.7)
    assert fiber_average(np.array([0.0, 1.0])) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        fiber_average(np.zeros((0,)))


def test_fiber_average_linear_in_k_convergence(lat1):
    # mean over the shifted uniform grid reproduces the cell average of a
    # smooth non-periodic function at second order
    errs = []
    for nk in (8, 16, 32):
        kg = KGrid.monkhorst_pack(lat1, nk)
        vals = np.cos(kg.points[:, 0] / 2.0)
        exact = 2 * np.sin(np.pi / 2) / np.pi
        errs.append(abs(fiber_average(vals) - exact))
    assert errs[2] < errs[1] < errs[0]
    assert errs[1] / errs[2] > 3.0                  # O(nk^-2)


def test_coeff_value_roundtrip(rng, lat1, lat2):
    for lat, m in ((lat1, 17), (lat2, 5)):
        f = random_field(rng, lat, m)
        v = f.values()
        back = values_to_coeffs(v, lat, m)
        np.testing.assert_allclose(back, f.coeffs, atol=1e-12)
        # padded evaluation agrees with direct plane-wave summation
        n = 2 * m + 3
        pts = position_grid(lat, n)
        direct = (np.exp(1j * pts @ g_vectors(lat, m).T) @ f.coeffs.reshape(-1)
                  / np.sqrt(lat.cell_volume))
        np.testing.assert_allclose(coeffs_to_values(f.coeffs, lat, n).reshape(-1),
                                   direct, atol=1e-11)


def test_parseval_on_grid(rng, lat1):
    f = random_field(rng, lat1, 12)
    n = 2 * 12 + 1
    quad = float(np.sum(np.abs(f.values()) ** 2)) * grid_weight(lat1, n)
    assert quad == pytest.approx(f.norm_sq, rel=1e-12)


def test_bloch_single_cell_support(lat1):
    # packet supported in one cell: fiber k is u(x) e^{-ikx} on the cell
    m, nk = 24, 6
    kg = KGrid.monkhorst_pack(lat1, nk)

    def u(pts):
        x = pts[..., 0]
        return np.where(np.abs(x) < 0.5, np.cos(np.pi * x) ** 2, 0.0)

    state = bloch_transform(u, lat1, kg, m, l_cut=2)
    pts = position_grid(lat1, 2 * m + 1)
    for i in range(nk):
        expected = u(pts) * np.exp(-1j * pts[:, 0] * kg.points[i, 0])
        got = coeffs_to_values(state.coeffs[i], lat1, 2 * m + 1)
        np.testing.assert_allclose(got, expected, atol=1e-10)


def test_bloch_isometry_random_packets(rng, lat1):
    hbar = 0.05
    m, nk = 48, 16
    kg = KGrid.monkhorst_pack(lat1, nk)
    l_cut = default_window(lat1, hbar, 0.5)
    for _ in range(10):
        qs = rng.uniform(-0.4, 0.4, (3, 1))
        ps = rng.uniform(-1.0, 1.0, (3, 1))
        amps = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        packets = [CoherentParams(qs[i], ps[i], hbar) for i in range(3)]

        def u(pts):
            return sum(a * coherent_state(c, pts) for a, c in zip(amps, packets))

        state = bloch_transform(u, lat1, kg, m, l_cut)
        avg = fiber_average(state.fiber_norms_sq())
        norm = sum((np.conj(amps[i]) * amps[j]
                    * coherent_overlap(qs[i], ps[i], qs[j], ps[j], hbar)).real
                   for i in range(3) for j in range(3))
        assert abs(avg - norm) <= 1e-10 * norm


def test_bloch_tail_error(lat1):
    cp = CoherentParams([0.0], [0.0], 0.5)
    kg = KGrid.monkhorst_pack(lat1, 4)
    with pytest.raises(AccuracyError):
        bloch_transform(lambda pts: coherent_state(cp, pts), lat1, kg, 16, l_cut=1)


def test_inverse_bloch_roundtrip_gaussian(lat1):
    # oracle: direct evaluation of the inversion average on the window grid
    hbar = 0.05
    m, nk, l_cut = 64, 32, 3
    cp = CoherentParams([0.0], [1.0], hbar)
    kg = KGrid.monkhorst_pack(lat1, nk)
    state = bloch_transform(lambda p: coherent_state(cp, p), lat1, kg, m, l_cut)
    back = inverse_bloch(state, l_cut)
    shifts = lat1.lattice_vector(translate_window(l_cut, 1))
    pts = position_grid(lat1, 2 * m + 1)[None, :, :] + shifts[:, None, :]
    ref = coherent_state(cp, pts)
    assert np.max(np.abs(back.reshape(ref.shape) - ref)) < 1e-8


def test_inverse_bloch_single_fiber(lat1, rng):
    # one k-point at the grid center: inversion must return the periodic field
    kg = KGrid.monkhorst_pack(lat1, 1)
    m = 8
    f = random_field(rng, lat1, m)
    state_coeffs = f.coeffs[None, ...]
    from blochlab.bloch import FiberedState
    st = FiberedState(kg, lat1, m, state_coeffs)
    vals = inverse_bloch(st, l_cut=0)[0]
    k = kg.points[0]
    pts = position_grid(lat1, 2 * m + 1)
    expected = coeffs_to_values(f.coeffs, lat1, 2 * m + 1) * np.exp(1j * pts[:, 0] * k[0])
    np.testing.assert_allclose(vals, expected, atol=1e-12)


def test_quasi_periodicity_contract(lat1):
    # fibers at k and k + K agree after the unit-cell phase twist
    hbar, m, l_cut = 0.05, 48, 3
    cp = CoherentParams([0.2], [0.4], hbar)
    k0 = np.array([[0.7]])
    big_k = lat1.reciprocal[0]
    kg1 = KGrid(k0, lat1)
    state1 = bloch_transform(lambda p: coherent_state(cp, p), lat1, kg1, m, l_cut)
    # k + K lies outside the cell; evaluate the transform there directly
    x = position_grid(lat1, 2 * m + 1)
    shifts = lat1.lattice_vector(translate_window(l_cut, 1))
    pts = x[None, :, :] + shifts[:, None, :]
    uvals = coherent_state(cp, pts)
    k2 = k0[0] + big_k
    fiber2 = np.einsum("w,wg->g", np.exp(-1j * shifts @ k2), uvals) \
        * np.exp(-1j * x @ k2)
    fiber1_vals = coeffs_to_values(state1.coeffs[0], lat1, 2 * m + 1)
    twist = np.exp(-1j * x @ big_k)
    np.testing.assert_allclose(fiber2, twist * fiber1_vals, atol=1e-10)


def test_periodic_multiplication_commutes(rng, lat1):
    # multiplying by a lattice-periodic function before or after the transform
    hbar, m, nk, l_cut = 0.05, 48, 8, 3
    cp = CoherentParams([0.0], [0.5], hbar)
    kg = KGrid.monkhorst_pack(lat1, nk)

    def w(pts):
        return 1.0 + 0.3 * np.cos(2 * np.pi * pts[..., 0])

    s_after = bloch_transform(lambda p: w(p) * coherent_state(cp, p), lat1, kg, m, l_cut)
    s_before = bloch_transform(lambda p: coherent_state(cp, p), lat1, kg, m, l_cut)
    pts = position_grid(lat1, 2 * m + 1)
    for i in range(nk):
        lhs = coeffs_to_values(s_after.coeffs[i], lat1, 2 * m + 1)
        rhs = w(pts) * coeffs_to_values(s_before.coeffs[i], lat1, 2 * m + 1)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_fiber_composition_identity(rng, lat1):
    # fiberwise products compose associatively in the discrete representation
    m, nk = 6, 4
    kg = KGrid.monkhorst_pack(lat1, nk)
    n_g = 2 * m + 1
    a = rng.standard_normal((nk, n_g, n_g)) + 1j * rng.standard_normal((nk, n_g, n_g))
    b = rng.standard_normal((nk, n_g, n_g)) + 1j * rng.standard_normal((nk, n_g, n_g))
    u = rng.standard_normal((nk, n_g)) + 1j * rng.standard_normal((nk, n_g))
    for i in range(nk):
        left = (a[i] @ b[i]) @ u[i]
        right = a[i] @ (b[i] @ u[i])
        np.testing.assert_allclose(left, right, atol=1e-12 * np.abs(left).max())


def test_fibered_state_csv_dump(tmp_path, rng, lat1):
    kg = KGrid.monkhorst_pack(lat1, 2)
    from blochlab.bloch import FiberedState
    coeffs = rng.standard_normal((2, 5)) + 1j * rng.standard_normal((2, 5))
    st = FiberedState(kg, lat1, 2, coeffs)
    path = tmp_path / "state.csv"
    st.dump_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k_index,g_index,re,im"
    assert len(lines) == 1 + 2 * 5
    k, g, re, im = lines[3].split(",")
    assert complex(float(re), float(im)) == pytest.approx(coeffs[int(k), int(g)])
