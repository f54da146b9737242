import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnslab.forms import FormField, contract, dbar_rho_form
from dnslab.geometry import (GeometryError, blowup_family, cell_fraction, density_corrector,
                             ellipsoid_closest_point, grid_from_config, load_domain, make_ball,
                             make_ellipsoid, normal_power_trace, normal_trace, one_sided_weights,
                             read_node_dump, smooth_cutoff, tangential_decompose, unit_trace_form)


@pytest.fixture(scope="module")
def disk():
    return make_ball(1, 1.0, 1 / 16)


@pytest.fixture(scope="module")
def fine_disk():
    return make_ball(1, 1.0, 0.05)


def test_ball_basics(disk):
    c = disk.half_count
    assert disk.rho[c, c] == -1.0
    norms = np.sqrt((disk.nu**2).sum(axis=0))[disk.nu_valid]
    assert np.allclose(norms, 1.0)
    assert disk.band_excluded == 0


def test_perimeter(fine_disk):
    assert abs(fine_disk.surface_area() - 2 * np.pi) / (2 * np.pi) < 0.02


def test_volume(disk):
    assert abs(disk.volume() - np.pi) < 0.01


def test_ball_rejects_coarse():
    with pytest.raises(GeometryError):
        make_ball(1, 1.0, 0.3)
    with pytest.raises(GeometryError):
        make_ball(1, -1.0, 0.1)


def test_round_ellipsoid_equals_ball():
    b = make_ball(1, 1.0, 1 / 8)
    e = make_ellipsoid(1, [1.0, 1.0], 1 / 8)
    band = b.band
    assert np.abs(e.rho - b.rho)[band].max() < 1e-9
    assert np.abs(e.nu - b.nu)[:, band].max() < 1e-9


def test_ellipsoid_closest_point_on_surface():
    rng = np.random.default_rng(1)
    a = [1.5, 1.0, 0.8, 1.2]
    X = rng.uniform(-2, 2, (4, 200))
    y, _, conv = ellipsoid_closest_point(X, a)
    assert conv.all()
    assert np.allclose(((y / np.reshape(a, (4, 1))) ** 2).sum(axis=0), 1.0, atol=1e-10)


def test_ellipsoid_normal_matches_fd_gradient():
    g = make_ellipsoid(1, [1.3, 0.9], 1 / 16)
    pts = g.coords[:, g.band]
    fd = g.fd_gradient(pts)
    assert np.abs(fd - g.nu[:, g.band]).max() < 1e-6


def test_normal_derivative_of_nu_is_small():
    errs = []
    for h in (1 / 8, 1 / 16):
        g = make_ellipsoid(1, [1.3, 0.9], h)
        Nnu = np.stack([g.normal_derivative(g.nu[a]) for a in range(g.dim)])
        m = g.erode(g.band)
        errs.append(np.abs(Nnu[:, m]).max())
    assert errs[1] < errs[0]


def test_tangential_plus_normal_is_derivative(disk):
    f = disk.coords[0] ** 2 * np.exp(disk.coords[1])
    for j in range(disk.dim):
        Y, NN = tangential_decompose(disk, j)
        assert np.allclose(Y(f) + NN(f), disk.diff(f, j))
    with pytest.raises(GeometryError):
        tangential_decompose(disk, 5)


def test_tangential_annihilates_radial(disk):
    # f = r^2 has no tangential derivative; nu_j N r^2 = 2 x_j
    f = (disk.coords**2).sum(axis=0)
    m = disk.erode(disk.band) & (np.abs(disk.rho) < 0.1)
    for j in range(disk.dim):
        Y, _ = tangential_decompose(disk, j)
        assert np.abs(Y(f))[m].max() < 1e-12


@pytest.mark.parametrize("s", range(5))
def test_one_sided_weights_exact_on_polynomials(s):
    w = one_sided_weights(s, 0.1)
    t = 0.1 * np.arange(w.size)
    for k in range(w.size):
        from math import factorial
        exact = factorial(k) if k == s else 0.0
        assert abs(np.dot(w, t**k) - exact) < 1e-6 * max(1, 10.0**s)


def test_trace_of_vanishing_form(disk):
    psi = FormField.from_functions(disk, 1, lambda X: (X**2).sum(axis=0) - 1.0)
    tr = normal_power_trace(psi, 0)
    assert tr[()].sup() < 5 * disk.h**2


def test_trace_first_normal_derivative(disk):
    psi = FormField.from_functions(disk, 1, lambda X: 1.0 - (X**2).sum(axis=0))
    tr = normal_power_trace(psi, 1)[()]
    assert np.allclose(np.abs(tr.values), 1.0, atol=5 * disk.h**2)


def test_trace_needs_depth():
    g = make_ball(1, 1.0, 1 / 8)
    vals = np.ones(g.shape)
    with pytest.raises(GeometryError):
        normal_trace(vals, g.level_mask(1), 2, g)
    with pytest.raises(GeometryError):
        normal_power_trace(FormField.zeros(g, 0), 0)


@pytest.mark.parametrize("s, step, tol", [(0, 1, 1e-12), (1, 1, 0.02), (2, 4, 0.05)])
def test_unit_trace_form(disk, s, step, tol):
    # interpolation noise is O(h^2 / step^s), so higher s needs a longer ray step
    tr = normal_power_trace(unit_trace_form(disk, s), s, ray_step=step * disk.h)[()]
    assert np.abs(tr.values - 1).max() < tol


def test_smooth_cutoff():
    r = np.linspace(0, 1.5, 31)
    c = smooth_cutoff(r)
    assert np.all(c[r <= 0.5] == 1) and np.all(c[r >= 1] == 0)
    assert np.all(np.diff(c) <= 0)


def test_blowup_family(disk):
    phi = blowup_family(disk, 1, 0.1, (1, 0), 0.5)
    assert phi.q == 0 and phi.sup() > 0
    zero = blowup_family(disk, 1, 0.1, (1, 0), 0.5, cutoff=lambda r: 0 * r)
    assert zero.sup() == 0
    with pytest.raises(GeometryError):
        blowup_family(disk, 0, 0.1, (1, 0), 0.5)
    with pytest.raises(GeometryError):
        blowup_family(disk, 1, 0.6, (1, 0), 0.5)
    with pytest.raises(GeometryError):
        blowup_family(disk, 1, 0.1, (5, 5), 0.5)


def test_corrector_restores_zero_trace():
    g = make_ball(1, 1.0, 1 / 32, band_width_cells=10)
    phi = FormField.from_functions(g, 1, lambda X: np.exp(X[0]) * (1 + 1j * X[1]))
    psi = density_corrector(phi, 1, 0.25)
    before = normal_power_trace(phi, 1)[()].sup()
    after = normal_power_trace(phi - psi, 1)[()].sup()
    assert after < 0.1 * before


def test_corrector_is_supported_in_collar(disk):
    phi = FormField.from_functions(disk, 1, lambda X: 1.0 + 0 * X[0])
    psi = density_corrector(phi, 1, 0.2)
    assert np.abs(psi[(1,)])[np.abs(disk.rho) >= 0.2].max() == 0


def test_corrector_errors(disk):
    phi = FormField.from_functions(disk, 1, lambda X: 1.0 + 0 * X[0])
    with pytest.raises(GeometryError):
        density_corrector(phi, 1, 10.0)
    with pytest.raises(GeometryError):
        density_corrector(FormField.zeros(disk, 0), 1, 0.1)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(0.0, 2 * np.pi), st.floats(0.0, np.pi))
def test_cell_fraction_complement(r, t1, t2):
    nu = np.array([[np.cos(t1) * np.sin(t2)], [np.sin(t1) * np.sin(t2)], [np.cos(t2)]])
    h = 1.0
    a = cell_fraction(np.array([r]), nu, h)
    b = cell_fraction(np.array([-r]), -nu, h)
    assert abs(a[0] + b[0] - 1) < 1e-9


def test_cell_fraction_axis_aligned():
    nu = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    f = cell_fraction(np.array([0.0, 0.25, -0.25]), nu, 1.0)
    assert np.allclose(f, [0.5, 0.25, 0.75])


def test_node_dump_roundtrip(tmp_path, disk):
    path = tmp_path / "nodes.bin"
    disk.export_nodes(path)
    d = read_node_dump(path)
    assert d["n"] == 1 and d["dim"] == 2 and d["h"] == disk.h
    assert tuple(d["shape"]) == disk.shape
    assert np.array_equal(d["rho"], disk.rho.ravel())
    assert np.array_equal(d["mask"], disk.level_mask(0).ravel())
    assert np.array_equal(d["coords"][:, 0], disk.coords[0].ravel())
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope" * 10)
    with pytest.raises(GeometryError):
        read_node_dump(bad)


def test_config_roundtrip(tmp_path, disk):
    path = tmp_path / "domain.json"
    path.write_text(json.dumps(disk.to_config()))
    g = load_domain(path)
    assert g.shape == disk.shape and np.array_equal(g.rho, disk.rho)
    with pytest.raises(GeometryError):
        grid_from_config({"shape": "torus", "n": 1, "h": 0.1})


def test_window_grid():
    g = make_ball(1, 1.0, 1 / 64, window=((1.0, 0.0), 0.25))
    assert abs(g.center[0] - 1.0) < 1e-15
    assert g.interior.any() and (~g.interior).any()
    assert grid_from_config(g.to_config()).shape == g.shape


def test_contraction_with_dbar_rho_is_quarter(disk):
    om = dbar_rho_form(disk)
    c = contract(om, om)
    assert np.allclose(c[()][disk.nu_valid], 0.25)
