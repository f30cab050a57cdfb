import numpy as np
import pytest
from hypothesis import given, strategies as st

from stablab.errors import ConfigError, ResonanceError
from stablab.forward import (HelmholtzSolver, Potential, get_solver, normal_derivative,
                             regularity_ratio, solve_dirichlet, solve_source, spectral_gap)
from stablab.geometry import make_grid
from stablab.norms import grid_sobolev_norm
from stablab.potentials import bump


def discrete_eigenvalue(h, modes=(1, 1, 1)):
    return sum(4 / h ** 2 * np.sin(m * np.pi * h / 2) ** 2 for m in modes)


def trace(g, field):
    return np.asarray(field).ravel()[g.boundary_ids]


def test_harmonic_linear_reproduced():
    g = make_grid(12)
    k = 1.3
    q = Potential.constant(g, k * k)
    X, _, _ = g.mesh()
    u = solve_dirichlet(q, k, trace(g, X), override=True)
    assert np.max(np.abs(u - X)) < 1e-10


@pytest.mark.parametrize("n", [12])
def test_zero_data_gives_zero(n):
    g = make_grid(n)
    q = Potential.from_function(g, bump(g.center, 0.3, 2.0))
    assert np.all(solve_dirichlet(q, 1.7, np.zeros(g.boundary_ids.size)) == 0)
    assert np.all(solve_source(q, 1.7, np.zeros(g.shape)) == 0)


def test_plane_wave_second_order():
    d = np.array([1.0, 2.0, 2.0]) / 3.0
    k = 4.0
    errs = []
    for n in (16, 32):
        g = make_grid(n)
        X, Y, Z = g.mesh()
        exact = np.exp(1j * k * (d[0] * X + d[1] * Y + d[2] * Z))
        u = solve_dirichlet(Potential.zeros(g), k, trace(g, exact))
        errs.append(np.max(np.abs(u - exact)))
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_eigenfunction_source():
    g = make_grid(24)
    X, Y, Z = g.mesh()
    src = np.sin(np.pi * X) * np.sin(np.pi * Y) * np.sin(np.pi * Z)
    u = solve_source(Potential.zeros(g), 1.0, src)
    inner = g.interior_ids
    lam_h = discrete_eigenvalue(g.spacing)
    # discrete eigenfunction: exact up to round-off
    assert np.allclose(u.ravel()[inner], src.ravel()[inner] / (lam_h - 1), rtol=1e-9, atol=1e-14)
    # continuum relation up to the O(h^2) eigenvalue shift
    assert np.max(np.abs(u - src / (3 * np.pi ** 2 - 1))) < 2e-2 * np.max(np.abs(src)) / (3 * np.pi ** 2 - 1)


def test_resolvent_ratio_bounded_by_fit():
    g = make_grid(20)
    rng = np.random.default_rng(3)
    src = np.zeros(g.shape)
    src.ravel()[g.interior_ids] = rng.standard_normal(g.interior_ids.size)
    q = Potential.from_function(g, bump(g.center, 0.3, 1.0))
    ks = [1.0, 2.0, 4.0, 8.0]
    ratios = []
    for k in ks:
        u = solve_source(q, k, src)
        ratios.append(np.linalg.norm(u) / np.linalg.norm(src))
    fit = max(r / k ** 3 for r, k in zip(ratios, ks))
    assert all(r <= fit * k ** 3 * (1 + 1e-12) for r, k in zip(ratios, ks))
    assert all(np.isfinite(ratios))


def test_gap_near_lowest_eigenvalue():
    g = make_grid(24)
    rep = spectral_gap(Potential.zeros(g), 5.0)
    assert rep.gap == pytest.approx(4.61, abs=0.1)
    # discrete oracle for the same grid
    assert rep.gap == pytest.approx(discrete_eigenvalue(g.spacing) - 25.0, rel=1e-8)
    assert rep.passed


def test_on_resonance_rejected():
    g = make_grid(16)
    k = np.sqrt(discrete_eigenvalue(g.spacing))
    rep = spectral_gap(Potential.zeros(g), k)
    assert rep.gap < 1e-6 and not rep.passed
    with pytest.raises(ResonanceError):
        HelmholtzSolver(Potential.zeros(g), k).solve_source(np.ones(g.shape))


@given(st.floats(0.5, 4.0))
def test_constant_shift_moves_spectrum(c0):
    g = make_grid(10)
    k = 3.0
    shifted = spectral_gap(Potential.constant(g, c0), k).gap
    plain = spectral_gap(Potential.zeros(g), np.sqrt(k * k - c0)).gap
    assert shifted == pytest.approx(plain, rel=1e-8, abs=1e-9)


def test_interior_operator_symmetric():
    g = make_grid(10)
    q = Potential.from_function(g, bump(g.center, 0.3, 1.5))
    s = HelmholtzSolver(q, 2.0)
    rng = np.random.default_rng(0)
    u, v = rng.standard_normal((2, g.interior_ids.size))
    assert u @ (s.A_II @ v) == pytest.approx(v @ (s.A_II @ u), rel=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_dirichlet_solve_linear(alpha, beta):
    g = make_grid(8)
    q = Potential.from_function(g, bump(g.center, 0.3, 1.0))
    rng = np.random.default_rng(1)
    f1, f2 = rng.standard_normal((2, g.boundary_ids.size))
    lhs = solve_dirichlet(q, 1.2, alpha * f1 + beta * f2)
    rhs = alpha * solve_dirichlet(q, 1.2, f1) + beta * solve_dirichlet(q, 1.2, f2)
    assert np.allclose(lhs, rhs, atol=1e-10 * (1 + abs(alpha) + abs(beta)))


def test_discrete_green_identity():
    g = make_grid(10)
    q = Potential.from_function(g, bump(g.center, 0.3, 1.0))
    s = get_solver(q, 1.5)
    rng = np.random.default_rng(2)
    f1, f2 = rng.standard_normal((2, g.boundary_ids.size))
    u1, u2 = s.solve_dirichlet(f1), s.solve_dirichlet(f2)
    w = g.surface_weights
    assert np.sum(w * f1 * s.flux(u2)) == pytest.approx(np.sum(w * f2 * s.flux(u1)), rel=1e-10)


def test_constant_regularity_ratio():
    g = make_grid(12)
    k = 2.0
    l2_big = 1.25 ** 1.5
    r = regularity_ratio(k, np.ones(g.shape), g, l2_big)
    assert r == pytest.approx(1.0 / ((1 + k) * l2_big), rel=1e-12)


def test_plane_wave_regularity_ratio():
    g = make_grid(32)
    d = np.array([0.0, 0.6, 0.8])
    vals = []
    for k in (1.0, 2.0, 4.0):
        X, Y, Z = g.mesh()
        u = np.exp(1j * k * (d[1] * Y + d[2] * Z))
        grad = np.stack([0 * u, 1j * k * d[1] * u, 1j * k * d[2] * u])
        r = regularity_ratio(k, u, g, 1.25 ** 1.5, gradient=grad)
        expected = np.sqrt(1 + k * k) / ((1 + k) * 1.25 ** 1.5)
        assert r == pytest.approx(expected, rel=1e-12)
        vals.append(regularity_ratio(k, u, g, 1.25 ** 1.5))
    assert vals[-1] <= 2 * vals[0]


def test_normal_derivative_of_quadratic():
    g = make_grid(9)
    X, Y, Z = g.mesh()
    u = X ** 2 + 2 * Y - Z
    dn = normal_derivative(g, u)
    pos = g.boundary_position
    ids = np.arange(g.size).reshape(g.shape)
    # face-interior nodes only: edges and corners average several faces
    assert np.allclose(dn[pos[ids[0, 3:6, 3:6].ravel()]], 0.0, atol=1e-12)
    assert np.allclose(dn[pos[ids[-1, 3:6, 3:6].ravel()]], 2.0, atol=1e-12)
    assert np.allclose(dn[pos[ids[3:6, 0, 3:6].ravel()]], -2.0, atol=1e-12)
    assert np.allclose(dn[pos[ids[3:6, 3:6, -1].ravel()]], -1.0, atol=1e-12)


def test_flux_is_second_order_normal_derivative():
    d = np.array([0.6, 0.0, 0.8])
    k = 2.0
    errs = []
    for n in (16, 32):
        g = make_grid(n)
        X, Y, Z = g.mesh()
        u = np.exp(1j * k * (d[0] * X + d[2] * Z))
        s = get_solver(Potential.zeros(g), k)
        ids = np.arange(g.size).reshape(g.shape)[-1, 2:-2, 2:-2].ravel()
        pos = g.boundary_position[ids]
        exact = 1j * k * d[0] * u.ravel()[ids]
        errs.append(np.max(np.abs(s.flux(u.ravel())[pos] - exact)))
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_pollution_limit():
    g = make_grid(8)
    with pytest.raises(ConfigError):
        HelmholtzSolver(Potential.zeros(g), 5.0)
    HelmholtzSolver(Potential.zeros(g), 5.0, override=True)


def test_grid_sobolev_norms():
    g = make_grid(32)
    X, _, _ = g.mesh()
    assert grid_sobolev_norm(np.ones(g.shape), g, 0) == pytest.approx(1.0, rel=1e-12)
    h1 = grid_sobolev_norm(np.sin(np.pi * X), g, 1)
    assert h1 ** 2 == pytest.approx(0.5 + np.pi ** 2 / 2, rel=1e-2)
