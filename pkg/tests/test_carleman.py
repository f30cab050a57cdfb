import numpy as np
import pytest
from hypothesis import given, strategies as st

from stablab.carleman import (build_weight, carleman_ratio, conjugated_operator, default_h_sweep,
                              family_minimum, gamma_growth, random_test_functions, ucp_check,
                              ucp_solution, verify_weight)
from stablab.errors import ConfigError, GeometryError
from stablab.forward import Potential
from stablab.geometry import FACES, build_neighborhoods, build_patch, make_grid
from stablab.potentials import bump
from stablab.recon import laplacian_apply


def sine_product(g):
    X, Y, Z = g.mesh()
    return np.sin(np.pi * X) * np.sin(np.pi * Y) * np.sin(np.pi * Z)


def one_sided_normal(field, axis, end, h):
    v = np.moveaxis(field, axis, 0)
    if end == 0:
        return (3 * v[0] - 4 * v[1] + v[2]) / (2 * h)
    return (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)


@pytest.mark.parametrize("spec", [{"face": "z1"},
                                  {"face": "x0", "rect": [[0.2, 0.8], [0.3, 0.9]]}])
def test_weight_invariants_nodewise(spec):
    g = make_grid(20)
    gn = build_patch(g, spec)
    w = build_weight(g, gn)
    diag = verify_weight(w)
    assert w.psi.min() >= -1e-12 and w.psi.max() <= 1 + 1e-12
    in_gn = np.zeros(g.size, dtype=bool)
    in_gn[gn.node_ids] = True
    in_gn = in_gn.reshape(g.shape)
    worst = -np.inf
    for axis, end in FACES.values():
        idx = 0 if end == 0 else g.n_axis - 1
        off = ~np.take(in_gn, idx, axis=axis)
        if not off.any():
            continue
        dn = one_sided_normal(w.psi, axis, end, g.spacing)[off]
        worst = max(worst, dn.max())
    assert worst <= 0
    assert diag["max_dnu_off_gn_discrete"] == pytest.approx(worst, abs=1e-12)


def test_weight_needs_single_face():
    g = make_grid(12)
    with pytest.raises(GeometryError):
        build_weight(g, build_patch(g, "full"))
    with pytest.raises(GeometryError):
        build_weight(g, build_patch(g, {"face": "z1", "rect": [[0.5, 0.52], [0.5, 0.52]]}))


@given(st.floats(0.2, 3.0))
def test_gamma_doubling_squares_weight(gamma):
    g = make_grid(10)
    w = build_weight(g, build_patch(g, {"face": "y1"}), gamma)
    assert np.allclose(w.with_gamma(2 * gamma).phi, w.phi ** 2, rtol=1e-13)


def test_conjugated_operator_matches_direct_conjugation():
    g = make_grid(16)
    w = build_weight(g, build_patch(g, {"face": "z1"}), 1.0)
    v = random_test_functions(g, 1, seed=4)[0]
    h, E = 0.5, 0.3
    phi = w.phi
    direct = np.exp(phi / h) * (h * h * laplacian_apply(g, np.exp(-phi / h) * v) - E * np.exp(-phi / h) * v)
    core = (slice(1, -1),) * 3
    assert np.allclose(conjugated_operator(w, v, h, E)[core], direct[core], rtol=1e-9, atol=1e-9)


def test_sine_product_lhs_matches_analytic_quadrature():
    g = make_grid(32)
    w = build_weight(g, build_patch(g, {"face": "x1"}), 1.0)
    v = sine_product(g)
    h = 0.1
    chk = carleman_ratio(w, v, h, 0.0)
    assert chk.lhs > 0 and chk.rhs > 0 and np.isfinite(chk.ratio)
    X, Y, Z = g.mesh()
    s, c = np.sin(np.pi * np.stack([X, Y, Z])), np.cos(np.pi * np.stack([X, Y, Z]))
    grad2 = np.pi ** 2 * ((c[0] * s[1] * s[2]) ** 2 + (s[0] * c[1] * s[2]) ** 2 + (s[0] * s[1] * c[2]) ** 2)
    m = g.volume_weights
    oracle = h * (np.sum(m * w.phi ** 3 * v ** 2) + np.sum(m * w.phi * h * h * grad2))
    assert chk.lhs == pytest.approx(oracle, rel=1e-2)


def test_zero_function_degenerate():
    g = make_grid(10)
    w = build_weight(g, build_patch(g, {"face": "z1"}))
    for form in ("lemma31", "lemma32"):
        chk = carleman_ratio(w, np.zeros(g.shape), 0.2, 0.0, form)
        assert chk.degenerate and chk.lhs == 0 and chk.rhs == 0


@given(st.floats(0.01, 100.0), st.sampled_from(["lemma31", "lemma32"]))
def test_homogeneity(c, form):
    g = make_grid(10)
    w = build_weight(g, build_patch(g, {"face": "z1"}))
    v = random_test_functions(g, 1, seed=2)[0]
    a = carleman_ratio(w, v, 0.25, 0.5, form)
    b = carleman_ratio(w, c * v, 0.25, 0.5, form)
    assert b.lhs == pytest.approx(c * c * a.lhs, rel=1e-12)
    assert b.rhs == pytest.approx(c * c * a.rhs, rel=1e-12)
    assert b.ratio == pytest.approx(a.ratio, rel=1e-12)


def test_second_form_shift_is_exact_rescaling():
    g = make_grid(12)
    w = build_weight(g, build_patch(g, {"face": "z1"}))
    v = random_test_functions(g, 1, seed=3)[0]
    h = 0.5
    chk = carleman_ratio(w, v, h, 0.0, "lemma32")
    grads = np.gradient(v, g.spacing, edge_order=2)
    direct = h * np.sum(g.volume_weights * np.exp(2 * w.phi / h) * (v ** 2 + h * h * sum(d ** 2 for d in grads)))
    assert chk.lhs * np.exp(chk.log_shift) == pytest.approx(direct, rel=1e-12)


def test_rejections():
    g = make_grid(10)
    w = build_weight(g, build_patch(g, {"face": "z1"}))
    with pytest.raises(ConfigError):
        carleman_ratio(w, np.ones(g.shape), 0.2)
    v = random_test_functions(g, 1)[0]
    for h, E in ((0.0, 0.0), (1.5, 0.0), (0.2, 1.5)):
        with pytest.raises(ConfigError):
            carleman_ratio(w, v, h, E)


def test_family_and_gamma_growth():
    g = make_grid(16)
    w = build_weight(g, build_patch(g, {"face": "z1"}))
    funcs = random_test_functions(g, 4, seed=0)
    rows = family_minimum(w, funcs, [0.4, 0.2], 0.0)
    assert len(rows) == 2 and all(r["min_ratio"] > 0 for r in rows)
    gg = gamma_growth(w, funcs[0], 0.2, 2.0)
    assert gg["lhs_ratio"] >= 8 and gg["leading_order_ok"]


@pytest.fixture(scope="module")
def ucp_setup():
    g = make_grid(20)
    q = Potential.from_function(g, bump(g.center, 0.25, 1.0))
    chain = build_neighborhoods(g, (5, 4, 3, 2))
    gn = build_patch(g, {"face": "z1"})
    return g, q, chain, gn


def test_ucp_dominated_and_homogeneous(ucp_setup):
    g, q, chain, gn = ucp_setup
    k = 2.0
    hs = default_h_sweep(k)
    u = ucp_solution(q, k, chain)
    res = ucp_check(q, k, chain, gn, u, hs)
    assert len(res.table) == 6 and res.all_dominated()
    res2 = ucp_check(q, k, chain, gn, 2 * u, hs)
    assert res2.norms["h1_annulus"] == pytest.approx(2 * res.norms["h1_annulus"], rel=1e-12)
    assert res2.norms["h1"] == pytest.approx(2 * res.norms["h1"], rel=1e-12)
    prod, prod2 = (np.sqrt(r.norms["h2"] * r.norms["dn_minus_half"]) for r in (res, res2))
    assert prod2 == pytest.approx(2 * prod, rel=1e-12)
    assert res2.alpha1 == pytest.approx(res.alpha1, rel=1e-9, abs=1e-12)
    assert res2.alpha2 == pytest.approx(res.alpha2, rel=1e-9, abs=1e-12)


def test_ucp_zero_and_preconditions(ucp_setup):
    g, q, chain, gn = ucp_setup
    res = ucp_check(q, 2.0, chain, gn, np.zeros(g.shape), [0.2, 0.1])
    assert res.degenerate and all(r["lhs"] == 0 and r["rhs"] == 0 for r in res.table)
    noise = np.zeros(g.shape)
    noise[1:-1, 1:-1, 1:-1] = np.random.default_rng(0).standard_normal((18, 18, 18))
    with pytest.raises(ConfigError):
        ucp_check(q, 2.0, chain, gn, noise, [0.2])
    with pytest.raises(ConfigError):
        ucp_check(q, 2.0, chain, gn, ucp_solution(q, 2.0, chain), [0.3])
