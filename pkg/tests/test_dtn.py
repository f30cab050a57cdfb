import numpy as np
import pytest
from hypothesis import given, strategies as st

from stablab.dtn import (DtNDifference, DtNMatrix, DtNOperator, assemble_partial_dtn, dtn_distance,
                         dtn_distance_operator)
from stablab.errors import ConfigError
from stablab.forward import Potential, get_solver
from stablab.geometry import build_patch, make_grid
from stablab.io import Cache
from stablab.potentials import bump


@pytest.fixture(scope="module")
def setup():
    g = make_grid(10)
    q1 = Potential.from_function(g, bump(g.center, 0.3, 1.0), tag="q1")
    dq = bump(g.center + 0.05, 0.2, 1.0)
    q2 = Potential.from_function(g, lambda x, y, z: bump(g.center, 0.3, 1.0)(x, y, z) + dq(x, y, z),
                                 tag="q2")
    return g, q1, q2, dq


def test_full_map_symmetric_under_pairing(setup):
    g, _, _, _ = setup
    full = build_patch(g, "full")
    A = assemble_partial_dtn(Potential.zeros(g), 0.5, full, full).entries
    WA = g.surface_weights[:, None] * A
    assert np.max(np.abs(WA - WA.T)) <= 1e-8 * np.max(np.abs(WA))


def test_disjoint_patches(setup):
    g, q1, _, _ = setup
    gd, gn = build_patch(g, {"face": "x0"}), build_patch(g, {"face": "x1"})
    assert not set(gd.node_ids) & set(gn.node_ids)
    A = assemble_partial_dtn(q1, 1.5, gd, gn)
    assert A.entries.shape == (gn.size, gd.size)


@given(st.floats(-10, 10))
def test_columns_linear(alpha):
    g = make_grid(8)
    q = Potential.from_function(g, bump(g.center, 0.3, 1.0))
    gd, gn = build_patch(g, {"face": "y0"}), build_patch(g, {"face": "z1"})
    op = DtNOperator(q, 1.0, gd, gn)
    f = np.cos(np.arange(gd.size))
    assert np.allclose(op.apply(alpha * f), alpha * op.apply(f), rtol=1e-12, atol=1e-10)


def test_dense_matches_operator(setup):
    g, q1, _, _ = setup
    gd, gn = build_patch(g, {"face": "x0"}), build_patch(g, {"face": "y1"})
    A = assemble_partial_dtn(q1, 1.5, gd, gn)
    f = np.sin(np.arange(gd.size))
    assert np.allclose(A.apply(f), DtNOperator(q1, 1.5, gd, gn).apply(f), rtol=1e-10, atol=1e-10)


def test_identical_maps_zero_distance(setup):
    g, q1, _, _ = setup
    gd, gn = build_patch(g, {"face": "x0"}), build_patch(g, {"face": "x1"})
    A = assemble_partial_dtn(q1, 1.5, gd, gn)
    assert dtn_distance(A, A) == 0.0
    op = DtNOperator(q1, 1.5, gd, gn)
    assert dtn_distance_operator(DtNDifference(op, op)) == 0.0


def test_distance_linear_in_perturbation():
    g = make_grid(10)
    base = bump(g.center, 0.3, 1.0)
    extra = bump(g.center, 0.2, 1.0)
    gd, gn = build_patch(g, {"face": "x0"}), build_patch(g, {"face": "x1"})
    A = assemble_partial_dtn(Potential.from_function(g, base), 1.5, gd, gn)
    deltas = []
    for eps in (1e-3, 1e-2, 1e-1):
        q2 = Potential.from_function(g, lambda x, y, z, e=eps: base(x, y, z) + e * extra(x, y, z))
        deltas.append(dtn_distance(A, assemble_partial_dtn(q2, 1.5, gd, gn)))
    assert deltas[0] < deltas[1] < deltas[2]
    assert deltas[1] / deltas[0] == pytest.approx(10.0, rel=0.2)


def test_distance_scaling_and_metric(setup):
    g, q1, q2, _ = setup
    gd, gn = build_patch(g, {"face": "x0"}), build_patch(g, {"face": "x1"})
    A = assemble_partial_dtn(q1, 1.5, gd, gn)
    B = assemble_partial_dtn(q2, 1.5, gd, gn)
    C = assemble_partial_dtn(Potential.zeros(g), 1.5, gd, gn)
    twice = DtNMatrix(A.entries + (A.entries - B.entries), 1.5, gd, gn)
    d = dtn_distance(A, B)
    assert dtn_distance(twice, B) == pytest.approx(2 * d, rel=1e-12)
    assert dtn_distance(B, A) == pytest.approx(d, rel=1e-12)
    assert dtn_distance(A, C) <= dtn_distance(A, B) + dtn_distance(B, C) + 1e-12


def test_matrix_free_distance_matches_dense(setup):
    g, q1, q2, _ = setup
    for gd, gn in ((build_patch(g, "full"), build_patch(g, "full")),
                   (build_patch(g, {"face": "x0"}), build_patch(g, {"face": "z1"}))):
        dense = dtn_distance(assemble_partial_dtn(q1, 1.5, gd, gn), assemble_partial_dtn(q2, 1.5, gd, gn))
        mf = dtn_distance_operator(DtNDifference(DtNOperator(q1, 1.5, gd, gn), DtNOperator(q2, 1.5, gd, gn)))
        assert mf == pytest.approx(dense, rel=1e-8)


def test_mismatched_maps_rejected(setup):
    g, q1, q2, _ = setup
    A = assemble_partial_dtn(q1, 1.5, build_patch(g, {"face": "x0"}), build_patch(g, {"face": "x1"}))
    B = assemble_partial_dtn(q2, 1.5, build_patch(g, {"face": "y0"}), build_patch(g, {"face": "x1"}))
    C = assemble_partial_dtn(q2, 1.6, build_patch(g, {"face": "x0"}), build_patch(g, {"face": "x1"}))
    with pytest.raises(ConfigError):
        dtn_distance(A, B)
    with pytest.raises(ConfigError):
        dtn_distance(A, C)


def test_reciprocity_exact_for_discrete_solutions(setup):
    g, q1, q2, _ = setup
    full = build_patch(g, "full")
    k = 1.5
    A = assemble_partial_dtn(q1, k, full, full).entries
    B = assemble_partial_dtn(q2, k, full, full).entries
    rng = np.random.default_rng(8)
    f1, f2 = rng.standard_normal((2, full.size))
    u1 = get_solver(q1, k).solve_dirichlet(f1)
    u2 = get_solver(q2, k).solve_dirichlet(f2)
    lhs = np.sum(g.surface_weights * f1 * ((A - B) @ f2))
    rhs = np.sum(g.volume_weights.ravel() * (q1.values - q2.values).ravel().real * u1 * u2)
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_cache_roundtrip_identical(setup, tmp_path):
    g, q1, q2, _ = setup
    gd, gn = build_patch(g, {"face": "x0"}), build_patch(g, {"face": "x1"})
    cache = Cache(tmp_path)
    A1 = assemble_partial_dtn(q1, 1.5, gd, gn, cache=cache)
    A2 = assemble_partial_dtn(q1, 1.5, gd, gn, cache=cache)
    assert A1.meta["cache"] == "miss" and A2.meta["cache"] == "hit"
    assert np.array_equal(A1.entries, A2.entries)
    B = assemble_partial_dtn(q2, 1.5, gd, gn)
    assert dtn_distance(A1, B) == dtn_distance(A2, B)


def test_save_load(setup, tmp_path):
    g, q1, _, _ = setup
    gd, gn = build_patch(g, {"face": "x0"}), build_patch(g, {"face": "x1"})
    A = assemble_partial_dtn(q1, 1.5, gd, gn)
    A.save(tmp_path / "a.bin")
    B = DtNMatrix.load(tmp_path / "a.bin", g)
    assert np.array_equal(A.entries, B.entries) and B.k == 1.5
    assert B.gd.same_nodes(gd) and B.gn.same_nodes(gn)
