import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stablab.errors import GeometryError
from stablab.geometry import (build_cutoffs, build_neighborhoods, build_patch, gradient_support,
                              make_grid)


def test_node_counts_match_enumeration():
    g = make_grid(8)
    assert g.size == 512
    # independent count: nodes with at least one index on an end plane
    count = sum(1 for i, j, k in itertools.product(range(8), repeat=3)
                if {i, j, k} & {0, 7})
    assert count == 296
    assert g.boundary_ids.size == count
    assert g.interior_ids.size == 6 ** 3


def test_too_small_grid_rejected():
    with pytest.raises(GeometryError):
        make_grid(2)


def test_spacing():
    assert make_grid(32).spacing == pytest.approx(1 / 31, rel=1e-15)


def test_full_surface_weight():
    p = build_patch(make_grid(12), "full")
    assert abs(p.area - 6.0) <= 1e-12
    assert p.is_full


def test_sub_square_area():
    g = make_grid(16)
    p = build_patch(g, {"face": "x0", "rect": [[0, 0.5], [0, 0.5]]})
    assert abs(p.area - 0.25) <= 2 * g.spacing
    x = g.mesh()[0].ravel()[p.node_ids]
    assert np.all(x == 0)


def test_empty_selection_rejected():
    g = make_grid(8)
    with pytest.raises(GeometryError):
        build_patch(g, {"face": "x0", "rect": [[0.51, 0.52], [0.51, 0.52]]})
    with pytest.raises(GeometryError):
        build_patch(g, {"nodes": []})
    with pytest.raises(GeometryError):
        build_patch(g, {"nodes": [int(g.interior_ids[0])]})


@given(st.integers(0, 14), st.integers(1, 15), st.integers(0, 14), st.integers(1, 15),
       st.sampled_from(["x0", "x1", "y0", "y1", "z0", "z1"]))
def test_node_aligned_rect_area_is_exact(i0, di, j0, dj, face):
    g = make_grid(16)
    x = g.axis_coords
    i1, j1 = min(i0 + di, 15), min(j0 + dj, 15)
    if i1 == i0 or j1 == j0:
        return
    p = build_patch(g, {"face": face, "rect": [[x[i0], x[i1]], [x[j0], x[j1]]]})
    assert np.all(p.area_weights > 0)
    assert p.area == pytest.approx((x[i1] - x[i0]) * (x[j1] - x[j0]), rel=1e-12)
    assert p.size == (i1 - i0 + 1) * (j1 - j0 + 1)


def test_face_quadrature_second_order():
    errs = []
    for n in (16, 32):
        g = make_grid(n)
        p = build_patch(g, {"face": "z1"})
        X, Y, _ = g.mesh()
        f = np.exp(X + Y).ravel()[p.node_ids]
        exact = (np.e - 1) ** 2
        errs.append(abs(p.area_weights @ f - exact))
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_neighborhoods_nested():
    g = make_grid(32)
    c = build_neighborhoods(g, (8, 6, 4, 2))
    layers = [c.layer(j) for j in range(4)]
    for outer, inner in zip(layers, layers[1:]):
        assert np.all(outer | ~inner)          # inner ⊂ outer
        assert np.count_nonzero(outer & ~inner) > 0
    assert np.all(layers[-1][g.boundary_mask])


@pytest.mark.parametrize("n, widths", [(32, (4, 4, 3, 2)), (16, (5, 4, 3, 2)), (32, (8, 6, 4, 1))])
def test_bad_chains_rejected(n, widths):
    with pytest.raises(GeometryError):
        build_neighborhoods(make_grid(n), widths)


def test_cutoff_values_and_support():
    g = make_grid(32)
    c = build_neighborhoods(g, (8, 6, 4, 2))
    cut = build_cutoffs(c, 2)
    assert np.all(cut.chi2[c.layer(3)] == 0)
    assert np.all(cut.chi2[~c.layer(2)] == 1)
    assert np.all(cut.chi1[c.layer(1)] == 1)
    assert np.all(cut.chi1[cut.w_sharp_star] == 0)
    assert np.all(cut.chi1[c.gamma_sharp] == 0)
    for chi in (cut.chi1, cut.chi2):
        assert chi.min() == 0 and chi.max() == 1
    # central differences reach one node past the ramp on each side
    grad2 = gradient_support(cut.chi2)
    assert not np.any(grad2 & (g.cell_distance < 2 - 1))
    assert not np.any(grad2 & (g.cell_distance > 4 + 1))


def test_cutoff_transition_too_wide():
    c = build_neighborhoods(make_grid(32), (8, 6, 4, 2))
    with pytest.raises(GeometryError):
        build_cutoffs(c, 5)


def test_grid_key_stable():
    assert make_grid(10).key() == make_grid(10).key()
    assert make_grid(10).key() != make_grid(11).key()
