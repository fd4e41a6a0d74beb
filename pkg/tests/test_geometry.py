import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellcrowd.geometry import (BRUTE_MAX, HEX_PACKING, Disk, Domain, GeometryError, Obstacle,
                                PeriodicSquare, WalledSquare, boundary_gaps, boundary_table,
                                density, displacement, min_gaps, n_for_density, neighbor_pairs,
                                pair_gap, pair_table)

from oracles import brute_pairs

PER = Domain(PeriodicSquare(200.0))
SQ = Domain(WalledSquare(200.0))


def test_displacement_examples():
    np.testing.assert_allclose(displacement(PER, (10, 10), (190, 10)), (-20, 0))
    np.testing.assert_allclose(displacement(SQ, (10, 10), (190, 10)), (180, 0))
    np.testing.assert_allclose(displacement(PER, (0, 0), (100, 0)), (100, 0))


def test_pair_gap_examples():
    g, n = pair_gap(SQ, (0, 0), (15, 0), 7.5)
    assert g == pytest.approx(0.0)
    np.testing.assert_allclose(n, (-1, 0))
    g, n = pair_gap(SQ, (0, 0), (20, 0), 7.5)
    assert g == pytest.approx(5.0)
    g, n = pair_gap(PER, (1, 0), (199, 0), 7.5)
    assert g == pytest.approx(-13.0)
    np.testing.assert_allclose(n, (1, 0))


def test_coincident_centers_rejected():
    with pytest.raises(GeometryError):
        pair_gap(SQ, (5, 5), (5, 5), 7.5)


def test_boundary_gap_examples():
    (g, n), = boundary_gaps(Domain(Disk(113.0)), (100, 0), 7.5)
    assert g == pytest.approx(5.5)
    np.testing.assert_allclose(n, (-1, 0))
    g, n = boundary_gaps(SQ, (10, 100), 7.5)[0]
    assert g == pytest.approx(2.5)
    np.testing.assert_allclose(n, (1, 0))
    dom = Domain(WalledSquare(200.0), (Obstacle((100, 100), 7.5),))
    g, n = boundary_gaps(dom, (120, 100), 7.5)[-1]
    assert g == pytest.approx(5.0)
    np.testing.assert_allclose(n, (1, 0))
    assert boundary_gaps(PER, (3, 3), 7.5) == []


def test_disk_center_has_no_normal():
    with pytest.raises(GeometryError):
        boundary_gaps(Domain(Disk(50.0)), (0, 0), 7.5)


def test_invalid_domains():
    with pytest.raises(GeometryError):
        Domain(PeriodicSquare(200.0), (Obstacle((50, 50), 7.5),))
    with pytest.raises(GeometryError):
        Domain(WalledSquare(200.0), (Obstacle((3, 50), 7.5),))
    with pytest.raises(GeometryError):
        WalledSquare(-1.0)


def test_neighbor_pairs_collinear():
    X = np.array([[0.0, 50], [10, 50], [30, 50]])
    assert neighbor_pairs(X, 19, SQ).tolist() == [[0, 1]]
    assert neighbor_pairs(X, 21, SQ).tolist() == [[0, 1], [1, 2]]


@pytest.mark.parametrize("n", [100, BRUTE_MAX + 150])
@pytest.mark.parametrize("dom", [SQ, PER], ids=["walled", "periodic"])
def test_neighbor_pairs_match_brute_force(n, dom):
    X = np.random.default_rng(n).uniform(0, 200, (n, 2))
    L = 200.0 if dom.periodic else None
    assert [tuple(p) for p in neighbor_pairs(X, 19.0, dom)] == brute_pairs(X, 19.0, L)


def test_neighbor_pairs_tiny_periodic_box():
    dom = Domain(PeriodicSquare(40.0))
    X = np.random.default_rng(3).uniform(0, 40, (30, 2))
    assert [tuple(p) for p in neighbor_pairs(X, 19.0, dom)] == brute_pairs(X, 19.0, 40.0)


def test_pair_table_accepts_superset():
    X = np.random.default_rng(1).uniform(0, 200, (80, 2))
    full = pair_table(SQ, X, None, 60.0)
    sub = pair_table(SQ, X, full, 20.0)
    direct = pair_table(SQ, X, None, 20.0)
    assert np.array_equal(sub.i, direct.i) and np.array_equal(sub.j, direct.j)
    np.testing.assert_allclose(sub.r, direct.r)


def test_density_examples():
    assert density(160, 7.5, SQ) == pytest.approx(0.707, abs=5e-4)
    assert density(190, 7.5, SQ) == pytest.approx(0.839, abs=5e-4)
    assert HEX_PACKING == pytest.approx(0.9069, abs=1e-4)
    assert n_for_density(0.707, 7.5, SQ) == 160


def test_density_excludes_obstacles():
    dom = Domain(WalledSquare(200.0), tuple(Obstacle(c, 7.5) for c in
                                            [(30, 100), (170, 100), (100, 30), (100, 170)]))
    assert density(180, 7.5, dom) == pytest.approx(0.810, abs=5e-4)


def test_min_gaps():
    X = np.array([[20.0, 20.0], [36.0, 20.0]])
    p, b = min_gaps(SQ, X, 7.5)
    assert p == pytest.approx(1.0)
    assert b == pytest.approx(12.5)
    assert min_gaps(PER, np.array([[10.0, 10.0], [100.0, 100.0]]), 7.5) == (math.inf, math.inf)


def _fd_grad(f, x, h=1e-6):
    g = np.zeros(2)
    for a in range(2):
        e = np.zeros(2)
        e[a] = h
        g[a] = (f(x + e) - f(x - e)) / (2 * h)
    return g


coord = st.floats(20.0, 180.0)


@settings(max_examples=60, deadline=None)
@given(coord, coord, coord, coord)
def test_pair_gap_gradient_matches_finite_differences(x1, y1, x2, y2):
    xi, xj = np.array([x1, y1]), np.array([x2, y2])
    if np.hypot(*(xi - xj)) < 1.0:
        return
    for dom in (SQ, PER):
        _, n = pair_gap(dom, xi, xj, 7.5)
        fd = _fd_grad(lambda x: pair_gap(dom, x, xj, 7.5)[0], xi)
        np.testing.assert_allclose(n, fd, atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(st.floats(-90, 90), st.floats(-90, 90))
def test_boundary_gradients_match_finite_differences(x, y):
    dom = Domain(Disk(113.0), (Obstacle((40.0, 40.0), 7.5),))
    xi = np.array([x, y])
    if min(np.hypot(x, y), np.hypot(x - 40, y - 40)) < 1.0:
        return
    for k, (_, n) in enumerate(boundary_gaps(dom, xi, 7.5)):
        fd = _fd_grad(lambda z: boundary_gaps(dom, z, 7.5)[k][0], xi)
        np.testing.assert_allclose(n, fd, atol=1e-5)
        assert np.hypot(*n) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 200), st.floats(0, 200)), min_size=2, max_size=40))
def test_pair_gap_symmetric_and_periodic_bounded(points):
    X = np.array(points)
    for a in range(len(X) - 1):
        d = displacement(PER, X[a], X[a + 1])
        assert np.all(np.abs(d) <= 100.0 + 1e-9)
        if np.hypot(*d) > 0:
            g1, n1 = pair_gap(PER, X[a], X[a + 1], 7.5)
            g2, n2 = pair_gap(PER, X[a + 1], X[a], 7.5)
            assert g1 == pytest.approx(g2)
            np.testing.assert_allclose(n1, -n2, atol=1e-12)


def test_boundary_table_matches_scalar_queries():
    dom = Domain(WalledSquare(200.0), (Obstacle((100, 100), 7.5),))
    X = np.random.default_rng(5).uniform(8, 192, (30, 2))
    cell, ident, is_obs, gap, normal = boundary_table(dom, X, 7.5)
    for k in range(len(cell)):
        ref = boundary_gaps(dom, X[cell[k]], 7.5)
        g, n = ref[4 + ident[k]] if is_obs[k] else ref[ident[k]]
        assert gap[k] == pytest.approx(g)
        np.testing.assert_allclose(normal[k], n)
