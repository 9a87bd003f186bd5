import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import subtriangle_centroids
from hmmfluct.mesh import build_mesh, triangle_area
from hmmfluct.quadrature import (
    DUNAVANT6_BARY,
    DUNAVANT6_WEIGHTS,
    GAUSS3_BARY,
    GAUSS3_WEIGHTS,
    PointLattice,
    centroid_subdivision,
    duffy_rule,
    pair_matrix,
    patch_rule,
    subdivision_count,
)

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def monomial_integral(a, b):
    """int over the reference triangle of x^a y^b."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def rule_integral(bary, weights, a, b):
    pts = bary @ REF
    return 0.5 * np.sum(weights * pts[:, 0] ** a * pts[:, 1] ** b)


@pytest.mark.parametrize("bary,weights,degree", [
    (GAUSS3_BARY, GAUSS3_WEIGHTS, 2),
    (DUNAVANT6_BARY, DUNAVANT6_WEIGHTS, 4),
    (*duffy_rule(4), 6),
])
def test_rules_exact_to_degree(bary, weights, degree):
    assert np.isclose(weights.sum(), 1.0)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            assert np.isclose(rule_integral(bary, weights, a, b), monomial_integral(a, b), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 5, 16])
def test_centroid_subdivision_matches_enumeration(n):
    bary = centroid_subdivision(n)
    assert bary.shape == (n * n, 3)
    ours = np.array(sorted(map(tuple, np.round(bary @ REF, 12))))
    ref = np.array(sorted(map(tuple, np.round(subtriangle_centroids(REF, n), 12))))
    assert np.allclose(ours, ref)


def test_centroid_rule_second_order():
    errs = []
    for n in (8, 16, 32):
        w = np.full(n * n, 1.0 / (n * n))
        errs.append(abs(rule_integral(centroid_subdivision(n), w, 2, 2) - monomial_integral(2, 2)))
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


def test_subdivision_count():
    assert subdivision_count(1 / 16, 2.0**-9, n_q=4) == 128
    assert subdivision_count(1 / 16, 1 / 16, n_q=4) == 4
    assert subdivision_count(1 / 16, 1 / 16, n_q=1, min_subdivisions=4) == 4
    assert subdivision_count(0.1, 0.03, n_q=4) == math.ceil(0.4 / 0.03)
    assert subdivision_count(0.1, None) == 4


@pytest.mark.parametrize("r", [1.0, 0.5, 0.25])
def test_patch_rule_weights_and_location(r):
    mesh = build_mesh(4)
    rule = patch_rule(mesh, r, 6)
    for o in (0, 1):
        e = rule.element_ids(o)[3]
        assert np.isclose(rule.weight * rule.points_per_element, r * r * mesh.element_area)
        pts = rule.physical_points(o)[3]
        elem, lam = mesh.locate(pts)
        assert np.all(elem == e)
        # every point sits inside the shrunken patch: parent barycentrics >= (1 - r) / 3
        assert np.all(rule.bary[o] >= (1 - r) / 3 - 1e-12)
        assert np.allclose(lam, rule.bary[o])
        assert np.isclose(rule.pair_weights[o][:, [0, 3, 5]].sum() + 2 * rule.pair_weights[o][:, [1, 2, 4]].sum(),
                          rule.weight * rule.points_per_element)
        assert rule.lattices[o] is not None and len(rule.lattices[o]) == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 5))
def test_lattice_block_sums(seed, cut_x, cut_y):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(2, 6, 7))
    lat = PointLattice([0.0, 0.0], 1.0, w)
    bx = np.array([0, cut_x, 6])
    by = np.array([0, cut_y, 7])
    sums = lat.block_sums(bx, by)
    for a in range(2):
        for b in range(2):
            assert np.allclose(sums[:, a, b], w[:, bx[a]:bx[a + 1], by[b]:by[b + 1]].sum(axis=(1, 2)))


def test_pair_matrix_symmetric():
    m = np.arange(6.0)
    X = pair_matrix(m)
    assert np.allclose(X, X.T)
    assert X[0, 0] == 0 and X[0, 1] == 1 and X[2, 1] == 4 and X[2, 2] == 5
