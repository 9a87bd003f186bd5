import math

import numpy as np
import pytest

from oracles import brute_tent
from hmmfluct.hls import (
    cell_averages,
    double_integral_from_averages,
    hls_integral,
    hls_with_refinement,
    tent_far_field,
    tent_integral,
    triangle_cell_averages,
)

# int over [0,1]^2 x [0,1]^2 of |x - y|^-1
UNIT_SQUARE_ALPHA1 = 4.0 * math.log(1.0 + math.sqrt(2.0)) - 4.0 / 3.0 * (math.sqrt(2.0) - 1.0)


def test_tent_at_origin_closed_form():
    assert math.isclose(tent_integral((0, 0), 1.0), UNIT_SQUARE_ALPHA1, rel_tol=1e-12)
    assert math.isclose(UNIT_SQUARE_ALPHA1, 2.973209598, rel_tol=1e-9)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("k", [(2, 0), (3, 1), (5, 5)])
def test_tent_against_brute_force(alpha, k):
    assert math.isclose(tent_integral(k, alpha), brute_tent(k, alpha), rel_tol=2e-6)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_far_field_expansion_accuracy(alpha):
    for k in [(8, 0), (6, 6), (9, 3)]:
        exact = tent_integral(k, alpha)
        assert abs(tent_far_field(np.hypot(*k), alpha) / exact - 1) < 2e-4


def test_constant_function():
    val = hls_integral(lambda p: np.ones(p.shape[:-1]), 1.0, n=24)
    assert math.isclose(val, UNIT_SQUARE_ALPHA1, rel_tol=1e-6)


def test_piecewise_constant_is_grid_independent():
    rng = np.random.default_rng(0)
    coarse = rng.normal(size=(4, 4))
    a = double_integral_from_averages(coarse, 1.0)
    fine = np.kron(coarse, np.ones((8, 8)))
    b = double_integral_from_averages(fine, 1.0)
    assert math.isclose(a, b, rel_tol=1e-5)


def test_triangle_averages_exact_for_piecewise_quadratic():
    def g(p):
        x, y = p[..., 0], p[..., 1]
        return np.where(y <= x, x * x - 3 * x * y + 2, y * y + x)
    n = 3  # one cell: diagonal halves carry the two quadratics
    avg = triangle_cell_averages(g, 1)
    exact = (1 / 4 - 3 / 8 + 1) + (1 / 4 + 1 / 6)  # lower + upper half integrals
    assert math.isclose(avg[0, 0], exact, rel_tol=1e-12)
    assert triangle_cell_averages(g, n).shape == (n, n)


def test_second_order_cell_averaging():
    def g(p):
        return np.sin(np.pi * p[..., 0]) * np.sin(np.pi * p[..., 1])
    vals = [hls_integral(g, 1.0, n) for n in (16, 32, 64)]
    d = np.diff(vals)
    assert 3.7 < d[0] / d[1] < 4.3
    extrapolated = vals[2] + d[1] / 3
    fine, coarse, change = hls_with_refinement(g, 1.0, n=128)
    assert math.isclose(fine, extrapolated, rel_tol=5e-5)
    assert change < 1e-4
    assert math.isclose(hls_integral(g, 1.0, n=32, sub=4), vals[1], rel_tol=1e-3)
    assert cell_averages(g, 8, sub=2).shape == (8, 8)
