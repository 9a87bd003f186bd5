"""Double integrals of g(x) g(y) |x - y|^-alpha over the unit square.

``g`` is replaced by its averages on an n x n grid of square cells of side H.
The cell-pair interaction then reduces to

    H^(4 - alpha) * t(c - c'),  t(k) = int_[-1,1]^2 (1-|z1|)(1-|z2|) |k + z|^-alpha dz,

which is tabulated exactly for small offsets and by its two-term expansion
for the rest, and the sum over cell pairs is a convolution done with FFTs.
"""

import math
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import roots_legendre

NEAR_RANGE = 8


def _triangle_fan(c, pa, pb, sx, sy, alpha, nodes, weights):
    """Signed integral over triangle (c, pa, pb) of (1 - sx z1)(1 - sy z2) |z - c|^-alpha."""
    va, vb = pa - c, pb - c
    cross = va[0] * vb[1] - va[1] * vb[0]
    if abs(cross) < 1e-14:
        return 0.0
    th_a = math.atan2(va[1], va[0])
    span = math.atan2(cross, va @ vb)
    theta = th_a + 0.5 * span * (nodes + 1.0)
    u1, u2 = np.cos(theta), np.sin(theta)
    e = pb - pa
    R = (va[0] * e[1] - va[1] * e[0]) / (u1 * e[1] - u2 * e[0])
    A = 1.0 - sx * c[0]
    B = 1.0 - sy * c[1]
    c0 = A * B
    c1 = -(A * sy * u2 + B * sx * u1)
    c2 = sx * sy * u1 * u2
    radial = (
        c0 * R ** (2 - alpha) / (2 - alpha)
        + c1 * R ** (3 - alpha) / (3 - alpha)
        + c2 * R ** (4 - alpha) / (4 - alpha)
    )
    return 0.5 * span * float(weights @ radial)


def tent_integral(k, alpha, n_theta=64):
    """t(k) by polar fans around the singular point, one per quadrant edge."""
    c = -np.asarray(k, dtype=float)
    nodes, weights = roots_legendre(n_theta)
    total = 0.0
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            xs = sorted((0.0, sx))
            ys = sorted((0.0, sy))
            corners = [
                np.array([xs[0], ys[0]]),
                np.array([xs[1], ys[0]]),
                np.array([xs[1], ys[1]]),
                np.array([xs[0], ys[1]]),
            ]
            for a in range(4):
                total += _triangle_fan(c, corners[a], corners[(a + 1) % 4], sx, sy, alpha, nodes, weights)
    return total


def tent_far_field(k_norm, alpha):
    """Two-term expansion of t(k) for large |k|."""
    k_norm = np.asarray(k_norm, dtype=float)
    return k_norm ** (-alpha) * (1.0 + alpha * alpha / (12.0 * k_norm**2))


@lru_cache(maxsize=16)
def _near_table(alpha, near=NEAR_RANGE, n_theta=64):
    size = 2 * near + 1
    table = np.empty((size, size))
    for a in range(size):
        for b in range(size):
            table[a, b] = tent_integral((a - near, b - near), alpha, n_theta)
    table.setflags(write=False)
    return table


def offset_kernel(n, alpha, near=NEAR_RANGE):
    """t(k) on all offsets k in [-(n-1), n-1]^2, centred at index n-1."""
    k = np.arange(-(n - 1), n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    with np.errstate(divide="ignore"):
        T = tent_far_field(np.hypot(kx, ky), alpha)
    w = min(near, n - 1)
    table = _near_table(float(alpha), near)
    T[n - 1 - w : n + w, n - 1 - w : n + w] = table[near - w : near + w + 1, near - w : near + w + 1]
    return T


def double_integral_from_averages(avg, alpha):
    """Double integral for a function given by its cell averages on the unit square."""
    avg = np.asarray(avg, dtype=float)
    n = avg.shape[0]
    H = 1.0 / n
    T = offset_kernel(n, alpha)
    conv = fftconvolve(avg, T, mode="full")[n - 1 : 2 * n - 1, n - 1 : 2 * n - 1]
    return float(H ** (4 - alpha) * np.sum(avg * conv))


def cell_averages(func, n, sub=4):
    """Averages of ``func`` over the n x n grid cells by a sub x sub midpoint rule."""
    t = (np.arange(n * sub) + 0.5) / (n * sub)
    xx, yy = np.meshgrid(t, t, indexing="ij")
    vals = func(np.stack([xx, yy], axis=-1))
    return vals.reshape(n, sub, n, sub).mean(axis=(1, 3))


def triangle_cell_averages(func, n):
    """Cell averages from the 3-point rule on the two diagonal halves of each cell.

    Exact when ``func`` is quadratic on every half cell, which holds for
    piecewise-quadratic functions on a mesh the grid refines.
    """
    t = np.arange(n) / n
    cx, cy = np.meshgrid(t, t, indexing="ij")
    H = 1.0 / n
    # 3-point interior points of the lower (0,0),(1,0),(1,1) and upper (0,0),(1,1),(0,1) halves
    lower = np.array([[1 / 3, 1 / 6], [5 / 6, 1 / 6], [5 / 6, 2 / 3]])
    upper = np.array([[1 / 6, 1 / 3], [1 / 6, 5 / 6], [2 / 3, 5 / 6]])
    total = np.zeros((n, n))
    for local in (lower, upper):
        for px, py in local:
            total += func(np.stack([cx + H * px, cy + H * py], axis=-1))
    return total / 6.0


def hls_integral(func, alpha, n=128, sub=None):
    """Double integral of func(x) func(y) |x - y|^-alpha over the unit square.

    With ``sub=None`` cell averages use the exact half-cell rule, otherwise a
    sub x sub midpoint rule.
    """
    avg = triangle_cell_averages(func, n) if sub is None else cell_averages(func, n, sub)
    return double_integral_from_averages(avg, alpha)


def hls_with_refinement(func, alpha, n=128, sub=None):
    """Value on the 2n-grid, value on the n-grid, and their relative change."""
    coarse = hls_integral(func, alpha, n, sub)
    fine = hls_integral(func, alpha, 2 * n, sub)
    change = abs(fine - coarse) / max(abs(fine), 1e-300)
    return fine, coarse, change
