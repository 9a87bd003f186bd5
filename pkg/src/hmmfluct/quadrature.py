"""Quadrature rules on triangles and the patch subdivision rule.

Potential terms inside a patch are integrated with a centroid rule on a
uniform subdivision of the patch into ``n*n`` congruent triangles.  On the
criss-cross mesh these centroids fall on two axis-aligned square lattices per
element orientation, which :class:`PointLattice` records so that integrals of
piecewise-constant fields reduce to block sums of a summed-area table.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from .mesh import LOWER, UPPER, triangle_area

# unordered local vertex pairs, the column order of all moment arrays
PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

# interior 3-point rule, exact for quadratics; barycentric points, weights sum to 1
GAUSS3_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
GAUSS3_WEIGHTS = np.full(3, 1 / 3)

# 6-point degree-4 rule
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
DUNAVANT6_BARY = np.array(
    [
        [1 - 2 * _A, _A, _A],
        [_A, 1 - 2 * _A, _A],
        [_A, _A, 1 - 2 * _A],
        [1 - 2 * _B, _B, _B],
        [_B, 1 - 2 * _B, _B],
        [_B, _B, 1 - 2 * _B],
    ]
)
DUNAVANT6_WEIGHTS = np.array([_WA] * 3 + [_WB] * 3)


def duffy_rule(order):
    """Collapsed Gauss-Legendre rule on the reference triangle.

    Returns barycentric points and weights summing to 1; exact for
    polynomials of degree ``2*order - 2``.
    """
    t, w = roots_legendre(order)
    t, w = 0.5 * (t + 1), 0.5 * w
    u, v = np.meshgrid(t, t, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    x = u.ravel()
    y = (v * (1 - u)).ravel()
    weights = 2.0 * (wu * wv * (1 - u)).ravel()
    bary = np.stack([1 - x - y, x, y], axis=1)
    return bary, weights


def map_points(vertices, bary):
    """Physical points from barycentric coordinates; ``vertices`` is (..., 3, 2)."""
    return np.einsum("pm,...mk->...pk", bary, vertices)


def element_points(mesh, bary):
    """Points of a barycentric rule mapped onto every element, shape (E, P, 2)."""
    return map_points(mesh.coords[mesh.elements], bary)


def subdivision_count(delta, eps, n_q=4, min_subdivisions=4):
    """Subdivisions per patch edge so the sub-lattice spacing is at most eps/n_q."""
    if eps is None or eps <= 0:
        return int(min_subdivisions)
    return max(int(min_subdivisions), int(math.ceil(delta * n_q / eps - 1e-9)))


def centroid_subdivision(n):
    """Barycentric centroids of the ``n*n`` sub-triangles of a uniform subdivision."""
    a, b = np.nonzero(np.add.outer(np.arange(n), np.arange(n)) <= n - 1)
    c, d = np.nonzero(np.add.outer(np.arange(n - 1), np.arange(n - 1)) <= n - 2)
    uv = np.concatenate([np.stack([a + 1 / 3, b + 1 / 3], 1), np.stack([c + 2 / 3, d + 2 / 3], 1)]) / n
    return np.stack([1 - uv[:, 0] - uv[:, 1], uv[:, 0], uv[:, 1]], axis=1)


class PointLattice:
    """Weighted points lying on ``offset + spacing * (a, b)`` for integer a, b.

    Only the summed-area table of the (k, na, nb) weight array is kept.
    """

    def __init__(self, offset, spacing, weights):
        self.offset = np.asarray(offset, dtype=float)
        self.spacing = float(spacing)
        k, na, nb = weights.shape
        self.shape = (na, nb)
        sat = np.zeros((k, na + 1, nb + 1))
        np.cumsum(weights, axis=1, out=sat[:, 1:, 1:])
        np.cumsum(sat[:, 1:, 1:], axis=2, out=sat[:, 1:, 1:])
        self.sat = sat

    def axis_cells(self, axis, cell, shift):
        """Cell index of every lattice column along ``axis`` and the run boundaries."""
        n = self.shape[axis]
        t = np.floor((self.offset[axis] + self.spacing * np.arange(n)) / cell + shift).astype(np.int64)
        starts = np.flatnonzero(np.diff(t)) + 1
        bounds = np.concatenate([[0], starts, [n]])
        return t[bounds[:-1]], bounds

    def block_sums(self, bx, by):
        S = self.sat
        return (
            S[:, bx[1:, None], by[None, 1:]]
            - S[:, bx[:-1, None], by[None, 1:]]
            - S[:, bx[1:, None], by[None, :-1]]
            + S[:, bx[:-1, None], by[None, :-1]]
        )


def snap_to_lattices(points, values, spacing, groups):
    """Group points into axis-aligned lattices of the given spacing.

    ``groups`` labels each point; every label must form one lattice.
    ``values`` is (P, k).  Returns a list of :class:`PointLattice` or ``None``
    if some group is not lattice-aligned.
    """
    lattices = []
    for g in np.unique(groups):
        sel = groups == g
        pts, vals = points[sel], values[sel]
        offset = pts.min(axis=0)
        idx = np.rint((pts - offset) / spacing).astype(np.int64)
        if not np.allclose(offset + spacing * idx, pts, rtol=0, atol=1e-12 * max(1.0, spacing)):
            return None
        na, nb = idx.max(axis=0) + 1
        w = np.zeros((vals.shape[1], na, nb))
        w[:, idx[:, 0], idx[:, 1]] = vals.T
        lattices.append(PointLattice(offset, spacing, w))
    return lattices


@dataclass
class PatchRule:
    """Centroid rule on every patch of a mesh, shared by both element orientations.

    ``local_points[o]`` are points relative to the cell corner of an element
    of orientation ``o``; ``bary[o]`` are the parent-element barycentric
    coordinates of those points; every point carries weight ``weight``.
    """

    mesh: object
    ratio: float
    n: int
    local_points: dict
    bary: dict
    weight: float
    pair_weights: dict  # o -> (P, 6) weight * lambda_m * lambda_n
    lattices: dict  # o -> list of PointLattice or None

    @property
    def points_per_element(self):
        return self.n * self.n

    def element_ids(self, o):
        return np.flatnonzero(self.mesh.orientation == o)

    def corners(self, o):
        return self.mesh.cells[self.element_ids(o)] * self.mesh.h

    def physical_points(self, o):
        """(E_o, P, 2) points of every element of orientation ``o``."""
        return self.corners(o)[:, None, :] + self.local_points[o][None, :, :]


def patch_rule(mesh, r, n):
    """Centroid rule with ``n`` subdivisions per edge of every patch ``K_delta``."""
    sub = centroid_subdivision(n)
    groups = np.array([0] * (n * (n + 1) // 2) + [1] * (n * (n - 1) // 2))
    h = mesh.h
    local_points, bary, pair_weights, lattices = {}, {}, {}, {}
    weight = None
    for o in (LOWER, UPPER):
        e = int(np.flatnonzero(mesh.orientation == o)[0])
        verts = mesh.element_vertices(e)
        corner = mesh.cells[e] * h
        b = verts.mean(axis=0)
        pverts = b + r * (verts - b)
        pts = sub @ pverts
        # barycentric coordinates of the patch points in the parent element
        lam = (1 - r) / 3 + r * sub
        weight = triangle_area(pverts) / (n * n)
        pw = np.stack([weight * lam[:, m] * lam[:, k] for m, k in PAIRS], axis=1)
        local_points[o] = pts - corner
        bary[o] = lam
        pair_weights[o] = pw
        lattices[o] = snap_to_lattices(local_points[o], pw, r * h / n, groups)
    return PatchRule(mesh, float(r), int(n), local_points, bary, weight, pair_weights, lattices)


def pair_matrix(moments):
    """Expand (..., 6) pair moments to symmetric (..., 3, 3) matrices."""
    out = np.empty(moments.shape[:-1] + (3, 3))
    for c, (m, k) in enumerate(PAIRS):
        out[..., m, k] = moments[..., c]
        out[..., k, m] = moments[..., c]
    return out
