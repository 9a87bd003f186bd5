"""Uniform triangulation of the unit square and P1 nodal algebra.

Every grid cell ``[ih, (i+1)h] x [jh, (j+1)h]`` is split along the diagonal
from ``(i, j)`` to ``(i+1, j+1)`` into a *lower* triangle with vertices
``(i,j), (i+1,j), (i+1,j+1)`` and an *upper* triangle with vertices
``(i,j), (i+1,j+1), (i,j+1)``.  Cells are visited row-major in ``(i, j)``
and the lower triangle comes first, so element ``2*(i*N + j)`` is the lower
triangle of cell ``(i, j)``.

Nodal arrays are stored as ``(N+1, N+1)`` arrays indexed ``V[i, j]`` with the
boundary entries held at zero.
"""

import json
from dataclasses import dataclass

import numpy as np

LOWER, UPPER = 0, 1

# offsets of the three local vertices from the cell corner, per orientation
LOCAL_OFFSETS = np.array(
    [
        [[0, 0], [1, 0], [1, 1]],
        [[0, 0], [1, 1], [0, 1]],
    ]
)

# d^+_s steps for the horizontal, vertical and diagonal directions
DIRECTIONS = {1: (1, 0), 2: (0, 1), 3: (1, 1)}


@dataclass(frozen=True, eq=False)
class Mesh:
    N: int
    h: float
    coords: np.ndarray  # (n_nodes, 2), node id = i*(N+1) + j
    elements: np.ndarray  # (2N^2, 3) node ids
    cells: np.ndarray  # (2N^2, 2) cell corner (i, j)
    orientation: np.ndarray  # (2N^2,) LOWER or UPPER
    barycenters: np.ndarray  # (2N^2, 2)

    @property
    def n_nodes(self):
        return (self.N + 1) ** 2

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def element_area(self):
        return 0.5 * self.h * self.h

    def node_id(self, i, j):
        return i * (self.N + 1) + j

    def node_ij(self, node):
        return divmod(int(node), self.N + 1)

    def is_interior(self, i, j):
        return 1 <= i <= self.N - 1 and 1 <= j <= self.N - 1

    def interior_mask(self):
        mask = np.zeros((self.N + 1, self.N + 1), dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask

    def interior_indices(self):
        return [(i, j) for i in range(1, self.N) for j in range(1, self.N)]

    def element_vertices(self, e):
        return self.coords[self.elements[e]]

    def support(self, i, j):
        """Element ids whose closure contains node ``(i, j)``."""
        node = self.node_id(i, j)
        return np.flatnonzero((self.elements == node).any(axis=1))

    def patch(self, e, r):
        return shrink_to_patch(self.element_vertices(e), r, parent=e)

    def locate(self, points):
        """Element id and barycentric coordinates for each point of ``points``."""
        pts = np.asarray(points, dtype=float)
        x, y = pts[..., 0] / self.h, pts[..., 1] / self.h
        i = np.clip(np.floor(x).astype(np.int64), 0, self.N - 1)
        j = np.clip(np.floor(y).astype(np.int64), 0, self.N - 1)
        u, v = x - i, y - j
        upper = v > u
        lam = np.stack(
            [
                np.where(upper, 1.0 - v, 1.0 - u),
                np.where(upper, u, u - v),
                np.where(upper, v - u, v),
            ],
            axis=-1,
        )
        elem = 2 * (i * self.N + j) + upper.astype(np.int64)
        return elem, lam

    def element_gradients(self):
        """Constant gradients of the three local hat functions, shape ``(E, 3, 2)``."""
        xy = self.coords[self.elements]
        B = np.stack([xy[:, 1] - xy[:, 0], xy[:, 2] - xy[:, 0]], axis=-1)
        Binv = np.linalg.inv(B)
        g12 = Binv  # rows are grad(lambda_1), grad(lambda_2)
        g0 = -(g12[:, 0] + g12[:, 1])
        return np.stack([g0, g12[:, 0], g12[:, 1]], axis=1)

    def summary(self):
        return {
            "N": self.N,
            "h": self.h,
            "nodes": self.n_nodes,
            "elements": self.n_elements,
            "interior_nodes": (self.N - 1) ** 2,
        }

    def summary_json(self):
        return json.dumps(self.summary(), sort_keys=True)


@dataclass(frozen=True)
class Patch:
    parent: int
    vertices: np.ndarray
    ratio: float

    @property
    def area(self):
        return triangle_area(self.vertices)

    @property
    def barycenter(self):
        return self.vertices.mean(axis=0)


def build_mesh(N):
    """Uniform triangulation of (0,1)^2 with ``N`` intervals per axis."""
    if int(N) != N or N < 2:
        raise ValueError(f"mesh needs an integer N >= 2, got {N!r}")
    N = int(N)
    h = 1.0 / N
    ii, jj = np.meshgrid(np.arange(N + 1), np.arange(N + 1), indexing="ij")
    coords = np.stack([ii.ravel() * h, jj.ravel() * h], axis=1)

    ci, cj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    cells = np.repeat(np.stack([ci, cj], axis=1), 2, axis=0)
    orientation = np.tile([LOWER, UPPER], N * N)
    offs = LOCAL_OFFSETS[orientation]  # (E, 3, 2)
    vi = cells[:, None, 0] + offs[..., 0]
    vj = cells[:, None, 1] + offs[..., 1]
    elements = vi * (N + 1) + vj
    barycenters = coords[elements].mean(axis=1)
    for arr in (coords, elements, cells, orientation, barycenters):
        arr.setflags(write=False)
    return Mesh(N, h, coords, elements, cells, orientation, barycenters)


def triangle_area(vertices):
    v = np.asarray(vertices, dtype=float)
    d1, d2 = v[1] - v[0], v[2] - v[0]
    return 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])


def shrink_to_patch(vertices, r, parent=-1):
    """Shrink a triangle toward its barycenter by the factor ``r`` in (0, 1]."""
    if not 0.0 < r <= 1.0:
        raise ValueError(f"patch ratio must lie in (0, 1], got {r!r}")
    v = np.asarray(vertices, dtype=float)
    b = v.mean(axis=0)
    return Patch(parent, b + r * (v - b), float(r))


def basis_value(mesh, ij, x):
    """Value of the hat function of node ``ij`` at the point(s) ``x``."""
    i, j = ij
    node = mesh.node_id(i, j)
    elem, lam = mesh.locate(x)
    verts = mesh.elements[elem]  # (..., 3)
    hit = verts == node
    return np.where(hit, lam, 0.0).sum(axis=-1)


def basis_gradient(mesh, ij, e):
    """Gradient of the hat function of node ``ij`` on element ``e``."""
    node = mesh.node_id(*ij)
    local = np.flatnonzero(mesh.elements[e] == node)
    if local.size == 0:
        raise ValueError(f"element {e} is not in the support of node {tuple(ij)}")
    xy = mesh.element_vertices(e)
    B = np.stack([xy[1] - xy[0], xy[2] - xy[0]], axis=-1)
    g = np.linalg.inv(B)
    grads = [-(g[0] + g[1]), g[0], g[1]]
    return grads[int(local[0])]


def neighbor(mesh, ij, s, sign):
    """Apply ``d^sign_s`` to an interior index; ``None`` marks a boundary node."""
    i, j = ij
    if not mesh.is_interior(i, j):
        raise ValueError(f"{tuple(ij)} is not an interior index")
    di, dj = DIRECTIONS[s]
    step = 1 if sign in (1, "+") else -1
    k, l = i + step * di, j + step * dj
    return (k, l) if mesh.is_interior(k, l) else None


def d_minus(V, s):
    """Backward difference ``V_ij - V_{d^-_s ij}`` on the extended index set.

    Entry ``[i, j]`` is defined whenever ``d^-_s (i, j)`` exists; other
    entries are zero.  ``V`` carries zero boundary values.
    """
    di, dj = DIRECTIONS[s]
    out = np.zeros_like(V)
    out[di:, dj:] = V[di:, dj:] - V[: V.shape[0] - di, : V.shape[1] - dj]
    return out


def d_plus(V, s):
    """Forward difference ``V_{d^+_s ij} - V_ij``."""
    di, dj = DIRECTIONS[s]
    out = np.zeros_like(V)
    out[: V.shape[0] - di, : V.shape[1] - dj] = V[di:, dj:] - V[: V.shape[0] - di, : V.shape[1] - dj]
    return out


def zero_boundary(V):
    out = np.array(V, dtype=float, copy=True)
    out[0, :] = out[-1, :] = 0.0
    out[:, 0] = out[:, -1] = 0.0
    return out
