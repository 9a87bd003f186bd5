"""Patch-averaged P1 assembly in conservative stencil form, and its solver.

The system matrix on interior nodes is stored through three edge arrays and a
zeroth-order array.  ``alpha[s-1, k, l]`` is the entry coupling node ``(k, l)``
with ``d^-_s (k, l)``; it is kept for every edge of the mesh, including edges
that touch the boundary, because the row identity below needs them.  ``d``
holds the patch integrals of the potential against single hat functions and
``diag`` the assembled diagonal.  With zero boundary values

    (A V)_ij = sum_s [alpha_s(d+ ij) (V(d+ ij) - V_ij) - alpha_s(ij) (V_ij - V(d- ij))] + d_ij V_ij

and ``diag = d - sum_s (alpha_s(d+ ij) + alpha_s(ij))``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import AssemblyError, SolverError
from .mesh import DIRECTIONS, d_minus, zero_boundary
from .quadrature import GAUSS3_BARY, GAUSS3_WEIGHTS, PAIRS, element_points, pair_matrix, patch_rule, subdivision_count
from .randfield import mix_seed, sample_field

CHUNK_POINTS = 1 << 21
_OFF_PAIRS = [c for c, (m, n) in enumerate(PAIRS) if m != n]
_STEP_TO_DIR = {v: s for s, v in DIRECTIONS.items()}


@dataclass(frozen=True)
class QuadratureSpec:
    """Potential-term quadrature: ``n_q`` sub-lattice points per correlation length."""

    n_q: int = 4
    min_subdivisions: int = 4
    fast: bool = True

    def subdivisions(self, delta, eps):
        return subdivision_count(delta, eps, self.n_q, self.min_subdivisions)


@dataclass(eq=False)
class HmmSystem:
    mesh: object
    ratio: float
    alpha: np.ndarray  # (3, N+1, N+1)
    diag: np.ndarray  # (N+1, N+1), zero on the boundary
    d: np.ndarray  # (N+1, N+1), zero on the boundary
    F: np.ndarray  # (N+1, N+1), zero on the boundary
    flavor: str  # "random" or "homogenized"
    moments: np.ndarray = field(repr=False, default=None)  # (E, 6) potential pair moments
    rule: object = field(repr=False, default=None)
    potential: object = field(repr=False, default=None)

    @property
    def N(self):
        return self.mesh.N

    @property
    def dim(self):
        return (self.N - 1) ** 2

    def apply(self, V):
        return stencil_apply(self, V)

    def to_dense(self):
        return dense_matrix(self)

    def with_load(self, F):
        return HmmSystem(self.mesh, self.ratio, self.alpha, self.diag, self.d, zero_boundary(F),
                         self.flavor, self.moments, self.rule, self.potential)


def element_stiffness(mesh):
    """(E, 3, 3) element Laplacian matrices |K| grad(phi_m) . grad(phi_n)."""
    g = mesh.element_gradients()
    return mesh.element_area * np.einsum("emk,enk->emn", g, g)


def _edge_layout(mesh):
    """For each element and off-diagonal pair: direction index and upper node (i, j)."""
    ij = np.stack(np.divmod(mesh.elements, mesh.N + 1), axis=-1)  # (E, 3, 2)
    s_idx, ui, uj = [], [], []
    for c in _OFF_PAIRS:
        m, n = PAIRS[c]
        delta = ij[:, n] - ij[:, m]
        flip = (delta[:, 0] < 0) | ((delta[:, 0] == 0) & (delta[:, 1] < 0))
        delta = np.where(flip[:, None], -delta, delta)
        upper = np.where(flip[:, None], ij[:, m], ij[:, n])
        s_idx.append(np.array([_STEP_TO_DIR[tuple(d)] - 1 for d in delta]))
        ui.append(upper[:, 0])
        uj.append(upper[:, 1])
    return np.stack(s_idx, 1), np.stack(ui, 1), np.stack(uj, 1)


def assemble_from_moments(mesh, r, moments, F, flavor, rule=None, potential=None, stiffness=None):
    """Scatter element gradient and potential contributions into stencil arrays.

    ``moments`` holds the six patch integrals of the potential against
    products of local hats; they are scaled by |K| / |K_delta| = r^-2.
    """
    N = mesh.N
    S = element_stiffness(mesh) if stiffness is None else stiffness
    P = pair_matrix(moments / (r * r))
    local = S + P
    s_idx, ui, uj = _edge_layout(mesh)
    alpha = np.zeros((3, N + 1, N + 1))
    for k, c in enumerate(_OFF_PAIRS):
        m, n = PAIRS[c]
        np.add.at(alpha, (s_idx[:, k], ui[:, k], uj[:, k]), local[:, m, n])
    vi, vj = np.divmod(mesh.elements, N + 1)
    diag = np.zeros((N + 1, N + 1))
    d = np.zeros((N + 1, N + 1))
    for m in range(3):
        np.add.at(diag, (vi[:, m], vj[:, m]), local[:, m, m])
        np.add.at(d, (vi[:, m], vj[:, m]), P[:, m, :].sum(axis=1))
    return HmmSystem(mesh, float(r), alpha, zero_boundary(diag), zero_boundary(d), zero_boundary(F),
                     flavor, moments, rule, potential)


def load_vector(mesh, f):
    """<f, phi_ij> for every node with the interior 3-point rule, as an (N+1, N+1) array."""
    if f is None:
        return np.zeros((mesh.N + 1, mesh.N + 1))
    pts = element_points(mesh, GAUSS3_BARY)
    vals = f.at(pts) * mesh.element_area  # (E, 3)
    contrib = np.einsum("ep,p,pm->em", vals, GAUSS3_WEIGHTS, GAUSS3_BARY)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements.ravel(), contrib.ravel())
    return out.reshape(mesh.N + 1, mesh.N + 1)


def _chunks(n_elements, points_per_element):
    step = max(1, CHUNK_POINTS // max(1, points_per_element))
    for start in range(0, n_elements, step):
        yield slice(start, min(start + step, n_elements))


def pointwise_moments(rule, func):
    """Pair moments of ``func`` over every patch by direct point evaluation.

    ``func`` maps an (..., 2) array of points to values.  Also returns the
    smallest value seen.
    """
    mesh = rule.mesh
    out = np.zeros((mesh.n_elements, 6))
    vmin = np.inf
    for o in (0, 1):
        ids = rule.element_ids(o)
        corners = rule.corners(o)
        for sl in _chunks(len(ids), rule.points_per_element):
            pts = corners[sl, None, :] + rule.local_points[o][None]
            vals = func(pts)
            vmin = min(vmin, float(vals.min()))
            out[ids[sl]] = vals @ rule.pair_weights[o]
    return out, vmin


def _aligned(rule, realization):
    ratio = rule.mesh.h / realization.cell_size
    return abs(ratio - round(ratio)) < 1e-9 and all(rule.lattices[o] is not None for o in (0, 1))


def field_moments(rule, realization, fast=True):
    """Pair moments of a field realization and a lower bound of its sampled values.

    The fast route sums lattice weights inside each field cell with a
    summed-area table and gathers one field value per cell.
    """
    mesh = rule.mesh
    if realization.kind == "zero":
        return np.zeros((mesh.n_elements, 6)), 0.0
    if not (fast and _aligned(rule, realization)):
        return pointwise_moments(rule, realization)
    cell = realization.cell_size
    per_h = int(round(mesh.h / cell))
    out = np.zeros((mesh.n_elements, 6))
    vmin = np.inf
    for o in (0, 1):
        ids = rule.element_ids(o)
        base = mesh.cells[ids] * per_h  # cell-lattice index of each element corner
        for lat in rule.lattices[o]:
            tx, bx = lat.axis_cells(0, cell, realization.shift[0])
            ty, by = lat.axis_cells(1, cell, realization.shift[1])
            blocks = lat.block_sums(bx, by)  # (6, nx, ny)
            cx = base[:, 0, None, None] + tx[None, :, None]
            cy = base[:, 1, None, None] + ty[None, None, :]
            vals = realization.cell_values(cx, cy)
            vmin = min(vmin, float(vals.min()))
            out[ids] += np.einsum("exy,kxy->ek", vals, blocks)
    return out, vmin


@dataclass
class PotentialData:
    """Deterministic part of the potential integrated on one patch rule."""

    rule: object
    q0: object
    moments: np.ndarray
    q0_min: float
    stiffness: np.ndarray


def prepare_potential(mesh, q0, r, n):
    rule = patch_rule(mesh, r, n)
    if q0 is None:
        moments, q0_min = np.zeros((mesh.n_elements, 6)), 0.0
    else:
        moments, q0_min = pointwise_moments(rule, q0.at)
    return PotentialData(rule, q0, moments, q0_min, element_stiffness(mesh))


def _total_potential(q0, realization):
    def q(points):
        val = np.zeros(np.shape(points)[:-1]) if q0 is None else q0.at(points)
        if realization is not None:
            val = val + realization(points)
        return val

    return q


def check_positivity(base, realization, field_min):
    """Raise AssemblyError if q0 + q_eps <= 0 at a quadrature point.

    Without a field only q0 >= 0 is required, which keeps the operator coercive.
    """
    if base.q0 is None and realization is None:
        return
    if base.q0_min + (field_min if realization is not None else 0.0) > 0:
        return
    _, vmin = pointwise_moments(base.rule, _total_potential(base.q0, realization))
    if vmin < 0 or (vmin == 0 and realization is not None):
        raise AssemblyError(f"total potential reaches {vmin:.6g} at a quadrature point")


def assemble_random(base, realization, F, fast=True):
    """Random system from precomputed deterministic data and one field sample."""
    fm, fmin = field_moments(base.rule, realization, fast=fast)
    check_positivity(base, realization, fmin)
    return assemble_from_moments(base.rule.mesh, base.rule.ratio, base.moments + fm, F, "random",
                                 base.rule, _total_potential(base.q0, realization), base.stiffness)


def assemble_homogenized(base, F):
    check_positivity(base, None, 0.0)
    return assemble_from_moments(base.rule.mesh, base.rule.ratio, base.moments, F, "homogenized",
                                 base.rule, _total_potential(base.q0, None), base.stiffness)


def assemble(mesh, field, q0, r, quad=QuadratureSpec(), f=None, eps=None):
    """Assemble the patch-averaged system.

    Parameters
    ----------
    mesh : Mesh
    field : FieldRealization or None
        ``None`` gives the homogenized system.
    q0 : callable or None
        Smooth deterministic potential with an ``at(points)`` method.
    r : float
        Patch ratio delta/h in (0, 1].
    quad : QuadratureSpec
    f : callable, optional
        Right-hand side; the load uses the interior 3-point rule on whole elements.
    eps : float, optional
        Correlation length setting the subdivision; defaults to ``field.eps``.

    Returns
    -------
    HmmSystem
    """
    if not 0.0 < r <= 1.0:
        raise ValueError(f"patch ratio must lie in (0, 1], got {r}")
    if eps is None and field is not None and field.kind != "zero":
        eps = field.eps
    n = quad.subdivisions(r * mesh.h, eps)
    base = prepare_potential(mesh, q0, r, n)
    F = load_vector(mesh, f)
    if field is None:
        return assemble_homogenized(base, F)
    return assemble_random(base, field, F, fast=quad.fast)


def _forward(T, s):
    """Array whose (i, j) entry is T at d^+_s (i, j), zero where that leaves the grid."""
    di, dj = DIRECTIONS[s]
    out = np.zeros_like(T)
    out[: T.shape[0] - di, : T.shape[1] - dj] = T[di:, dj:]
    return out


def stencil_apply(sys, V):
    """Matrix-free product in difference form; ``V`` is (N+1, N+1) with zero boundary."""
    V = zero_boundary(V)
    out = sys.d * V
    for s in (1, 2, 3):
        T = sys.alpha[s - 1] * d_minus(V, s)
        out += _forward(T, s) - T
    return zero_boundary(out)


def interior_index(N):
    idx = -np.ones((N + 1, N + 1), dtype=np.int64)
    idx[1:-1, 1:-1] = np.arange((N - 1) ** 2).reshape(N - 1, N - 1)
    return idx


def dense_matrix(sys):
    """Dense interior matrix read row by row from ``diag`` and the edge arrays."""
    N = sys.N
    idx = interior_index(N)
    A = np.zeros((sys.dim, sys.dim))
    for i in range(1, N):
        for j in range(1, N):
            row = idx[i, j]
            A[row, row] = sys.diag[i, j]
            for s, (di, dj) in DIRECTIONS.items():
                k, l = i + di, j + dj
                if idx[k, l] >= 0:
                    A[row, idx[k, l]] = sys.alpha[s - 1, k, l]
                k, l = i - di, j - dj
                if idx[k, l] >= 0:
                    A[row, idx[k, l]] = sys.alpha[s - 1, i, j]
    return A


def to_interior(V):
    return np.asarray(V)[1:-1, 1:-1].ravel()


def from_interior(v, N):
    V = np.zeros((N + 1, N + 1))
    V[1:-1, 1:-1] = np.asarray(v).reshape(N - 1, N - 1)
    return V


def conjugate_gradient(apply, b, x0=None, tol=1e-10, maxiter=None, precond=None):
    """Plain or Jacobi-preconditioned CG on flat vectors.

    Stops when ||r|| <= tol * ||b||.  Raises SolverError with the residual
    history if that is not reached within ``maxiter`` (default 10 * dim)
    iterations.
    """
    b = np.asarray(b, dtype=float)
    maxiter = 10 * b.size if maxiter is None else maxiter
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), [0.0]
    r = b - apply(x)
    z = r if precond is None else precond * r
    p = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / bnorm]
    for _ in range(maxiter):
        if history[-1] <= tol:
            return x, history
        Ap = apply(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("matrix is not positive definite along a search direction", history)
        a = rz / pAp
        x += a * p
        r -= a * Ap
        history.append(np.linalg.norm(r) / bnorm)
        z = r if precond is None else precond * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if history[-1] <= tol:
        return x, history
    raise SolverError(f"CG did not reach {tol:g} in {maxiter} iterations (last {history[-1]:.3e})", history)


def solve(sys, rhs=None, tol=1e-10, x0=None, jacobi=False, return_history=False):
    """Solve ``A U = F`` (or ``A U = rhs``); returns U as an (N+1, N+1) array."""
    N = sys.N
    b = to_interior(sys.F if rhs is None else rhs)

    def apply(v):
        return to_interior(stencil_apply(sys, from_interior(v, N)))

    precond = 1.0 / to_interior(sys.diag) if jacobi else None
    x0v = None if x0 is None else to_interior(x0)
    x, hist = conjugate_gradient(apply, b, x0=x0v, tol=tol, precond=precond)
    U = from_interior(x, N)
    return (U, hist) if return_history else U


def h1_seminorm_sq(mesh, V):
    """|v_h|^2_{H^1} of the P1 interpolant with nodal values V."""
    vals = np.asarray(V).ravel()[mesh.elements]  # (E, 3)
    grad = np.einsum("em,emk->ek", vals, mesh.element_gradients())
    return float(mesh.element_area * (grad**2).sum())


def _independent_d(sys):
    """d_ij recomputed from patch points and global hat evaluation."""
    from .mesh import basis_value

    mesh, rule = sys.mesh, sys.rule
    N = mesh.N
    d = np.zeros((N + 1, N + 1))
    if sys.potential is None:
        return d
    scale = rule.weight / (sys.ratio**2)
    for i in range(1, N):
        for j in range(1, N):
            total = 0.0
            for e in mesh.support(i, j):
                o = int(mesh.orientation[e])
                pts = mesh.cells[e] * mesh.h + rule.local_points[o]
                total += float(np.sum(sys.potential(pts) * basis_value(mesh, (i, j), pts)))
            d[i, j] = scale * total
    return d


def verify_structure(sys):
    """Check symmetry, seven-point sparsity and the conservative row identity.

    Returns a dict of relative residuals; the row identity uses ``d``
    recomputed independently from the potential and global hat functions.
    """
    A = dense_matrix(sys)
    scale = max(np.abs(A).max(), 1e-300)
    sym = float(np.abs(A - A.T).max() / scale)

    N = sys.N
    idx = interior_index(N)
    allowed = np.zeros_like(A, dtype=bool)
    for i in range(1, N):
        for j in range(1, N):
            allowed[idx[i, j], idx[i, j]] = True
            for di, dj in DIRECTIONS.values():
                for sg in (1, -1):
                    k, l = i + sg * di, j + sg * dj
                    if idx[k, l] >= 0:
                        allowed[idx[i, j], idx[k, l]] = True
    outside = int(np.count_nonzero(A[~allowed]))

    d_ind = _independent_d(sys)
    rows = d_ind.copy()
    for s in (1, 2, 3):
        rows -= _forward(sys.alpha[s - 1], s) + sys.alpha[s - 1]
    mask = np.zeros((N + 1, N + 1), dtype=bool)
    mask[1:-1, 1:-1] = True
    dscale = max(np.abs(sys.diag[mask]).max(), 1e-300)
    row_identity = float(np.abs(rows - sys.diag)[mask].max() / dscale)
    d_match = float(np.abs(d_ind - sys.d)[mask].max() / max(np.abs(d_ind[mask]).max(), 1e-300))
    return {
        "symmetry": sym,
        "entries_outside_pattern": outside,
        "row_identity": row_identity,
        "d_consistency": d_match,
        "max_violation": max(sym, row_identity, d_match, float(outside)),
    }


def element_hms_errors(mesh, r, field_mom):
    """Per-element discrepancy bound from the field pair moments."""
    X = pair_matrix(field_mom)
    fro = np.sqrt((X**2).sum(axis=(1, 2)))
    return fro * 24.0 / (r * r * mesh.h**2)


def e_hms_probe(mesh, spec, eps, r, quad=QuadratureSpec(), sample_count=200, base_seed=0):
    """Monte Carlo mean of max_K e_K, the elementwise random-minus-homogenized discrepancy.

    Returns the mean and the per-sample maxima.
    """
    n = quad.subdivisions(r * mesh.h, eps)
    rule = patch_rule(mesh, r, n)
    maxima = np.empty(sample_count)
    for k in range(sample_count):
        field = sample_field(spec, eps, mix_seed(base_seed, k))
        fm, _ = field_moments(rule, field, fast=quad.fast)
        maxima[k] = element_hms_errors(mesh, r, fm).max()
    return float(maxima.mean()), maxima
